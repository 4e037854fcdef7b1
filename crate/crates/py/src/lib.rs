//! Python bindings: packet framing, modulation, single-packet decoding and
//! the Monte Carlo sweeps.

use std::collections::BTreeMap;

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use lva::config::Config;
use lva::decoder::{DecodeWindow, Detector, ListConfig, Receiver};
use lva::frame::{self, Payload, Symbol, PAYLOAD_BITS};
use lva::gmsk::{make_phase_pulse, ModulationConfig};
use lva::scenario::{observe_transmission, Transmission};
use lva::seed::rng_for;
use lva::sweep::{self, thread_pool, SweepResult};

/// Bits go out as a list of ints; `Vec<u8>` would become `bytes`.
type BitList = Vec<u16>;

fn bit_list(bits: &[u8]) -> BitList {
    bits.iter().map(|&b| u16::from(b)).collect()
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_detector(s: &str) -> PyResult<Detector> {
    s.parse().map_err(value_err)
}

fn parse_window(s: &str) -> PyResult<DecodeWindow> {
    match s {
        "burst" => Ok(DecodeWindow::Burst),
        "slot" => Ok(DecodeWindow::Slot),
        _ => Err(value_err(format!("unknown window {s:?}: expected 'burst' or 'slot'"))),
    }
}

/// An AIS packet built from a 168-bit payload.
#[pyclass(name = "Packet", frozen)]
struct PyPacket {
    tx: Transmission,
}

#[pymethods]
impl PyPacket {
    #[new]
    fn new(payload: Vec<u8>) -> PyResult<Self> {
        let payload = Payload::new(payload).map_err(value_err)?;
        Ok(PyPacket {
            tx: Transmission::new(payload).map_err(value_err)?,
        })
    }

    /// Packet from 42 hex digits, most significant bit first.
    #[staticmethod]
    fn from_hex(hex: &str) -> PyResult<Self> {
        Self::new(frame::hex_to_bits(hex, PAYLOAD_BITS).map_err(value_err)?)
    }

    /// Packet with a random payload that fits the stuffing buffer.
    #[staticmethod]
    #[pyo3(signature = (seed=1))]
    fn random(seed: u64) -> Self {
        PyPacket {
            tx: Transmission::random(&mut rng_for(seed, &[0])),
        }
    }

    #[getter]
    fn payload(&self) -> BitList {
        bit_list(self.tx.payload.bits())
    }

    /// On-air bits, ramp-up through end flag.
    #[getter]
    fn bits(&self) -> BitList {
        bit_list(&self.tx.packet.bits)
    }

    #[getter]
    fn total_len(&self) -> usize {
        self.tx.packet.total_len()
    }

    #[getter]
    fn stuffed_bits(&self) -> usize {
        self.tx.packet.layout.stuffed_bits
    }

    /// NRZI line symbols, starting from level +1.
    #[getter]
    fn symbols(&self) -> Vec<Symbol> {
        self.tx.symbols.clone()
    }

    fn hex(&self) -> String {
        frame::bits_to_hex(&self.tx.packet.bits)
    }

    fn layout(&self) -> String {
        self.tx.packet.dump()
    }

    /// Baseband samples of the packet with the default modulation.
    fn waveform(&self) -> Vec<Complex64> {
        let cfg = ModulationConfig::default();
        self.tx.waveform(&cfg, &make_phase_pulse(&cfg)).samples
    }

    fn __len__(&self) -> usize {
        self.tx.packet.total_len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Packet(payload={}, total_len={})",
            frame::bits_to_hex(self.tx.payload.bits()),
            self.tx.packet.total_len()
        )
    }
}

/// Outcome of one decode.
#[pyclass(name = "DecodeResult", frozen, get_all)]
struct PyDecodeResult {
    sent: BitList,
    decoded: Option<BitList>,
    correct: bool,
    candidates: usize,
    tried: usize,
    /// One-based rank of the first candidate that passed.
    first_success_rank: Option<usize>,
    rejections: BTreeMap<String, usize>,
    report: String,
}

#[pymethods]
impl PyDecodeResult {
    fn __repr__(&self) -> String {
        let rank = self.first_success_rank.map_or("None".to_string(), |r| r.to_string());
        let correct = if self.correct { "True" } else { "False" };
        format!("DecodeResult(correct={correct}, first_success_rank={rank}, tried={})", self.tried)
    }
}

/// Detector with list sizes `paths` (P) and `candidates` (C).
#[pyclass(name = "Receiver", frozen)]
struct PyReceiver {
    rx: Receiver,
}

#[pymethods]
impl PyReceiver {
    #[new]
    #[pyo3(signature = (detector="coherent", paths=1, candidates=1, window="burst"))]
    fn new(detector: &str, paths: usize, candidates: usize, window: &str) -> PyResult<Self> {
        let list = ListConfig::new(paths, candidates).map_err(value_err)?;
        let rx = Receiver::new(ModulationConfig::default(), parse_detector(detector)?, list)
            .map_err(value_err)?
            .with_window(parse_window(window)?);
        Ok(PyReceiver { rx })
    }

    #[getter]
    fn detector(&self) -> String {
        self.rx.detector().to_string()
    }

    #[getter]
    fn paths(&self) -> usize {
        self.rx.list().paths
    }

    #[getter]
    fn candidates(&self) -> usize {
        self.rx.list().candidates
    }

    /// Sends `packet` (random if omitted) through AWGN with a random carrier
    /// phase and decodes it.
    #[pyo3(signature = (ebn0_db, seed=1, packet=None))]
    fn simulate(&self, py: Python<'_>, ebn0_db: f64, seed: u64, packet: Option<&PyPacket>) -> PyDecodeResult {
        let tx = match packet {
            Some(p) => p.tx.clone(),
            None => Transmission::random(&mut rng_for(seed, &[0])),
        };
        py.detach(|| {
            let mut rng = rng_for(seed, &[1]);
            let obs = observe_transmission(tx, self.rx.config(), self.rx.pulse(), ebn0_db, &mut rng);
            let (decoded, report) = match self.rx.decode_packet(&obs.received, &obs.target) {
                Ok(s) => (Some(s.payload), s.report),
                Err(f) => (None, f.report),
            };
            PyDecodeResult {
                sent: bit_list(obs.payload.bits()),
                correct: decoded.as_ref() == Some(&obs.payload),
                decoded: decoded.map(|p| bit_list(p.bits())),
                candidates: report.candidates,
                tried: report.tried,
                first_success_rank: report.first_success.map(|r| r + 1),
                rejections: report.histogram().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                report: report.to_text(),
            }
        })
    }

    /// Text listing of the trellis states and transitions.
    fn trellis_dump(&self) -> String {
        self.rx.trellis().dump()
    }
}

#[pyfunction]
fn compute_fcs(payload: Vec<u8>) -> PyResult<BitList> {
    Ok(bit_list(&frame::compute_fcs(&payload).map_err(value_err)?))
}

#[pyfunction]
fn verify_fcs(message: Vec<u8>) -> bool {
    frame::verify_fcs(&message)
}

#[pyfunction]
fn bit_stuff(bits: Vec<u8>) -> BitList {
    bit_list(&frame::bit_stuff(&bits))
}

#[pyfunction]
fn bit_destuff(bits: Vec<u8>) -> PyResult<BitList> {
    Ok(bit_list(&frame::bit_destuff(&bits).map_err(value_err)?))
}

#[pyfunction]
#[pyo3(signature = (bits, initial_level=1))]
fn nrzi_encode(bits: Vec<u8>, initial_level: Symbol) -> Vec<Symbol> {
    frame::nrzi_encode(&bits, initial_level)
}

#[pyfunction]
#[pyo3(signature = (symbols, initial_level=1))]
fn nrzi_decode(symbols: Vec<Symbol>, initial_level: Symbol) -> BitList {
    bit_list(&frame::nrzi_decode(&symbols, initial_level))
}

/// Payload bits of a candidate starting at the start flag; raises
/// ValueError naming the first failed check.
#[pyfunction]
#[pyo3(signature = (symbols, initial_level=1))]
fn post_process_candidate(symbols: Vec<Symbol>, initial_level: Symbol) -> PyResult<BitList> {
    frame::post_process_candidate(&symbols, initial_level)
        .map(|p| bit_list(p.bits()))
        .map_err(value_err)
}

/// Baseband GMSK samples of `symbols` with the default modulation.
#[pyfunction]
fn modulate(symbols: Vec<Symbol>) -> Vec<Complex64> {
    let cfg = ModulationConfig::default();
    lva::gmsk::modulate(&symbols, &cfg, &make_phase_pulse(&cfg)).samples
}

/// Runs a sweep described by a TOML configuration and returns the CSV.
/// `kind` is "per-sweep", "two-user" or "throughput".
#[pyfunction]
#[pyo3(signature = (kind, config="", workers=None))]
fn run_sweep(py: Python<'_>, kind: &str, config: &str, workers: Option<usize>) -> PyResult<String> {
    let cfg = Config::from_toml_str(config).map_err(value_err)?;
    let kind = kind.to_string();
    let result: Result<SweepResult, String> = py.detach(|| {
        let pool = thread_pool(workers.unwrap_or(cfg.workers));
        let (m, seed) = (&cfg.modulation, cfg.seed);
        match kind.as_str() {
            "per-sweep" => sweep::per_sweep(&cfg.per_sweep, m, seed, &pool, |_| {}).map_err(|e| e.to_string()),
            "two-user" => sweep::two_user_sweep(&cfg.two_user, m, seed, &pool, |_| {}).map_err(|e| e.to_string()),
            "throughput" => {
                sweep::throughput_sweep(&cfg.throughput, m, seed, &pool, |_| {}).map_err(|e| e.to_string())
            }
            other => Err(format!("unknown sweep {other:?}")),
        }
    });
    Ok(result.map_err(value_err)?.to_csv_string(false))
}

/// Quick oracle checks as `(name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (seed=1))]
fn selftest(py: Python<'_>, seed: u64) -> Vec<(String, bool, String)> {
    py.detach(|| {
        lva::selftest::run_all(seed)
            .into_iter()
            .map(|r| (r.name.to_string(), r.passed, r.detail))
            .collect()
    })
}

#[pymodule]
fn ais_lva(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPacket>()?;
    m.add_class::<PyReceiver>()?;
    m.add_class::<PyDecodeResult>()?;
    m.add_function(wrap_pyfunction!(compute_fcs, m)?)?;
    m.add_function(wrap_pyfunction!(verify_fcs, m)?)?;
    m.add_function(wrap_pyfunction!(bit_stuff, m)?)?;
    m.add_function(wrap_pyfunction!(bit_destuff, m)?)?;
    m.add_function(wrap_pyfunction!(nrzi_encode, m)?)?;
    m.add_function(wrap_pyfunction!(nrzi_decode, m)?)?;
    m.add_function(wrap_pyfunction!(post_process_candidate, m)?)?;
    m.add_function(wrap_pyfunction!(modulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
