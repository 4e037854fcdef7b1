//! Monte Carlo sweeps producing CSV result tables.
//!
//! Work units are seeded from `(base seed, unit indices)` and evaluated in
//! fixed-size batches whose results are reduced in index order, so every
//! table is identical for any number of workers.

use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::{PerSweepConfig, ReceiverSpec, ThroughputConfig, TwoUserConfig};
use crate::decoder::{DecoderError, Detector, InitialMetrics, ListConfig, Receiver};
use crate::frame::Payload;
use crate::gmsk::{make_phase_pulse, modulate, ModulationConfig, Waveform};
use crate::scenario::{
    make_two_user_scene, run_aloha_frame, score_frame, single_user_observation, LoadPoint,
    Observation,
};
use crate::seed::rng_for;
use crate::stats::{wilson, ErrorCount, Z95};
use crate::trellis::{build_coherent_trellis, Trellis};

/// Trials evaluated between stopping checks.
const BATCH: u64 = 64;

/// Stream tags keep the seeds of different experiments apart.
const TAG_PER: u64 = 1;
const TAG_TWO_USER: u64 = 2;
const TAG_ALOHA: u64 = 3;
const TAG_MSK: u64 = 4;

pub fn thread_pool(workers: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
}

/// Runs trials `0..max_trials` until every cell has `max_errors` errors
/// (0: never stop early). `trial(i, active)` returns one error flag per
/// cell; entries of inactive cells are ignored.
pub fn count_errors<F>(
    pool: &ThreadPool,
    n_cells: usize,
    max_trials: u64,
    max_errors: u64,
    trial: F,
) -> Vec<ErrorCount>
where
    F: Fn(u64, &[bool]) -> Vec<bool> + Sync,
{
    let mut counts = vec![ErrorCount::default(); n_cells];
    let mut active = vec![true; n_cells];
    let mut next = 0;
    while next < max_trials && active.iter().any(|&a| a) {
        let end = (next + BATCH).min(max_trials);
        let snapshot = active.clone();
        let results: Vec<Vec<bool>> =
            pool.install(|| (next..end).into_par_iter().map(|i| trial(i, &snapshot)).collect());
        for flags in results {
            for (c, &err) in flags.iter().enumerate() {
                if !active[c] {
                    continue;
                }
                counts[c].trials += 1;
                counts[c].errors += err as u64;
                if max_errors > 0 && counts[c].errors >= max_errors {
                    active[c] = false;
                }
            }
        }
        next = end;
    }
    counts
}

/// One PER measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PerRow {
    pub receiver: ReceiverSpec,
    /// `(power delta dB, overlap fraction)` of a two-user scene.
    pub interferer: Option<(f64, f64)>,
    pub ebn0_db: f64,
    pub count: ErrorCount,
    pub wall_time: f64,
}

impl PerRow {
    pub fn per(&self) -> f64 {
        self.count.rate()
    }
}

/// One throughput measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputRow {
    pub receiver: ReceiverSpec,
    pub offered_load: f64,
    pub frames: usize,
    pub slots: u64,
    pub transmitted: u64,
    pub received: u64,
    pub wall_time: f64,
}

impl ThroughputRow {
    pub fn throughput(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.received as f64 / self.slots as f64
        }
    }

    /// Wilson 95% half-width of the per-slot success fraction.
    pub fn half_width(&self) -> f64 {
        wilson(self.received, self.slots, Z95).1
    }

    pub fn per(&self) -> f64 {
        if self.transmitted == 0 {
            0.0
        } else {
            1.0 - self.received as f64 / self.transmitted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepResult {
    Per(Vec<PerRow>),
    Throughput(Vec<ThroughputRow>),
}

fn fmt_f(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

impl SweepResult {
    pub fn per_rows(&self) -> &[PerRow] {
        match self {
            SweepResult::Per(r) => r,
            SweepResult::Throughput(_) => &[],
        }
    }

    pub fn throughput_rows(&self) -> &[ThroughputRow] {
        match self {
            SweepResult::Throughput(r) => r,
            SweepResult::Per(_) => &[],
        }
    }

    /// CSV with a header row. Wall time is only written when `timing` is
    /// set, so that the default output is reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, mut out: W, timing: bool) -> io::Result<()> {
        match self {
            SweepResult::Per(rows) => {
                write!(
                    out,
                    "detector,paths,candidates,power_delta_db,overlap,ebn0_db,packets,errors,per,ci_low,ci_high,ci_half_width"
                )?;
                if timing {
                    write!(out, ",wall_time_s")?;
                }
                writeln!(out)?;
                for r in rows {
                    let (lo, hi) = r.count.interval();
                    let (pd, ov) = match r.interferer {
                        Some((pd, ov)) => (fmt_f(pd), fmt_f(ov)),
                        None => (String::new(), String::new()),
                    };
                    write!(
                        out,
                        "{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
                        r.receiver.detector,
                        r.receiver.paths,
                        r.receiver.candidates,
                        pd,
                        ov,
                        fmt_f(r.ebn0_db),
                        r.count.trials,
                        r.count.errors,
                        r.per(),
                        lo,
                        hi,
                        r.count.half_width()
                    )?;
                    if timing {
                        write!(out, ",{:.3}", r.wall_time)?;
                    }
                    writeln!(out)?;
                }
            }
            SweepResult::Throughput(rows) => {
                write!(
                    out,
                    "detector,paths,candidates,offered_load,frames,slots,transmitted,received,throughput,ci_half_width,per"
                )?;
                if timing {
                    write!(out, ",wall_time_s")?;
                }
                writeln!(out)?;
                for r in rows {
                    write!(
                        out,
                        "{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.6e}",
                        r.receiver.detector,
                        r.receiver.paths,
                        r.receiver.candidates,
                        fmt_f(r.offered_load),
                        r.frames,
                        r.slots,
                        r.transmitted,
                        r.received,
                        r.throughput(),
                        r.half_width(),
                        r.per()
                    )?;
                    if timing {
                        write!(out, ",{:.3}", r.wall_time)?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self, timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

fn decoded_ok(rx: &Receiver, obs: &Observation) -> bool {
    matches!(rx.decode_packet(&obs.received, &obs.target), Ok(s) if s.payload == obs.payload)
}

/// Single-user AWGN PER versus Eb/N0. Trial `i` uses the same payload,
/// phase and noise shape at every Eb/N0 point.
pub fn per_sweep(
    sweep: &PerSweepConfig,
    cfg: &ModulationConfig,
    seed: u64,
    pool: &ThreadPool,
    mut progress: impl FnMut(&PerRow),
) -> Result<SweepResult, DecoderError> {
    let rx = Receiver::new(*cfg, sweep.detector, sweep.list())?
        .with_window(sweep.window)
        .with_uniform_init(sweep.uniform_init);
    let pulse = rx.pulse().clone();
    let spec = ReceiverSpec::new(sweep.detector, sweep.paths, sweep.candidates);
    let mut rows = Vec::new();
    for &ebn0 in &sweep.ebn0.0 {
        let start = Instant::now();
        let count = count_errors(pool, 1, sweep.packets, sweep.max_errors, |i, _| {
            let mut rng = rng_for(seed, &[TAG_PER, i]);
            let obs = single_user_observation(cfg, &pulse, ebn0, &mut rng);
            vec![!decoded_ok(&rx, &obs)]
        })[0];
        let row = PerRow {
            receiver: spec,
            interferer: None,
            ebn0_db: ebn0,
            count,
            wall_time: start.elapsed().as_secs_f64(),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(SweepResult::Per(rows))
}

/// Receivers for a set of cells, one per distinct `P` with the largest `C`
/// requested for it; a cell `(P, C)` succeeds iff the first candidate that
/// passes post-processing has rank below `C` and carries the right payload.
struct SharedLists {
    receivers: Vec<(usize, Receiver)>,
    /// For each cell, its receiver index and `C`.
    cells: Vec<(usize, usize)>,
}

impl SharedLists {
    fn new(cfg: &ModulationConfig, detector: Detector, cells: &[ListConfig]) -> Result<Self, DecoderError> {
        let mut receivers: Vec<(usize, Receiver)> = Vec::new();
        let mut max_c: Vec<(usize, usize)> = Vec::new();
        for c in cells {
            c.validate()?;
            match max_c.iter_mut().find(|(p, _)| *p == c.paths) {
                Some(e) => e.1 = e.1.max(c.candidates),
                None => max_c.push((c.paths, c.candidates)),
            }
        }
        for &(p, c) in &max_c {
            receivers.push((p, Receiver::new(*cfg, detector, ListConfig::new(p, c)?)?));
        }
        let cells = cells
            .iter()
            .map(|c| {
                let idx = receivers.iter().position(|(p, _)| *p == c.paths).expect("receiver per P");
                (idx, c.candidates)
            })
            .collect();
        Ok(SharedLists { receivers, cells })
    }

    fn errors(&self, obs: &Observation, active: &[bool]) -> Vec<bool> {
        let mut outcome: Vec<Option<Option<(usize, bool)>>> = vec![None; self.receivers.len()];
        self.cells
            .iter()
            .zip(active)
            .map(|(&(r, c), &on)| {
                if !on {
                    return true;
                }
                let res = *outcome[r].get_or_insert_with(|| {
                    match self.receivers[r].1.decode_packet(&obs.received, &obs.target) {
                        Ok(s) => Some((s.rank, s.payload == obs.payload)),
                        Err(_) => None,
                    }
                });
                !matches!(res, Some((rank, true)) if rank < c)
            })
            .collect()
    }
}

/// Two-user PER per `(P, C)` cell, for each overlap and Eb/N0. All cells of
/// a point see the same scenes.
pub fn two_user_sweep(
    sweep: &TwoUserConfig,
    cfg: &ModulationConfig,
    seed: u64,
    pool: &ThreadPool,
    mut progress: impl FnMut(&PerRow),
) -> Result<SweepResult, DecoderError> {
    let cells = sweep.list_cells();
    let shared = SharedLists::new(cfg, sweep.detector, &cells)?;
    let pulse = make_phase_pulse(cfg);
    let mut rows = Vec::new();
    for (oi, &overlap) in sweep.overlaps.iter().enumerate() {
        let sc = sweep.scenario(overlap);
        for &ebn0 in &sweep.ebn0.0 {
            let start = Instant::now();
            let counts = count_errors(pool, cells.len(), sweep.packets, sweep.max_errors, |i, active| {
                let mut rng = rng_for(seed, &[TAG_TWO_USER, oi as u64, i]);
                let obs = make_two_user_scene(&sc, cfg, &pulse, ebn0, &mut rng);
                shared.errors(&obs, active)
            });
            let wall = start.elapsed().as_secs_f64();
            for (cell, count) in cells.iter().zip(counts) {
                let row = PerRow {
                    receiver: ReceiverSpec::new(sweep.detector, cell.paths, cell.candidates),
                    interferer: Some((sweep.power_delta_db, overlap)),
                    ebn0_db: ebn0,
                    count,
                    wall_time: wall,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(SweepResult::Per(rows))
}

/// Slotted ALOHA throughput of every receiver at every load. Receivers
/// decode the same frames and noise.
pub fn throughput_sweep(
    sweep: &ThroughputConfig,
    cfg: &ModulationConfig,
    seed: u64,
    pool: &ThreadPool,
    mut progress: impl FnMut(&ThroughputRow),
) -> Result<SweepResult, DecoderError> {
    let pulse = make_phase_pulse(cfg);
    let receivers: Vec<Receiver> = sweep
        .receivers
        .iter()
        .map(|r| Receiver::new(*cfg, r.detector, r.list()))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (li, &load) in sweep.loads.0.iter().enumerate() {
        let start = Instant::now();
        let point = LoadPoint {
            offered_load: load,
            n_slots: sweep.n_slots,
            n_frames: sweep.n_frames,
        };
        let mut received = vec![0u64; receivers.len()];
        let mut transmitted = 0u64;
        for f in 0..sweep.n_frames {
            let mut rng = rng_for(seed, &[TAG_ALOHA, li as u64, f as u64]);
            let frame = run_aloha_frame(&point, sweep.arrivals, &sweep.geometry, &sweep.link, &mut rng);
            transmitted += frame.packets.len() as u64;
            let busy: Vec<usize> = (0..frame.n_slots).filter(|&s| !frame.slots[s].is_empty()).collect();
            let decoded: Vec<Vec<Option<Payload>>> = pool.install(|| {
                busy.par_iter()
                    .map(|&slot| {
                        let mut rng = rng_for(seed, &[TAG_ALOHA, li as u64, f as u64, slot as u64 + 1]);
                        let (_, obs) = frame
                            .observe(slot, cfg, &pulse, &sweep.link, &mut rng)
                            .expect("busy slot has a target");
                        receivers
                            .iter()
                            .map(|rx| rx.decode_packet(&obs.received, &obs.target).ok().map(|s| s.payload))
                            .collect()
                    })
                    .collect()
            });
            for r in 0..receivers.len() {
                let mut per_slot = vec![None; frame.n_slots];
                for (&slot, d) in busy.iter().zip(&decoded) {
                    per_slot[slot] = d[r].clone();
                }
                received[r] += score_frame(&frame, &per_slot).received as u64;
            }
        }
        let wall = start.elapsed().as_secs_f64();
        for (spec, &rcv) in sweep.receivers.iter().zip(&received) {
            let row = ThroughputRow {
                receiver: *spec,
                offered_load: load,
                frames: sweep.n_frames,
                slots: (sweep.n_frames * sweep.n_slots) as u64,
                transmitted,
                received: rcv,
                wall_time: wall,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(SweepResult::Throughput(rows))
}

/// Bit error rate of full-response MSK (L = 1 rectangular pulse, h = 1/2)
/// under coherent Viterbi detection, with the data carried by the phase
/// state so that each decoded state yields one bit. Bits are sent in
/// independent blocks starting from phase zero; the last bit of each block
/// is only half observed and is not counted.
pub fn msk_ber(ebn0_db: f64, blocks: u64, block_bits: usize, seed: u64, pool: &ThreadPool) -> ErrorCount {
    let cfg = ModulationConfig::msk();
    let pulse = make_phase_pulse(&cfg);
    let trellis = build_coherent_trellis(&cfg, &pulse);
    let table = trellis.table();
    let init = trellis.state_after(&[]).expect("L = 1 needs no preamble");
    let var = crate::channel::noise_variance(ebn0_db, cfg.symbol_energy, &cfg);
    let results: Vec<ErrorCount> = pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng_for(seed, &[TAG_MSK, b]);
                let bits: Vec<u8> = (0..block_bits).map(|_| rng.random_range(0..2u8)).collect();
                let symbols = msk_precode(&bits);
                let mut rx: Waveform = modulate(&symbols, &cfg, &pulse);
                crate::channel::add_noise_with(&mut rx, var, &mut rng);
                let metrics = table.branch_metrics(&rx.samples);
                let cand = crate::decoder::viterbi(&metrics, table, InitialMetrics::Known(init));
                let decoded = msk_decode(&cand.symbols);
                let errors = bits[..block_bits - 1]
                    .iter()
                    .zip(&decoded)
                    .filter(|(a, b)| a != b)
                    .count();
                ErrorCount {
                    errors: errors as u64,
                    trials: (block_bits - 1) as u64,
                }
            })
            .collect()
    });
    results.into_iter().fold(ErrorCount::default(), |mut acc, c| {
        acc.add(c);
        acc
    })
}

/// Phase after symbol `n`, in quarter turns, for bit `b`: odd states carry
/// the bit on the sine axis, even states on the cosine axis.
fn msk_state(n: usize, bit: u8) -> i32 {
    match (n % 2, bit) {
        (0, 0) => 1,
        (0, _) => 3,
        (_, 0) => 0,
        _ => 2,
    }
}

/// Symbols steering the phase through the states of [`msk_state`].
pub fn msk_precode(bits: &[u8]) -> Vec<crate::frame::Symbol> {
    let mut phase = 0i32;
    bits.iter()
        .enumerate()
        .map(|(n, &b)| {
            let target = msk_state(n, b);
            let a = if (phase + 1).rem_euclid(4) == target { 1 } else { -1 };
            phase = (phase + a as i32).rem_euclid(4);
            a
        })
        .collect()
}

/// Inverse of [`msk_precode`].
pub fn msk_decode(symbols: &[crate::frame::Symbol]) -> Vec<u8> {
    let mut phase = 0i32;
    symbols
        .iter()
        .enumerate()
        .map(|(n, &a)| {
            phase = (phase + a as i32).rem_euclid(4);
            (msk_state(n, 1) == phase) as u8
        })
        .collect()
}
