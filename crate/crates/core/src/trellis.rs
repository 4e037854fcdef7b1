//! Trellis representations of the CPM signal for sequence detection.
//!
//! Two state spaces are provided:
//!
//! * [`CoherentTrellis`]: state `(theta_n, a_{n-L+1}, ..., a_{n-1})` where the
//!   phase state `theta_n` collects the settled contribution of all older
//!   symbols as a multiple of `pi h`. The reference segment of a transition
//!   is the transmitted envelope over one symbol period.
//! * [`DifferentialTrellis`]: state `(a_{n-L-K+1}, ..., a_{n-1})` for the
//!   signal `r(t) r*(t - K Ts)`, whose phase depends only on the last
//!   `K + L` symbols, so no phase state is needed.
//!
//! Symbols are binary; input index 0 is `-1` and input index 1 is `+1`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::frame::Symbol;
use crate::gmsk::{gcd, ModulationConfig, PhasePulse, Waveform};

/// Alphabet size.
pub const M: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrellisError {
    #[error("segment length mismatch: received {received}, reference {reference}")]
    LengthMismatch { received: usize, reference: usize },
    #[error("differential delay must be at least 1")]
    ZeroDelay,
    #[error("received signal has {got} samples, need at least {need}")]
    TooShort { need: usize, got: usize },
    #[error("preamble of {got} symbols is shorter than the {need} symbols of state memory")]
    ShortPreamble { need: usize, got: usize },
}

#[inline]
pub fn symbol_of(input: usize) -> Symbol {
    if input == 0 {
        -1
    } else {
        1
    }
}

#[inline]
pub fn input_of(symbol: Symbol) -> usize {
    (symbol > 0) as usize
}

/// Time-invariant transition table with one reference segment per
/// transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisTable {
    num_states: usize,
    samples_per_symbol: usize,
    sample_period: f64,
    next: Vec<usize>,
    refs: Vec<Complex64>,
    /// Incoming transitions per state as `(previous state, input)`, sorted by
    /// previous state.
    preds: Vec<Vec<(usize, usize)>>,
    /// Symbol periods of signal that follow the last symbol.
    tail_symbols: usize,
    /// Per-state reference over the tail, when the symbol stream ends there.
    tails: Vec<Complex64>,
}

impl TrellisTable {
    fn from_fn<F>(num_states: usize, cfg: &ModulationConfig, mut transition: F) -> Self
    where
        F: FnMut(usize, usize) -> (usize, Vec<Complex64>),
    {
        let q = cfg.oversampling;
        let mut next = Vec::with_capacity(num_states * M);
        let mut refs = Vec::with_capacity(num_states * M * q);
        let mut preds = vec![Vec::with_capacity(M); num_states];
        for s in 0..num_states {
            for input in 0..M {
                let (ns, seg) = transition(s, input);
                debug_assert_eq!(seg.len(), q);
                next.push(ns);
                refs.extend(seg);
                preds[ns].push((s, input));
            }
        }
        for p in &mut preds {
            p.sort_unstable();
        }
        TrellisTable {
            num_states,
            samples_per_symbol: q,
            sample_period: cfg.sample_period(),
            next,
            refs,
            preds,
            tail_symbols: 0,
            tails: Vec::new(),
        }
    }

    fn with_tails<F>(mut self, tail_symbols: usize, mut tail: F) -> Self
    where
        F: FnMut(usize) -> Vec<Complex64>,
    {
        self.tail_symbols = tail_symbols;
        self.tails = (0..self.num_states).flat_map(|s| tail(s)).collect();
        debug_assert_eq!(self.tails.len(), self.num_states * tail_symbols * self.samples_per_symbol);
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    #[inline]
    pub fn next_state(&self, state: usize, input: usize) -> usize {
        self.next[state * M + input]
    }

    #[inline]
    pub fn reference(&self, state: usize, input: usize) -> &[Complex64] {
        let q = self.samples_per_symbol;
        let t = state * M + input;
        &self.refs[t * q..(t + 1) * q]
    }

    pub fn predecessors(&self, state: usize) -> &[(usize, usize)] {
        &self.preds[state]
    }

    /// Symbol periods of pulse tail after the last symbol.
    pub fn tail_symbols(&self) -> usize {
        self.tail_symbols
    }

    /// Expected signal over the tail when the burst ends in `state`.
    pub fn tail_reference(&self, state: usize) -> &[Complex64] {
        let n = self.tail_symbols * self.samples_per_symbol;
        &self.tails[state * n..(state + 1) * n]
    }

    /// Correlation of `received` with each state's tail reference; the
    /// metric of ending the burst in that state.
    pub fn terminal_metrics(&self, received: &[Complex64]) -> Result<Vec<f64>, TrellisError> {
        let n = self.tail_symbols * self.samples_per_symbol;
        if received.len() != n {
            return Err(TrellisError::LengthMismatch {
                received: received.len(),
                reference: n,
            });
        }
        Ok((0..self.num_states)
            .map(|s| correlate(received, self.tail_reference(s)) * self.sample_period)
            .collect())
    }

    /// Branch metrics of every transition for every symbol interval of
    /// `received`, which must hold a whole number of symbols.
    pub fn branch_metrics(&self, received: &[Complex64]) -> BranchMetrics {
        let q = self.samples_per_symbol;
        let n_stages = received.len() / q;
        let width = self.num_states * M;
        let mut values = Vec::with_capacity(n_stages * width);
        for n in 0..n_stages {
            let seg = &received[n * q..(n + 1) * q];
            for t in 0..width {
                let r = &self.refs[t * q..(t + 1) * q];
                values.push(correlate(seg, r) * self.sample_period);
            }
        }
        BranchMetrics {
            n_stages,
            width,
            values,
        }
    }

    /// Text listing of all transitions.
    pub fn dump(&self, label: impl Fn(usize) -> String) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.num_states);
        for s in 0..self.num_states {
            let _ = writeln!(
                out,
                "{s:>4} {:<24} -1 -> {:>4}  +1 -> {:>4}",
                label(s),
                self.next_state(s, 0),
                self.next_state(s, 1)
            );
        }
        out
    }
}

/// Per-stage, per-transition branch metrics; transition index is
/// `state * 2 + input`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMetrics {
    n_stages: usize,
    width: usize,
    values: Vec<f64>,
}

impl BranchMetrics {
    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    #[inline]
    pub fn get(&self, stage: usize, state: usize, input: usize) -> f64 {
        self.values[stage * self.width + state * M + input]
    }

    #[inline]
    pub fn stage(&self, stage: usize) -> &[f64] {
        &self.values[stage * self.width..(stage + 1) * self.width]
    }
}

#[inline]
fn correlate(received: &[Complex64], reference: &[Complex64]) -> f64 {
    received
        .iter()
        .zip(reference)
        .map(|(r, s)| r.re * s.re + r.im * s.im)
        .sum()
}

/// `Re[sum received[k] conj(reference[k])] * dt`: the correlation over one
/// symbol period.
pub fn branch_metric(
    received: &[Complex64],
    reference: &[Complex64],
    sample_period: f64,
) -> Result<f64, TrellisError> {
    if received.len() != reference.len() {
        return Err(TrellisError::LengthMismatch {
            received: received.len(),
            reference: reference.len(),
        });
    }
    Ok(correlate(received, reference) * sample_period)
}

/// Common interface of the two detectors' trellises.
pub trait Trellis {
    fn table(&self) -> &TrellisTable;

    /// Number of past symbols a state depends on.
    fn state_memory(&self) -> usize;

    /// State reached after transmitting `preamble` from time zero.
    fn state_after(&self, preamble: &[Symbol]) -> Result<usize, TrellisError>;

    /// Human-readable state label.
    fn state_label(&self, state: usize) -> String;

    fn dump(&self) -> String {
        self.table().dump(|s| self.state_label(s))
    }
}

fn pack_history(symbols: &[Symbol]) -> usize {
    // Oldest symbol in the most significant bit.
    symbols
        .iter()
        .fold(0usize, |acc, &s| (acc << 1) | input_of(s))
}

fn unpack_history(bits: usize, len: usize) -> Vec<Symbol> {
    (0..len)
        .map(|i| symbol_of((bits >> (len - 1 - i)) & 1))
        .collect()
}

fn history_label(h: &[Symbol]) -> String {
    h.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
}

/// Coherent CPM trellis.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentTrellis {
    table: TrellisTable,
    memory: usize,
    /// Phase quantum is `pi / den`; reachable phase offsets are multiples of
    /// `phase_step` quanta.
    den: u32,
    num: u32,
    phase_step: u32,
    n_phases: usize,
}

impl CoherentTrellis {
    pub fn n_phase_states(&self) -> usize {
        self.n_phases
    }

    /// Phase state of `state` in radians.
    pub fn phase_of(&self, state: usize) -> f64 {
        let hist_states = 1usize << (self.memory - 1);
        let slot = state / hist_states;
        (slot as u32 * self.phase_step) as f64 * PI / self.den as f64
    }

    pub fn history_of(&self, state: usize) -> Vec<Symbol> {
        let hist_states = 1usize << (self.memory - 1);
        unpack_history(state % hist_states, self.memory - 1)
    }

    fn encode(&self, phase_quanta: u32, history: &[Symbol]) -> usize {
        let hist_states = 1usize << (self.memory - 1);
        let slot = (phase_quanta % (2 * self.den)) / self.phase_step;
        slot as usize * hist_states + pack_history(history)
    }
}

pub fn build_coherent_trellis(cfg: &ModulationConfig, pulse: &PhasePulse) -> CoherentTrellis {
    let l = cfg.memory;
    let q = cfg.oversampling;
    let (num, den) = (cfg.index.num, cfg.index.den);
    let phase_step = gcd(num, 2 * den);
    let n_phases = (2 * den / phase_step) as usize;
    let hist_states = 1usize << (l - 1);
    let num_states = n_phases * hist_states;
    let two_pi_h = 2.0 * PI * cfg.index.value();
    let amp = cfg.amplitude();

    let table = TrellisTable::from_fn(num_states, cfg, |state, input| {
        let slot = (state / hist_states) as u32;
        let mut window = unpack_history(state % hist_states, l - 1);
        window.push(symbol_of(input));
        let theta_quanta = slot * phase_step;
        let theta = theta_quanta as f64 * PI / den as f64;
        let seg = (0..q)
            .map(|k| {
                // window[j] is a_{n-L+1+j}; its pulse has run (L-1-j) symbols.
                let active: f64 = window
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| a as f64 * pulse.at(((l - 1 - j) * q + k) as isize))
                    .sum();
                Complex64::from_polar(amp, theta + two_pi_h * active)
            })
            .collect();
        let step = window[0] as i64 * num as i64;
        let next_quanta = (theta_quanta as i64 + step).rem_euclid(2 * den as i64) as u32;
        let next_slot = next_quanta / phase_step;
        let next = next_slot as usize * hist_states + pack_history(&window[1..]);
        (next, seg)
    })
    .with_tails(l - 1, |state| {
        let theta = (state / hist_states) as f64 * phase_step as f64 * PI / den as f64;
        let hist = unpack_history(state % hist_states, l - 1);
        (0..(l - 1) * q)
            .map(|k| {
                // hist[j] started (L-1-j) symbols before the tail.
                let active: f64 = hist
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| a as f64 * pulse.at(((l - 1 - j) * q + k) as isize))
                    .sum();
                Complex64::from_polar(amp, theta + two_pi_h * active)
            })
            .collect()
    });
    CoherentTrellis {
        table,
        memory: l,
        den,
        num,
        phase_step,
        n_phases,
    }
}

impl Trellis for CoherentTrellis {
    fn table(&self) -> &TrellisTable {
        &self.table
    }

    fn state_memory(&self) -> usize {
        self.memory - 1
    }

    fn state_after(&self, preamble: &[Symbol]) -> Result<usize, TrellisError> {
        let l = self.memory;
        if preamble.len() < l - 1 {
            return Err(TrellisError::ShortPreamble {
                need: l - 1,
                got: preamble.len(),
            });
        }
        let settled = &preamble[..preamble.len() + 1 - l];
        let two_p = 2 * self.den as i64;
        let sum: i64 = settled.iter().map(|&a| a as i64).sum();
        let quanta = (sum * self.num as i64).rem_euclid(two_p) as u32;
        Ok(self.encode(quanta, &preamble[preamble.len() + 1 - l..]))
    }

    fn state_label(&self, state: usize) -> String {
        let quanta = (state / (1usize << (self.memory - 1))) as u32 * self.phase_step;
        format!("{}pi/{} {}", quanta, self.den, history_label(&self.history_of(state)))
    }
}

/// Trellis for differential detection with delay `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialTrellis {
    table: TrellisTable,
    delay: usize,
    memory: usize,
}

impl DifferentialTrellis {
    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn history_of(&self, state: usize) -> Vec<Symbol> {
        unpack_history(state, self.delay + self.memory - 1)
    }
}

pub fn build_differential_trellis(
    cfg: &ModulationConfig,
    pulse: &PhasePulse,
    delay: usize,
) -> Result<DifferentialTrellis, TrellisError> {
    if delay == 0 {
        return Err(TrellisError::ZeroDelay);
    }
    let l = cfg.memory;
    let q = cfg.oversampling;
    let width = delay + l - 1;
    let num_states = 1usize << width;
    let two_pi_h = 2.0 * PI * cfg.index.value();
    let pi_h = PI * cfg.index.value();
    let amp = 2.0 * cfg.symbol_energy / cfg.symbol_period;

    let table = TrellisTable::from_fn(num_states, cfg, |state, input| {
        // window[j] = a_{n - width + j}, j = 0..=width; window[width] = a_n.
        let mut window = unpack_history(state, width);
        window.push(symbol_of(input));
        let a = |back: usize| window[width - back] as f64;
        let theta: f64 = (0..delay).map(|i| a(l + i)).sum::<f64>() * pi_h;
        let seg = (0..q)
            .map(|k| {
                let phi: f64 = (0..l)
                    .map(|i| (a(i) - a(delay + i)) * pulse.at((i * q + k) as isize))
                    .sum::<f64>()
                    * two_pi_h;
                Complex64::from_polar(amp, phi + theta)
            })
            .collect();
        let next = pack_history(&window[1..]);
        (next, seg)
    })
    .with_tails(l - 1, |state| {
        let hist = unpack_history(state, width);
        let q_at = |age: isize, k: usize| pulse.at(age * q as isize + k as isize);
        (0..(l - 1) * q)
            .map(|k| {
                // hist[j] started (width-j) symbols before the tail.
                let phi: f64 = hist
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| {
                        let age = (width - j) as isize;
                        a as f64 * (q_at(age, k) - q_at(age - delay as isize, k))
                    })
                    .sum::<f64>()
                    * two_pi_h;
                Complex64::from_polar(amp, phi)
            })
            .collect()
    });
    Ok(DifferentialTrellis {
        table,
        delay,
        memory: l,
    })
}

impl Trellis for DifferentialTrellis {
    fn table(&self) -> &TrellisTable {
        &self.table
    }

    fn state_memory(&self) -> usize {
        self.delay + self.memory - 1
    }

    fn state_after(&self, preamble: &[Symbol]) -> Result<usize, TrellisError> {
        let width = self.state_memory();
        if preamble.len() < width {
            return Err(TrellisError::ShortPreamble {
                need: width,
                got: preamble.len(),
            });
        }
        Ok(pack_history(&preamble[preamble.len() - width..]))
    }

    fn state_label(&self, state: usize) -> String {
        history_label(&self.history_of(state))
    }
}

/// `R_K[m] = r[m + K Q] * conj(r[m])`: the product of the signal with a
/// conjugated copy delayed by `K` symbols. The output starts `K` symbols
/// later than the input.
pub fn differential_transform(
    r: &Waveform,
    delay: usize,
    cfg: &ModulationConfig,
) -> Result<Waveform, TrellisError> {
    let lag = delay * cfg.oversampling;
    if r.len() < lag {
        return Err(TrellisError::TooShort {
            need: lag,
            got: r.len(),
        });
    }
    let samples = (0..r.len() - lag)
        .map(|m| r.samples[m + lag] * r.samples[m].conj())
        .collect();
    Ok(Waveform::new(
        samples,
        r.sample_rate,
        r.origin_time + delay as f64 * cfg.symbol_period,
    ))
}
