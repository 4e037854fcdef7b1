//! Viterbi and parallel list Viterbi search, and the CRC-aided packet
//! receiver built on them.
//!
//! The list search keeps, for every state and stage, the `P` best cumulative
//! metrics reaching that state together with `(predecessor, rank)`
//! backpointers. At the last stage the `C` best of all `S * P` entries are
//! backtracked into candidate sequences, which the receiver feeds through the
//! frame post-processing in decreasing metric order until one passes.
//!
//! Ties are broken deterministically: equal metrics prefer the lower
//! predecessor state, then the lower predecessor rank; equal final metrics
//! prefer the lower terminal state, then the lower rank.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::UserChannel;
use crate::frame::{
    nrzi_encode, post_process_candidate, preamble_bits, Payload, Rejection, Symbol,
    PREAMBLE_BITS, SLOT_BITS,
};
use crate::gmsk::{make_phase_pulse, ConfigError, ModulationConfig, PhasePulse, Waveform};
use crate::trellis::{
    build_coherent_trellis, build_differential_trellis, differential_transform, symbol_of,
    BranchMetrics, CoherentTrellis, DifferentialTrellis, Trellis, TrellisError, TrellisTable, M,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoderError {
    #[error("list size P must be at least 1")]
    ZeroPaths,
    #[error("candidate count C must be at least 1")]
    ZeroCandidates,
    #[error(transparent)]
    Trellis(#[from] TrellisError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// PLVA parameters: `paths` (P) kept per state, `candidates` (C) extracted
/// at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ListConfig {
    pub paths: usize,
    pub candidates: usize,
}

impl ListConfig {
    pub const VITERBI: ListConfig = ListConfig {
        paths: 1,
        candidates: 1,
    };

    pub fn new(paths: usize, candidates: usize) -> Result<Self, DecoderError> {
        let cfg = ListConfig { paths, candidates };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.paths == 0 {
            return Err(DecoderError::ZeroPaths);
        }
        if self.candidates == 0 {
            return Err(DecoderError::ZeroCandidates);
        }
        Ok(())
    }
}

impl fmt::Display for ListConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.paths, self.candidates)
    }
}

/// Cumulative metrics at stage zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMetrics {
    /// Zero for the given state, unreachable for all others.
    Known(usize),
    /// Zero for every state.
    Uniform,
}

impl InitialMetrics {
    fn reachable(&self, state: usize) -> bool {
        match *self {
            InitialMetrics::Known(s) => s == state,
            InitialMetrics::Uniform => true,
        }
    }
}

/// A decoded symbol sequence with its cumulative metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub symbols: Vec<Symbol>,
    pub metric: f64,
    /// Zero-based position in the extracted list.
    pub rank: usize,
    pub initial_state: usize,
    pub final_state: usize,
}

/// Classical Viterbi search.
pub fn viterbi(metrics: &BranchMetrics, table: &TrellisTable, init: InitialMetrics) -> Candidate {
    viterbi_terminated(metrics, table, init, &[])
}

/// Viterbi search with `terminal[s]` added to paths ending in state `s`
/// (empty for none).
pub fn viterbi_terminated(
    metrics: &BranchMetrics,
    table: &TrellisTable,
    init: InitialMetrics,
    terminal: &[f64],
) -> Candidate {
    let s_count = table.num_states();
    let n_stages = metrics.n_stages();
    let mut cum: Vec<f64> = (0..s_count)
        .map(|s| if init.reachable(s) { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let mut next = vec![f64::NEG_INFINITY; s_count];
    // Survivor: index into the predecessor list of the state.
    let mut survivors = vec![0u8; n_stages * s_count];

    for n in 0..n_stages {
        let bm = metrics.stage(n);
        for s in 0..s_count {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u8;
            for (j, &(prev, input)) in table.predecessors(s).iter().enumerate() {
                let v = cum[prev] + bm[prev * M + input];
                if v > best {
                    best = v;
                    arg = j as u8;
                }
            }
            next[s] = best;
            survivors[n * s_count + s] = arg;
        }
        std::mem::swap(&mut cum, &mut next);
    }
    for (c, t) in cum.iter_mut().zip(terminal) {
        *c += t;
    }

    let mut state = 0;
    for s in 1..s_count {
        if cum[s] > cum[state] {
            state = s;
        }
    }
    let metric = cum[state];
    let final_state = state;
    let mut symbols = vec![0; n_stages];
    for n in (0..n_stages).rev() {
        let j = survivors[n * s_count + state] as usize;
        let (prev, input) = table.predecessors(state)[j];
        symbols[n] = symbol_of(input);
        state = prev;
    }
    Candidate {
        symbols,
        metric,
        rank: 0,
        initial_state: state,
        final_state,
    }
}

/// Ranked path lists of a parallel list Viterbi search.
#[derive(Debug, Clone)]
pub struct PathLists {
    num_states: usize,
    paths: usize,
    n_stages: usize,
    /// `[stage][state]` list length, stage 0 included.
    lens: Vec<u32>,
    /// `[stage - 1][state][rank]`: `prev_rank * M + predecessor index`.
    back: Vec<u32>,
    /// `[state][rank]` metrics at the last stage.
    final_metrics: Vec<f64>,
    /// `[stage][state][rank]` metrics for every stage, when recorded.
    history: Option<Vec<f64>>,
    uniform_start: bool,
}

impl PathLists {
    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn list_len(&self, stage: usize, state: usize) -> usize {
        self.lens[stage * self.num_states + state] as usize
    }

    /// Ranked metrics of `state` at `stage`; requires a recorded search for
    /// stages before the last.
    pub fn metrics(&self, stage: usize, state: usize) -> Option<&[f64]> {
        let len = self.list_len(stage, state);
        let base = state * self.paths;
        if stage == self.n_stages {
            return Some(&self.final_metrics[base..base + len]);
        }
        let h = self.history.as_ref()?;
        let off = stage * self.num_states * self.paths + base;
        Some(&h[off..off + len])
    }

    /// `(previous state, previous rank, input)` of an entry at `stage >= 1`.
    pub fn backpointer(
        &self,
        table: &TrellisTable,
        stage: usize,
        state: usize,
        rank: usize,
    ) -> (usize, usize, usize) {
        let b = self.back[((stage - 1) * self.num_states + state) * self.paths + rank] as usize;
        let (prev, input) = table.predecessors(state)[b % M];
        (prev, b / M, input)
    }

    fn backtrack(&self, table: &TrellisTable, state: usize, rank: usize) -> (Vec<Symbol>, usize) {
        let mut symbols = vec![0; self.n_stages];
        let (mut s, mut k) = (state, rank);
        for n in (1..=self.n_stages).rev() {
            let (prev, prev_rank, input) = self.backpointer(table, n, s, k);
            symbols[n - 1] = symbol_of(input);
            s = prev;
            k = prev_rank;
        }
        (symbols, s)
    }

    /// Adds `terminal[s]` to every final entry of state `s`.
    pub fn terminate(&mut self, terminal: &[f64]) {
        assert_eq!(terminal.len(), self.num_states);
        for (s, t) in terminal.iter().enumerate() {
            for m in &mut self.final_metrics[s * self.paths..(s + 1) * self.paths] {
                *m += t;
            }
        }
    }

    /// The `count` best terminal entries as distinct symbol sequences.
    pub fn extract(&self, table: &TrellisTable, count: usize) -> Vec<Candidate> {
        let mut entries: Vec<(f64, usize, usize)> = Vec::new();
        for s in 0..self.num_states {
            let len = self.list_len(self.n_stages, s);
            for k in 0..len {
                entries.push((self.final_metrics[s * self.paths + k], s, k));
            }
        }
        // Lists are sorted per state, so a stable sort on the metric keeps
        // (state, rank) order among ties.
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));

        let mut out = Vec::with_capacity(count.min(entries.len()));
        let mut seen = HashSet::new();
        for (metric, s, k) in entries {
            if out.len() == count {
                break;
            }
            let (symbols, initial_state) = self.backtrack(table, s, k);
            // Distinct entries are distinct paths; with a uniform start two
            // paths can still share a symbol sequence.
            if self.uniform_start && !seen.insert(symbols.clone()) {
                continue;
            }
            out.push(Candidate {
                symbols,
                metric,
                rank: out.len(),
                initial_state,
                final_state: s,
            });
        }
        out
    }
}

/// Runs the P-best recursion. With `record` set every stage's metrics are
/// kept for inspection.
pub fn plva_lists(
    metrics: &BranchMetrics,
    table: &TrellisTable,
    paths: usize,
    init: InitialMetrics,
    record: bool,
) -> PathLists {
    assert!(paths >= 1, "list size must be positive");
    let s_count = table.num_states();
    let n_stages = metrics.n_stages();
    let width = s_count * paths;

    let mut lens = vec![0u32; (n_stages + 1) * s_count];
    let mut cur = vec![f64::NEG_INFINITY; width];
    for s in 0..s_count {
        if init.reachable(s) {
            cur[s * paths] = 0.0;
            lens[s] = 1;
        }
    }
    let mut history = record.then(|| {
        let mut h = Vec::with_capacity((n_stages + 1) * width);
        h.extend_from_slice(&cur);
        h
    });
    let mut next = vec![f64::NEG_INFINITY; width];
    let mut back = vec![0u32; n_stages * width];

    for n in 0..n_stages {
        let bm = metrics.stage(n);
        let (prev_lens, new_lens) = lens[n * s_count..(n + 2) * s_count].split_at_mut(s_count);
        let stage_back = &mut back[n * width..(n + 1) * width];
        for s in 0..s_count {
            let preds = table.predecessors(s);
            let out = &mut next[s * paths..(s + 1) * paths];
            let out_back = &mut stage_back[s * paths..(s + 1) * paths];
            let len = if preds.len() == 2 {
                merge_two(&cur, prev_lens, bm, preds, paths, out, out_back)
            } else {
                merge_any(&cur, prev_lens, bm, preds, paths, out, out_back)
            };
            new_lens[s] = len as u32;
        }
        std::mem::swap(&mut cur, &mut next);
        if let Some(h) = history.as_mut() {
            h.extend_from_slice(&cur);
        }
    }

    PathLists {
        num_states: s_count,
        paths,
        n_stages,
        lens,
        back,
        final_metrics: cur,
        history,
        uniform_start: matches!(init, InitialMetrics::Uniform),
    }
}

#[inline]
fn merge_two(
    cur: &[f64],
    prev_lens: &[u32],
    bm: &[f64],
    preds: &[(usize, usize)],
    paths: usize,
    out: &mut [f64],
    out_back: &mut [u32],
) -> usize {
    let (p0, i0) = preds[0];
    let (p1, i1) = preds[1];
    let l0 = prev_lens[p0] as usize;
    let l1 = prev_lens[p1] as usize;
    let a = &cur[p0 * paths..p0 * paths + l0];
    let b = &cur[p1 * paths..p1 * paths + l1];
    let d0 = bm[p0 * M + i0];
    let d1 = bm[p1 * M + i1];
    // Predecessors are sorted, so ties go to `a`.
    debug_assert!(p0 < p1);
    let (mut x, mut y) = (0usize, 0usize);
    let total = (l0 + l1).min(paths);
    for k in 0..total {
        let va = if x < l0 { a[x] + d0 } else { f64::NEG_INFINITY };
        let vb = if y < l1 { b[y] + d1 } else { f64::NEG_INFINITY };
        let take_a = if x >= l0 {
            false
        } else if y >= l1 {
            true
        } else {
            va >= vb
        };
        if take_a {
            out[k] = va;
            out_back[k] = (x * M) as u32;
            x += 1;
        } else {
            out[k] = vb;
            out_back[k] = (y * M + 1) as u32;
            y += 1;
        }
    }
    total
}

fn merge_any(
    cur: &[f64],
    prev_lens: &[u32],
    bm: &[f64],
    preds: &[(usize, usize)],
    paths: usize,
    out: &mut [f64],
    out_back: &mut [u32],
) -> usize {
    let mut heads = vec![0usize; preds.len()];
    let total = preds
        .iter()
        .map(|&(p, _)| prev_lens[p] as usize)
        .sum::<usize>()
        .min(paths);
    for k in 0..total {
        let mut best: Option<(f64, usize, usize)> = None;
        for (j, &(p, input)) in preds.iter().enumerate() {
            if heads[j] >= prev_lens[p] as usize {
                continue;
            }
            let v = cur[p * paths + heads[j]] + bm[p * M + input];
            let better = match best {
                None => true,
                Some((bv, _, bp)) => v > bv || (v == bv && p < bp),
            };
            if better {
                best = Some((v, j, p));
            }
        }
        let (v, j, _) = best.expect("list length accounting");
        out[k] = v;
        out_back[k] = (heads[j] * M + j) as u32;
        heads[j] += 1;
    }
    total
}

/// Parallel list Viterbi search returning at most `C` distinct candidates in
/// decreasing metric order.
pub fn plva(
    metrics: &BranchMetrics,
    table: &TrellisTable,
    cfg: ListConfig,
    init: InitialMetrics,
) -> Vec<Candidate> {
    plva_terminated(metrics, table, cfg, init, &[])
}

/// [`plva`] with per-state terminal metrics (empty for none).
pub fn plva_terminated(
    metrics: &BranchMetrics,
    table: &TrellisTable,
    cfg: ListConfig,
    init: InitialMetrics,
    terminal: &[f64],
) -> Vec<Candidate> {
    let mut lists = plva_lists(metrics, table, cfg.paths, init, false);
    if !terminal.is_empty() {
        lists.terminate(terminal);
    }
    lists.extract(table, cfg.candidates)
}

/// Cumulative metric of a symbol sequence, recomputed along its path.
pub fn path_metric(
    metrics: &BranchMetrics,
    table: &TrellisTable,
    initial_state: usize,
    symbols: &[Symbol],
) -> f64 {
    let mut s = initial_state;
    let mut acc = 0.0;
    for (n, &a) in symbols.iter().enumerate() {
        let input = crate::trellis::input_of(a);
        acc += metrics.get(n, s, input);
        s = table.next_state(s, input);
    }
    acc
}

/// Detector family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Detector {
    Coherent,
    Differential { delay: usize },
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::Coherent => f.write_str("coherent"),
            Detector::Differential { delay } => write!(f, "differential:{delay}"),
        }
    }
}

impl TryFrom<String> for Detector {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Detector> for String {
    fn from(d: Detector) -> String {
        d.to_string()
    }
}

impl std::str::FromStr for Detector {
    type Err = String;

    /// `coherent`, `differential` (K = 3) or `differential:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "coherent" | "coh" => Ok(Detector::Coherent),
            "differential" | "diff" => Ok(Detector::Differential { delay: 3 }),
            _ => {
                let rest = s
                    .strip_prefix("differential:")
                    .or_else(|| s.strip_prefix("diff:"))
                    .ok_or_else(|| format!("unknown detector {s:?}"))?;
                let delay: usize = rest
                    .parse()
                    .map_err(|_| format!("bad differential delay {rest:?}"))?;
                if delay == 0 {
                    return Err("differential delay must be at least 1".into());
                }
                Ok(Detector::Differential { delay })
            }
        }
    }
}

/// Where the decoded window ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeWindow {
    /// At the end of the acquired burst; the pulse tail after it is scored
    /// per final state.
    Burst,
    /// A full slot (256 symbols) after the burst start.
    Slot,
}

/// What the receiver knows about the packet it is decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    pub channel: UserChannel,
    /// Transmitted symbols of the burst.
    pub burst_symbols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitMode {
    Known,
    Uniform,
}

enum AnyTrellis {
    Coherent(CoherentTrellis),
    Differential(DifferentialTrellis),
}

impl AnyTrellis {
    fn as_dyn(&self) -> &(dyn Trellis + Send + Sync) {
        match self {
            AnyTrellis::Coherent(t) => t,
            AnyTrellis::Differential(t) => t,
        }
    }
}

/// Receiver samples split into trellis stages and the pulse tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub stages: Vec<Complex64>,
    pub tail: Vec<Complex64>,
}

/// Successful decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSuccess {
    pub payload: Payload,
    /// Zero-based rank of the accepted candidate.
    pub rank: usize,
    pub report: DecodeReport,
}

/// Every candidate was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("no candidate passed post-processing ({} tried)", report.tried)]
pub struct DecodeFailure {
    pub report: DecodeReport,
}

/// Per-decode diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeReport {
    pub candidates: usize,
    pub tried: usize,
    /// Zero-based rank of the first candidate that passed.
    pub first_success: Option<usize>,
    /// Rejection reason of each tried candidate, `None` for a pass.
    pub outcomes: Vec<Option<Rejection>>,
}

impl DecodeReport {
    pub fn histogram(&self) -> BTreeMap<&'static str, usize> {
        let mut h = BTreeMap::new();
        for r in self.outcomes.iter().flatten() {
            *h.entry(r.name()).or_insert(0) += 1;
        }
        h
    }

    /// Line-oriented `key value` text.
    pub fn to_text(&self) -> String {
        let mut s = format!("candidates {}\ntried {}\n", self.candidates, self.tried);
        match self.first_success {
            Some(r) => s += &format!("first_success_rank {}\n", r + 1),
            None => s += "first_success_rank none\n",
        }
        for (k, v) in self.histogram() {
            s += &format!("reject.{k} {v}\n");
        }
        s
    }
}

/// Packet receiver: detector, trellis and list settings for one user of
/// interest at a time.
pub struct Receiver {
    cfg: ModulationConfig,
    pulse: PhasePulse,
    detector: Detector,
    trellis: AnyTrellis,
    list: ListConfig,
    preamble: Vec<Symbol>,
    init_mode: InitMode,
    window: DecodeWindow,
    stop_on_first: bool,
}

impl Receiver {
    pub fn new(
        cfg: ModulationConfig,
        detector: Detector,
        list: ListConfig,
    ) -> Result<Self, DecoderError> {
        cfg.validate()?;
        list.validate()?;
        let pulse = make_phase_pulse(&cfg);
        let trellis = match detector {
            Detector::Coherent => AnyTrellis::Coherent(build_coherent_trellis(&cfg, &pulse)),
            Detector::Differential { delay } => {
                AnyTrellis::Differential(build_differential_trellis(&cfg, &pulse, delay)?)
            }
        };
        let preamble = nrzi_encode(&preamble_bits(), 1);
        let need = trellis.as_dyn().state_memory();
        if preamble.len() < need {
            return Err(TrellisError::ShortPreamble {
                need,
                got: preamble.len(),
            }
            .into());
        }
        Ok(Receiver {
            cfg,
            pulse,
            detector,
            trellis,
            list,
            preamble,
            init_mode: InitMode::Known,
            window: DecodeWindow::Burst,
            stop_on_first: true,
        })
    }

    /// Start from all states with equal metric instead of the preamble state.
    pub fn with_uniform_init(mut self, uniform: bool) -> Self {
        self.init_mode = if uniform {
            InitMode::Uniform
        } else {
            InitMode::Known
        };
        self
    }

    pub fn with_window(mut self, window: DecodeWindow) -> Self {
        self.window = window;
        self
    }

    /// Check every candidate instead of stopping at the first valid one.
    pub fn with_stop_criterion(mut self, stop: bool) -> Self {
        self.stop_on_first = stop;
        self
    }

    /// NRZI level of the first line symbol.
    pub fn initial_level(&self) -> Symbol {
        1
    }

    pub fn config(&self) -> &ModulationConfig {
        &self.cfg
    }

    pub fn pulse(&self) -> &PhasePulse {
        &self.pulse
    }

    pub fn detector(&self) -> Detector {
        self.detector
    }

    pub fn list(&self) -> ListConfig {
        self.list
    }

    pub fn trellis(&self) -> &(dyn Trellis + Send + Sync) {
        self.trellis.as_dyn()
    }

    /// Level of the last preamble symbol, the NRZI reference of the start
    /// flag.
    pub fn flag_reference_level(&self) -> Symbol {
        self.preamble[PREAMBLE_BITS - 1]
    }

    pub fn initial_metrics(&self) -> InitialMetrics {
        match self.init_mode {
            InitMode::Known => InitialMetrics::Known(
                self.trellis()
                    .state_after(&self.preamble)
                    .expect("preamble length checked at construction"),
            ),
            InitMode::Uniform => InitialMetrics::Uniform,
        }
    }

    /// Trellis stages decoded and tail symbol periods scored after them.
    fn window(&self, acq: &Acquisition) -> (usize, usize) {
        match self.window {
            DecodeWindow::Burst => (
                acq.burst_symbols.max(PREAMBLE_BITS) - PREAMBLE_BITS,
                self.trellis().table().tail_symbols(),
            ),
            DecodeWindow::Slot => (SLOT_BITS - PREAMBLE_BITS, 0),
        }
    }

    /// Compensated samples of the decode window, one symbol period per
    /// trellis stage starting at the start flag, followed by the tail.
    pub fn prepare(&self, received: &Waveform, acq: &Acquisition) -> Prepared {
        let q = self.cfg.oversampling;
        let fs = received.sample_rate;
        let ch = &acq.channel;
        let origin = (received.origin_time * fs).round() as i64;
        let burst_start = ch.delay_samples(fs) - origin;
        let (stages, tail) = self.window(acq);
        let sample = |idx: i64| -> Complex64 {
            if idx < 0 || idx as usize >= received.len() {
                Complex64::new(0.0, 0.0)
            } else {
                received.samples[idx as usize]
            }
        };
        let mut samples: Vec<Complex64> = match self.detector {
            Detector::Coherent => {
                let first = burst_start + (PREAMBLE_BITS * q) as i64;
                let n = (stages + tail) * q;
                (0..n as i64)
                    .map(|k| {
                        let idx = first + k;
                        let t = (idx + origin) as f64 / fs;
                        sample(idx) * Complex64::from_polar(1.0, -ch.rotation(t))
                    })
                    .collect()
            }
            Detector::Differential { delay } => {
                let first = burst_start + ((PREAMBLE_BITS - delay) * q) as i64;
                let n = (stages + tail + delay) * q;
                let seg = Waveform::new((0..n as i64).map(|k| sample(first + k)).collect(), fs, 0.0);
                let rk = differential_transform(&seg, delay, &self.cfg)
                    .expect("segment spans the delay");
                let derot = Complex64::from_polar(
                    1.0,
                    -2.0 * std::f64::consts::PI * ch.doppler * delay as f64 * self.cfg.symbol_period,
                );
                rk.samples.into_iter().map(|s| s * derot).collect()
            }
        };
        let tail = samples.split_off(stages * q);
        Prepared { stages: samples, tail }
    }

    /// Candidates of the list search over the decode window.
    pub fn candidates(&self, received: &Waveform, acq: &Acquisition) -> Vec<Candidate> {
        let prepared = self.prepare(received, acq);
        let table = self.trellis().table();
        let metrics = table.branch_metrics(&prepared.stages);
        let terminal = if prepared.tail.is_empty() {
            Vec::new()
        } else {
            table
                .terminal_metrics(&prepared.tail)
                .expect("tail spans the table's tail")
        };
        plva_terminated(&metrics, table, self.list, self.initial_metrics(), &terminal)
    }

    /// Decodes the packet described by `acq` out of `received`.
    pub fn decode_packet(
        &self,
        received: &Waveform,
        acq: &Acquisition,
    ) -> Result<DecodeSuccess, DecodeFailure> {
        let candidates = self.candidates(received, acq);
        let level = self.flag_reference_level();
        let mut report = DecodeReport {
            candidates: candidates.len(),
            ..Default::default()
        };
        let mut accepted: Option<(Payload, usize)> = None;
        for cand in &candidates {
            report.tried += 1;
            match post_process_candidate(&cand.symbols, level) {
                Ok(payload) => {
                    report.outcomes.push(None);
                    if accepted.is_none() {
                        report.first_success = Some(cand.rank);
                        accepted = Some((payload, cand.rank));
                    }
                    if self.stop_on_first {
                        break;
                    }
                }
                Err(r) => report.outcomes.push(Some(r)),
            }
        }
        match accepted {
            Some((payload, rank)) => Ok(DecodeSuccess {
                payload,
                rank,
                report,
            }),
            None => Err(DecodeFailure { report }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmsk::modulate;
    use crate::trellis::input_of;

    fn lcg_symbols(n: usize, seed: u64) -> Vec<Symbol> {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if (x >> 33) & 1 == 1 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }

    #[test]
    fn list_config_rejects_zero() {
        assert_eq!(ListConfig::new(0, 1), Err(DecoderError::ZeroPaths));
        assert_eq!(ListConfig::new(1, 0), Err(DecoderError::ZeroCandidates));
        assert!(ListConfig::new(64, 256).is_ok());
    }

    #[test]
    fn detector_parsing() {
        assert_eq!("coherent".parse::<Detector>(), Ok(Detector::Coherent));
        assert_eq!(
            "differential:1".parse::<Detector>(),
            Ok(Detector::Differential { delay: 1 })
        );
        assert_eq!(
            "differential".parse::<Detector>(),
            Ok(Detector::Differential { delay: 3 })
        );
        assert!("differential:0".parse::<Detector>().is_err());
        assert!("bpsk".parse::<Detector>().is_err());
        assert_eq!(Detector::Differential { delay: 3 }.to_string(), "differential:3");
    }

    #[test]
    fn noiseless_viterbi_recovers_sequence() {
        let cfg = ModulationConfig::default();
        let pulse = make_phase_pulse(&cfg);
        let t = build_coherent_trellis(&cfg, &pulse);
        let syms = lcg_symbols(60, 9);
        let w = modulate(&syms, &cfg, &pulse);
        let q = cfg.oversampling;
        let (pre, data) = syms.split_at(10);
        let metrics = t.table().branch_metrics(&w.samples[10 * q..60 * q]);
        let init = InitialMetrics::Known(t.state_after(pre).unwrap());
        let c = viterbi(&metrics, t.table(), init);
        assert_eq!(c.symbols, data);
        let lists = plva(&metrics, t.table(), ListConfig::new(4, 8).unwrap(), init);
        assert_eq!(lists[0].symbols, data);
        assert_eq!(lists[0].metric, c.metric);
        for w in lists.windows(2) {
            assert!(w[0].metric >= w[1].metric);
            assert_ne!(w[0].symbols, w[1].symbols);
        }
    }

    #[test]
    fn uniform_start_candidates_are_distinct() {
        let cfg = ModulationConfig::default();
        let pulse = make_phase_pulse(&cfg);
        let t = build_coherent_trellis(&cfg, &pulse);
        let syms = lcg_symbols(30, 4);
        let w = modulate(&syms, &cfg, &pulse);
        let metrics = t.table().branch_metrics(&w.samples[5 * 8..30 * 8]);
        let c = plva(&metrics, t.table(), ListConfig::new(8, 64).unwrap(), InitialMetrics::Uniform);
        let set: HashSet<_> = c.iter().map(|c| c.symbols.clone()).collect();
        assert_eq!(set.len(), c.len());
        for cand in &c {
            let m = path_metric(&metrics, t.table(), cand.initial_state, &cand.symbols);
            assert!((m - cand.metric).abs() < 1e-9 * m.abs().max(1.0));
        }
    }

    #[test]
    fn short_lists_are_not_padded() {
        let cfg = ModulationConfig::default();
        let pulse = make_phase_pulse(&cfg);
        let t = build_coherent_trellis(&cfg, &pulse);
        let syms = lcg_symbols(12, 2);
        let w = modulate(&syms, &cfg, &pulse);
        let metrics = t.table().branch_metrics(&w.samples[4 * 8..12 * 8]);
        let init = InitialMetrics::Known(t.state_after(&syms[..4]).unwrap());
        let lists = plva_lists(&metrics, t.table(), 64, init, true);
        // After n stages at most 2^n paths exist in total.
        for n in 0..=lists.n_stages() {
            let total: usize = (0..16).map(|s| lists.list_len(n, s)).sum();
            assert_eq!(total, 1 << n);
            for s in 0..16 {
                let m = lists.metrics(n, s).unwrap();
                assert!(m.iter().all(|v| v.is_finite()));
            }
        }
        let all = lists.extract(t.table(), 1000);
        assert_eq!(all.len(), 256);
        let _ = input_of(1);
    }

    #[test]
    fn report_text_has_histogram() {
        let report = DecodeReport {
            candidates: 4,
            tried: 3,
            first_success: Some(2),
            outcomes: vec![Some(Rejection::BadCrc), Some(Rejection::BadLength(183)), None],
        };
        let text = report.to_text();
        assert!(text.contains("tried 3"));
        assert!(text.contains("first_success_rank 3"));
        assert!(text.contains("reject.bad_crc 1"));
        assert!(text.contains("reject.bad_length 1"));
    }

    fn noisy_metrics(
        detector: Detector,
        n: usize,
        sigma: f64,
        seed: u64,
    ) -> (Receiver, BranchMetrics, Vec<f64>, Vec<Symbol>) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let rx = Receiver::new(ModulationConfig::default(), detector, ListConfig::VITERBI).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = lcg_symbols(n, seed);
        let mut syms = rx.preamble.clone();
        syms.extend_from_slice(&data);
        let mut w = modulate(&syms, rx.config(), rx.pulse());
        let amp = rx.config().amplitude();
        let normal = Normal::new(0.0, sigma * amp).unwrap();
        for x in &mut w.samples {
            *x += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        let acq = Acquisition {
            channel: UserChannel::default(),
            burst_symbols: syms.len(),
        };
        let prepared = rx.prepare(&w, &acq);
        let table = rx.trellis().table();
        let metrics = table.branch_metrics(&prepared.stages);
        let terminal = table.terminal_metrics(&prepared.tail).unwrap();
        (rx, metrics, terminal, data)
    }

    /// Plain forward recursion of the best metric into every state.
    fn best_metrics(metrics: &BranchMetrics, table: &TrellisTable, init: usize) -> Vec<Vec<f64>> {
        let s_count = table.num_states();
        let mut cum = vec![f64::NEG_INFINITY; s_count];
        cum[init] = 0.0;
        let mut all = vec![cum.clone()];
        for n in 0..metrics.n_stages() {
            let mut next = vec![f64::NEG_INFINITY; s_count];
            for s in 0..s_count {
                for i in 0..M {
                    let ns = table.next_state(s, i);
                    next[ns] = next[ns].max(cum[s] + metrics.get(n, s, i));
                }
            }
            all.push(next.clone());
            cum = next;
        }
        all
    }

    #[test]
    fn noiseless_packets_decode_at_rank_one() {
        use crate::frame::{build_packet, Payload};
        let payload = Payload::new((0..168).map(|i| ((i * 5 / 3) % 2) as u8).collect()).unwrap();
        let packet = build_packet(&payload).unwrap();
        for det in [Detector::Coherent, Detector::Differential { delay: 1 }, Detector::Differential { delay: 3 }] {
            let rx = Receiver::new(ModulationConfig::default(), det, ListConfig::new(4, 4).unwrap()).unwrap();
            let w = modulate(&packet.symbols(1), rx.config(), rx.pulse());
            let acq = Acquisition {
                channel: UserChannel::default(),
                burst_symbols: packet.total_len(),
            };
            let ok = rx.decode_packet(&w, &acq).unwrap();
            assert_eq!(ok.payload, payload);
            assert_eq!(ok.rank, 0);
            assert_eq!(ok.report.tried, 1);
            let slot = rx.with_window(DecodeWindow::Slot);
            assert_eq!(slot.decode_packet(&w, &acq).unwrap().payload, payload);
        }
    }

    #[test]
    fn pure_noise_fails_with_reasons() {
        use rand::SeedableRng;
        let cfg = ModulationConfig::default();
        let mut w = Waveform::zeros(300 * cfg.oversampling, cfg.sample_rate(), 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        crate::channel::add_noise_with(&mut w, 1e6, &mut rng);
        let rx = Receiver::new(cfg, Detector::Coherent, ListConfig::new(8, 32).unwrap())
            .unwrap()
            .with_stop_criterion(false);
        let acq = Acquisition {
            channel: UserChannel::default(),
            burst_symbols: 250,
        };
        let err = rx.decode_packet(&w, &acq).unwrap_err();
        assert_eq!(err.report.tried, 32);
        assert_eq!(err.report.histogram().values().sum::<usize>(), 32);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn list_search_invariants(seed in 0u64..1_000_000, sigma in 0.2f64..1.5, diff in proptest::bool::ANY) {
            let det = if diff { Detector::Differential { delay: 3 } } else { Detector::Coherent };
            let (rx, metrics, terminal, _) = noisy_metrics(det, 60, sigma, seed);
            let table = rx.trellis().table();
            let init = rx.initial_metrics();
            let InitialMetrics::Known(start) = init else { unreachable!() };

            // Rank one follows the Viterbi recursion at every stage.
            let lists = plva_lists(&metrics, table, 8, init, true);
            let best = best_metrics(&metrics, table, start);
            for n in 0..=metrics.n_stages() {
                for s in 0..table.num_states() {
                    let m = lists.metrics(n, s).unwrap();
                    if best[n][s].is_finite() {
                        proptest::prop_assert_eq!(m[0], best[n][s]);
                    } else {
                        proptest::prop_assert!(m.is_empty());
                    }
                    proptest::prop_assert!(m.windows(2).all(|w| w[0] >= w[1]));
                }
            }

            // Smaller lists are prefixes of larger ones.
            let small = plva_lists(&metrics, table, 3, init, true);
            for n in 0..=metrics.n_stages() {
                for s in 0..table.num_states() {
                    let a = small.metrics(n, s).unwrap();
                    let b = lists.metrics(n, s).unwrap();
                    proptest::prop_assert_eq!(a, &b[..a.len()]);
                }
            }

            // Extracted paths are distinct, sorted, and carry their own metric.
            let cands = plva_terminated(&metrics, table, ListConfig::new(8, 40).unwrap(), init, &terminal);
            proptest::prop_assert_eq!(cands.len(), 40);
            let set: HashSet<_> = cands.iter().map(|c| c.symbols.clone()).collect();
            proptest::prop_assert_eq!(set.len(), cands.len());
            for (k, c) in cands.iter().enumerate() {
                proptest::prop_assert_eq!(c.rank, k);
                proptest::prop_assert_eq!(c.initial_state, start);
                let m = path_metric(&metrics, table, start, &c.symbols) + terminal[c.final_state];
                proptest::prop_assert!((m - c.metric).abs() <= 1e-9 * m.abs().max(1.0));
            }
            proptest::prop_assert!(cands.windows(2).all(|w| w[0].metric >= w[1].metric));

            // The classical search is the one-path special case.
            let va = viterbi_terminated(&metrics, table, init, &terminal);
            let one = plva_terminated(&metrics, table, ListConfig::VITERBI, init, &terminal);
            proptest::prop_assert_eq!(&one[0], &va);
            proptest::prop_assert_eq!(&cands[0].symbols, &va.symbols);
        }

        #[test]
        fn ordering_is_invariant_to_positive_scaling(seed in 0u64..1_000_000) {
            let cfg = ModulationConfig::default();
            let (rx, _, _, data) = noisy_metrics(Detector::Coherent, 40, 0.8, seed);
            let mut syms = rx.preamble.clone();
            syms.extend_from_slice(&data);
            let w = modulate(&syms, &cfg, rx.pulse());
            let q = cfg.oversampling;
            let mut noisy = w.samples[PREAMBLE_BITS * q..(PREAMBLE_BITS + 40) * q].to_vec();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let mut nw = Waveform::new(std::mem::take(&mut noisy), cfg.sample_rate(), 0.0);
            crate::channel::add_noise_with(&mut nw, 0.5 * cfg.amplitude().powi(2), &mut rng);
            let seg = &nw.samples[..];
            let scaled: Vec<Complex64> = seg.iter().map(|s| s * 3.7).collect();
            let table = rx.trellis().table();
            let a = plva(&table.branch_metrics(seg), table, ListConfig::new(4, 16).unwrap(), rx.initial_metrics());
            let b = plva(&table.branch_metrics(&scaled), table, ListConfig::new(4, 16).unwrap(), rx.initial_metrics());
            let sa: Vec<_> = a.iter().map(|c| &c.symbols).collect();
            let sb: Vec<_> = b.iter().map(|c| &c.symbols).collect();
            proptest::prop_assert_eq!(sa, sb);
        }
    }
}
