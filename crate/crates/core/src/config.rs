//! Experiment configuration, loadable from TOML.
//!
//! Every table and field is optional; missing values take the defaults
//! below, and unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{DecodeWindow, Detector, ListConfig};
use crate::gmsk::ModulationConfig;
use crate::scenario::{ArrivalProcess, LinkBudget, OrbitGeometry, TwoUserScenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid grid {0:?}: expected start:stop:step, a,b,c or a single value")]
    Grid(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Inclusive arithmetic grid, written `start:stop:step`, or an explicit
/// list of values (`a,b,c` on the command line). `inf` is accepted as a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid(pub Vec<f64>);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum GridRepr {
    Range(String),
    List(Vec<f64>),
    Single(f64),
}

impl TryFrom<GridRepr> for Grid {
    type Error = ConfigError;

    fn try_from(r: GridRepr) -> Result<Self, ConfigError> {
        match r {
            GridRepr::Range(s) => s.parse(),
            GridRepr::List(v) => Ok(Grid(v)),
            GridRepr::Single(x) => Ok(Grid(vec![x])),
        }
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr::List(g.0)
    }
}

fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        t => t.parse().ok().filter(|x: &f64| x.is_finite()),
    }
}

impl FromStr for Grid {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::Grid(s.to_string());
        if s.contains(',') {
            return s
                .split(',')
                .map(|v| parse_value(v).ok_or_else(bad))
                .collect::<Result<_, _>>()
                .map(Grid);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [x] => Ok(Grid(vec![parse_value(x).ok_or_else(bad)?])),
            [a, b, step] => {
                let a = parse_value(a).filter(|x| x.is_finite()).ok_or_else(bad)?;
                let b = parse_value(b).filter(|x| x.is_finite()).ok_or_else(bad)?;
                let step = parse_value(step).filter(|x| *x > 0.0 && x.is_finite()).ok_or_else(bad)?;
                if b < a {
                    return Err(bad());
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                Ok(Grid(
                    (0..=n)
                        .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
                        .collect(),
                ))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// One receiver of a comparison: detector plus list sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    pub detector: Detector,
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default = "one")]
    pub candidates: usize,
}

fn one() -> usize {
    1
}

impl ReceiverSpec {
    pub fn new(detector: Detector, paths: usize, candidates: usize) -> Self {
        ReceiverSpec {
            detector,
            paths,
            candidates,
        }
    }

    pub fn list(&self) -> ListConfig {
        ListConfig {
            paths: self.paths,
            candidates: self.candidates,
        }
    }
}

impl fmt::Display for ReceiverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.detector, self.list())
    }
}

impl FromStr for ReceiverSpec {
    type Err = String;

    /// `detector` or `detector(P,C)`, e.g. `coherent(64,256)`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let Some((det, rest)) = s.split_once('(') else {
            return Ok(ReceiverSpec::new(s.parse()?, 1, 1));
        };
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("receiver {s:?}: missing ')'"))?;
        let (p, c) = inner
            .split_once(',')
            .ok_or_else(|| format!("receiver {s:?}: expected (P,C)"))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("receiver {s:?}: bad list size {v:?}"))
        };
        let spec = ReceiverSpec::new(det.parse()?, num(p)?, num(c)?);
        spec.list().validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// Single-user AWGN PER sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerSweepConfig {
    pub detector: Detector,
    pub paths: usize,
    pub candidates: usize,
    /// Eb/N0 points in dB.
    pub ebn0: Grid,
    /// Packets per point at most.
    pub packets: u64,
    /// Stop a point after this many packet errors; 0 disables.
    pub max_errors: u64,
    pub window: DecodeWindow,
    pub uniform_init: bool,
}

impl Default for PerSweepConfig {
    fn default() -> Self {
        PerSweepConfig {
            detector: Detector::Coherent,
            paths: 1,
            candidates: 1,
            ebn0: Grid((0..=10).map(|i| 2.0 + i as f64).collect()),
            packets: 10_000,
            max_errors: 100,
            window: DecodeWindow::Burst,
            uniform_init: false,
        }
    }
}

impl PerSweepConfig {
    pub fn list(&self) -> ListConfig {
        ListConfig {
            paths: self.paths,
            candidates: self.candidates,
        }
    }
}

/// Two-user collision sweep over a grid of list sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoUserConfig {
    pub detector: Detector,
    /// `(P, C)` cells; empty selects the default grid of the detector.
    pub cells: Vec<(usize, usize)>,
    pub power_delta_db: f64,
    pub overlaps: Vec<f64>,
    pub doppler_delta_hz: f64,
    /// Eb/N0 of the user of interest, dB.
    pub ebn0: Grid,
    pub packets: u64,
    pub max_errors: u64,
}

impl Default for TwoUserConfig {
    fn default() -> Self {
        let sc = TwoUserScenario::default();
        TwoUserConfig {
            detector: Detector::Coherent,
            cells: Vec::new(),
            power_delta_db: sc.power_delta_db,
            overlaps: vec![0.17, 0.83],
            doppler_delta_hz: sc.doppler_delta_hz,
            ebn0: Grid(vec![8.0]),
            packets: 2_000,
            max_errors: 0,
        }
    }
}

impl TwoUserConfig {
    /// The configured cells, or the default nested grid of the detector.
    pub fn list_cells(&self) -> Vec<ListConfig> {
        if !self.cells.is_empty() {
            return self
                .cells
                .iter()
                .map(|&(paths, candidates)| ListConfig { paths, candidates })
                .collect();
        }
        let cells: &[(usize, usize)] = match self.detector {
            Detector::Coherent => &[(1, 1), (4, 16), (16, 64), (64, 64), (64, 256), (256, 256)],
            Detector::Differential { .. } => {
                &[(1, 1), (4, 16), (32, 128), (128, 128), (128, 512), (512, 512)]
            }
        };
        cells
            .iter()
            .map(|&(paths, candidates)| ListConfig { paths, candidates })
            .collect()
    }

    pub fn scenario(&self, overlap: f64) -> TwoUserScenario {
        TwoUserScenario {
            power_delta_db: self.power_delta_db,
            overlap_fraction: overlap,
            doppler_delta_hz: self.doppler_delta_hz,
        }
    }
}

/// Slotted ALOHA throughput sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputConfig {
    /// Offered loads in packets per slot.
    pub loads: Grid,
    pub n_slots: usize,
    pub n_frames: usize,
    pub arrivals: ArrivalProcess,
    pub receivers: Vec<ReceiverSpec>,
    pub geometry: OrbitGeometry,
    pub link: LinkBudget,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        ThroughputConfig {
            loads: Grid((1..=8).map(|i| 0.25 * i as f64).collect()),
            n_slots: 2250,
            n_frames: 50,
            arrivals: ArrivalProcess::Poisson,
            receivers: vec![
                ReceiverSpec::new(Detector::Coherent, 1, 1),
                ReceiverSpec::new(Detector::Coherent, 64, 256),
                ReceiverSpec::new(Detector::Differential { delay: 1 }, 1, 1),
            ],
            geometry: OrbitGeometry::default(),
            link: LinkBudget::default(),
        }
    }
}

/// Full configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub modulation: ModulationConfig,
    pub per_sweep: PerSweepConfig,
    pub two_user: TwoUserConfig,
    pub throughput: ThroughputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            workers: 0,
            modulation: ModulationConfig::default(),
            per_sweep: PerSweepConfig::default(),
            two_user: TwoUserConfig::default(),
            throughput: ThroughputConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.modulation.validate() {
            return inv(e.to_string());
        }
        let p = &self.per_sweep;
        if let Err(e) = p.list().validate() {
            return inv(e.to_string());
        }
        if p.packets == 0 || self.two_user.packets == 0 {
            return inv("packet count must be positive".into());
        }
        if p.ebn0.0.is_empty() || self.two_user.ebn0.0.is_empty() {
            return inv("empty Eb/N0 grid".into());
        }
        for cell in self.two_user.list_cells() {
            if let Err(e) = cell.validate() {
                return inv(e.to_string());
            }
        }
        for &f in &self.two_user.overlaps {
            if let Err(e) = self.two_user.scenario(f).validate() {
                return inv(e);
            }
        }
        let t = &self.throughput;
        if t.n_slots == 0 {
            return inv("n_slots must be positive".into());
        }
        if t.loads.0.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return inv("offered loads must be finite and non-negative".into());
        }
        for r in &t.receivers {
            if let Err(e) = r.list().validate() {
                return inv(e.to_string());
            }
        }
        if let Err(e) = t.geometry.validate() {
            return inv(e);
        }
        Ok(())
    }
}
