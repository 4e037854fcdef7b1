//! Continuous phase modulation with a Gaussian (GMSK) or rectangular
//! frequency pulse.
//!
//! The complex envelope is `sqrt(2 Es / Ts) * exp(j theta(t))` with
//! `theta(t) = 2 pi h sum_i a_i q(t - i Ts)` and `q` the phase pulse, i.e. the
//! integral of the frequency pulse truncated to `L` symbol periods.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Symbol;

/// Quadrature sub-steps per output sample when integrating the frequency pulse.
const QUADRATURE_SUBSTEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("symbol period must be positive, got {0}")]
    SymbolPeriod(f64),
    #[error("bandwidth-time product must be positive, got {0}")]
    Bandwidth(f64),
    #[error("CPM memory must be at least 1")]
    Memory,
    #[error("modulation index {0}/{1} is not a reduced positive fraction")]
    ModulationIndex(u32, u32),
    #[error("oversampling must be at least 2, got {0}")]
    Oversampling(usize),
    #[error("symbol energy must be positive, got {0}")]
    SymbolEnergy(f64),
}

/// Frequency pulse family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PulseShape {
    /// Gaussian pulse with the given bandwidth-time product.
    Gaussian { bt: f64 },
    /// Rectangular pulse spanning the whole memory (LREC).
    Rectangular,
}

/// Modulation index `h = num / den` with co-prime terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModIndex {
    pub num: u32,
    pub den: u32,
}

impl ModIndex {
    pub fn new(num: u32, den: u32) -> Result<Self, ConfigError> {
        let idx = ModIndex { num, den };
        idx.validate()?;
        Ok(idx)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.num == 0 || self.den == 0 || gcd(self.num, self.den) != 1 {
            return Err(ConfigError::ModulationIndex(self.num, self.den));
        }
        Ok(())
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

pub(crate) fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    /// Seconds.
    pub symbol_period: f64,
    pub pulse: PulseShape,
    /// Pulse memory `L` in symbols.
    pub memory: usize,
    pub index: ModIndex,
    /// Energy per symbol (equal to the energy per bit).
    pub symbol_energy: f64,
    /// Samples per symbol.
    pub oversampling: usize,
}

impl Default for ModulationConfig {
    /// AIS: 9600 baud GMSK, BT = 0.4, L = 3, h = 1/2.
    fn default() -> Self {
        ModulationConfig {
            symbol_period: 1.0 / 9600.0,
            pulse: PulseShape::Gaussian { bt: 0.4 },
            memory: 3,
            index: ModIndex { num: 1, den: 2 },
            symbol_energy: 1.0,
            oversampling: 8,
        }
    }
}

impl ModulationConfig {
    /// Full-response MSK: L = 1 rectangular pulse, h = 1/2.
    pub fn msk() -> Self {
        ModulationConfig {
            pulse: PulseShape::Rectangular,
            memory: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.symbol_period > 0.0) {
            return Err(ConfigError::SymbolPeriod(self.symbol_period));
        }
        if let PulseShape::Gaussian { bt } = self.pulse {
            if !(bt > 0.0) {
                return Err(ConfigError::Bandwidth(bt));
            }
        }
        if self.memory < 1 {
            return Err(ConfigError::Memory);
        }
        self.index.validate()?;
        if self.oversampling < 2 {
            return Err(ConfigError::Oversampling(self.oversampling));
        }
        if !(self.symbol_energy > 0.0) {
            return Err(ConfigError::SymbolEnergy(self.symbol_energy));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.oversampling as f64 / self.symbol_period
    }

    pub fn sample_period(&self) -> f64 {
        self.symbol_period / self.oversampling as f64
    }

    /// `sqrt(2 Es / Ts)`.
    pub fn amplitude(&self) -> f64 {
        (2.0 * self.symbol_energy / self.symbol_period).sqrt()
    }
}

/// Gaussian frequency pulse of unit symbol period centred on zero, scaled so
/// that its untruncated integral is 1/2.
pub fn gaussian_frequency_pulse(t: f64, bt: f64) -> f64 {
    let k = 2.0 * PI * bt / LN_2.sqrt();
    0.5 * (gauss_q(k * (t - 0.5)) - gauss_q(k * (t + 0.5)))
}

/// Gaussian tail probability.
pub fn gauss_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Phase pulse `q(t)` sampled every `Ts / Q` over `[0, L Ts]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePulse {
    samples: Vec<f64>,
    oversampling: usize,
    memory: usize,
    truncation_loss: f64,
}

impl PhasePulse {
    /// Value at sample index `k` (time `k Ts / Q`); 0 before the pulse and
    /// 1/2 after it.
    #[inline]
    pub fn at(&self, k: isize) -> f64 {
        if k <= 0 {
            0.0
        } else if k as usize >= self.samples.len() {
            0.5
        } else {
            self.samples[k as usize]
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Pulse area lost to truncation, before renormalization.
    pub fn truncation_loss(&self) -> f64 {
        self.truncation_loss
    }
}

pub fn make_phase_pulse(cfg: &ModulationConfig) -> PhasePulse {
    let q_per = cfg.oversampling;
    let l = cfg.memory;
    let n = l * q_per;
    let mut samples = vec![0.0; n + 1];

    match cfg.pulse {
        PulseShape::Rectangular => {
            for (k, s) in samples.iter_mut().enumerate() {
                *s = 0.5 * k as f64 / n as f64;
            }
            PhasePulse {
                samples,
                oversampling: q_per,
                memory: l,
                truncation_loss: 0.0,
            }
        }
        PulseShape::Gaussian { bt } => {
            // Trapezoid rule on a refined grid, pulse centred at L/2 symbols.
            let centre = l as f64 / 2.0;
            let h = 1.0 / (q_per * QUADRATURE_SUBSTEPS) as f64;
            let g = |t: f64| gaussian_frequency_pulse(t - centre, bt);
            let mut acc = 0.0;
            let mut prev = g(0.0);
            for k in 1..=n {
                for s in 1..=QUADRATURE_SUBSTEPS {
                    let t = ((k - 1) * QUADRATURE_SUBSTEPS + s) as f64 * h;
                    let cur = g(t);
                    acc += 0.5 * (prev + cur) * h;
                    prev = cur;
                }
                samples[k] = acc;
            }
            let raw_end = samples[n];
            for s in samples.iter_mut() {
                *s *= 0.5 / raw_end;
            }
            samples[n] = 0.5;
            PhasePulse {
                samples,
                oversampling: q_per,
                memory: l,
                truncation_loss: 0.5 - raw_end,
            }
        }
    }
}

/// Uniformly sampled complex baseband signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    /// Hz.
    pub sample_rate: f64,
    /// Time of the first sample, seconds.
    pub origin_time: f64,
}

impl Waveform {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, origin_time: f64) -> Self {
        Waveform {
            samples,
            sample_rate,
            origin_time,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64, origin_time: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate, origin_time)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.origin_time + index as f64 / self.sample_rate
    }

    /// Mean of `|x|^2`.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Little-endian `f64` pairs (I, Q).
    pub fn write_iq<W: Write>(&self, mut out: W) -> io::Result<()> {
        for s in &self.samples {
            out.write_all(&s.re.to_le_bytes())?;
            out.write_all(&s.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time_s,i,q")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(out, "{:.9e},{:.17e},{:.17e}", self.time_of(k), s.re, s.im)?;
        }
        Ok(())
    }
}

/// Phase trajectory of `symbols` sampled every `Ts / Q`.
///
/// `L - 1` zero-valued symbols are appended so the last pulse completes; the
/// result has `(N + L - 1) Q` samples.
pub fn phase_trajectory(symbols: &[Symbol], cfg: &ModulationConfig, pulse: &PhasePulse) -> Vec<f64> {
    let q_per = cfg.oversampling;
    let l = cfg.memory;
    let n_sym = symbols.len() + l - 1;
    let pi_h = PI * cfg.index.value();
    let sym = |i: isize| -> f64 {
        if i < 0 || i as usize >= symbols.len() {
            0.0
        } else {
            symbols[i as usize] as f64
        }
    };
    let mut phase = Vec::with_capacity(n_sym * q_per);
    // Contribution of symbols whose pulse has completed.
    let mut settled = 0.0;
    for n in 0..n_sym as isize {
        if n - l as isize >= 0 {
            settled += pi_h * sym(n - l as isize);
        }
        for m in 0..q_per {
            let mut active = 0.0;
            for i in (n - l as isize + 1)..=n {
                let k = (n - i) as usize * q_per + m;
                active += sym(i) * pulse.at(k as isize);
            }
            phase.push(settled + 2.0 * pi_h * active);
        }
    }
    phase
}

pub fn modulate(symbols: &[Symbol], cfg: &ModulationConfig, pulse: &PhasePulse) -> Waveform {
    let amp = cfg.amplitude();
    let samples = phase_trajectory(symbols, cfg, pulse)
        .into_iter()
        .map(|th| Complex64::from_polar(amp, th))
        .collect();
    Waveform::new(samples, cfg.sample_rate(), 0.0)
}
