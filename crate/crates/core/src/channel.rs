//! Line-of-sight propagation, multi-user superposition and AWGN.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmsk::{ModulationConfig, Waveform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),
    #[error("a scene needs at least one user")]
    EmptyScene,
    #[error("invalid user channel: {0}")]
    InvalidChannel(String),
    #[error("scene description: {0}")]
    Description(String),
}

/// Per-user propagation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    /// Linear amplitude gain.
    pub attenuation: f64,
    /// Seconds.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
    /// Radians in `[0, 2 pi)`.
    pub phase: f64,
    /// Hz/s. Always zero in the shipped scenarios.
    pub doppler_rate: f64,
}

impl Default for UserChannel {
    fn default() -> Self {
        UserChannel {
            attenuation: 1.0,
            delay: 0.0,
            doppler: 0.0,
            phase: 0.0,
            doppler_rate: 0.0,
        }
    }
}

impl UserChannel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.attenuation >= 0.0) {
            return Err(ChannelError::InvalidChannel(format!(
                "attenuation {} is negative",
                self.attenuation
            )));
        }
        if !(0.0..2.0 * PI).contains(&self.phase) {
            return Err(ChannelError::InvalidChannel(format!(
                "phase {} outside [0, 2pi)",
                self.phase
            )));
        }
        if !self.delay.is_finite() || !self.doppler.is_finite() {
            return Err(ChannelError::InvalidChannel("non-finite delay or doppler".into()));
        }
        Ok(())
    }

    /// Carrier rotation `2 pi f_d t + phi` (plus the Doppler rate term).
    #[inline]
    pub fn rotation(&self, t: f64) -> f64 {
        2.0 * PI * (self.doppler + 0.5 * self.doppler_rate * t) * t + self.phase
    }

    /// Delay rounded to the sample grid.
    pub fn delay_samples(&self, sample_rate: f64) -> i64 {
        (self.delay * sample_rate).round() as i64
    }
}

/// `alpha * w(t - tau) * exp(j (2 pi f_d t + phi))`, with `tau` rounded to the
/// nearest sample.
pub fn apply_user_channel(w: &Waveform, ch: &UserChannel) -> Waveform {
    let shift = ch.delay_samples(w.sample_rate) as f64 / w.sample_rate;
    let origin = w.origin_time + shift;
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let t = origin + k as f64 / w.sample_rate;
            s * Complex64::from_polar(ch.attenuation, ch.rotation(t))
        })
        .collect();
    Waveform::new(samples, w.sample_rate, origin)
}

/// Colliding users in one observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotScene {
    /// Transmitted waveforms (starting at time zero) and their channels.
    pub users: Vec<(Waveform, UserChannel)>,
    /// Start of the observation window, seconds.
    pub start_time: f64,
    /// Length of the observation window, seconds.
    pub span: f64,
}

impl SlotScene {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

/// Sample-wise sum of all users on the scene's time grid.
pub fn superpose(scene: &SlotScene) -> Result<Waveform, ChannelError> {
    let first = scene.users.first().ok_or(ChannelError::EmptyScene)?;
    let fs = first.0.sample_rate;
    for (w, _) in &scene.users {
        if w.sample_rate != fs {
            return Err(ChannelError::SampleRateMismatch(fs, w.sample_rate));
        }
    }
    let start = (scene.start_time * fs).round() as i64;
    let len = (scene.span * fs).round() as usize;
    let mut out = Waveform::zeros(len, fs, start as f64 / fs);
    for (w, ch) in &scene.users {
        add_user_into(&mut out, w, ch);
    }
    Ok(out)
}

/// Adds one user's received signal into `out`, clipping to its support.
pub fn add_user_into(out: &mut Waveform, w: &Waveform, ch: &UserChannel) {
    let fs = out.sample_rate;
    let out_start = (out.origin_time * fs).round() as i64;
    let user_start = (w.origin_time * fs).round() as i64 + ch.delay_samples(fs);
    let first = (user_start - out_start).max(0);
    let last = (user_start + w.len() as i64 - out_start).min(out.len() as i64);
    for idx in first..last {
        let src = (idx + out_start - user_start) as usize;
        let t = (idx + out_start) as f64 / fs;
        out.samples[idx as usize] += w.samples[src] * Complex64::from_polar(ch.attenuation, ch.rotation(t));
    }
}

/// Noise level of a simulation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Eb/N0 in dB; `f64::INFINITY` disables the noise.
    pub ebn0_db: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            ebn0_db: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.ebn0_db == f64::INFINITY
    }
}

/// `N0` for a given Eb/N0 with `Eb = Es`.
pub fn noise_density(ebn0_db: f64, symbol_energy: f64) -> f64 {
    symbol_energy / 10f64.powf(ebn0_db / 10.0)
}

/// Variance of each complex noise sample: `2 N0 Fs`.
///
/// With the `sqrt(2 Es / Ts)` envelope, a symbol carries `2 Es` of envelope
/// energy, and this variance gives the correlator the antipodal error rate
/// `Q(sqrt(2 Eb / N0))`.
pub fn noise_variance(ebn0_db: f64, symbol_energy: f64, cfg: &ModulationConfig) -> f64 {
    if ebn0_db == f64::INFINITY {
        return 0.0;
    }
    2.0 * noise_density(ebn0_db, symbol_energy) * cfg.sample_rate()
}

/// Adds circular complex Gaussian noise of total variance `variance`.
pub fn add_noise_with<R: Rng + ?Sized>(w: &mut Waveform, variance: f64, rng: &mut R) {
    if variance <= 0.0 {
        return;
    }
    let sigma = (variance / 2.0).sqrt();
    for s in w.samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sigma * re, sigma * im);
    }
}

/// AWGN calibrated to `cfg.ebn0_db` for symbol energy `es`, seeded from
/// `cfg.seed`.
pub fn add_awgn(w: &Waveform, cfg: &NoiseConfig, es: f64, modulation: &ModulationConfig) -> Waveform {
    let mut out = w.clone();
    let var = noise_variance(cfg.ebn0_db, es, modulation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    add_noise_with(&mut out, var, &mut rng);
    out
}

/// One user of a text scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    #[serde(default)]
    pub attenuation_db: f64,
    #[serde(default)]
    pub delay_symbols: f64,
    #[serde(default)]
    pub doppler_hz: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl UserSpec {
    pub fn to_channel(&self, cfg: &ModulationConfig) -> Result<UserChannel, ChannelError> {
        let ch = UserChannel {
            attenuation: 10f64.powf(-self.attenuation_db / 20.0),
            delay: self.delay_symbols * cfg.symbol_period,
            doppler: self.doppler_hz,
            phase: self.phase_deg.rem_euclid(360.0).to_radians(),
            doppler_rate: 0.0,
        };
        ch.validate()?;
        Ok(ch)
    }
}

/// Scene description: a list of `[[user]]` tables with attenuation (dB),
/// delay (symbols), Doppler (Hz) and phase (degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    #[serde(rename = "user")]
    pub users: Vec<UserSpec>,
}

impl SceneDescription {
    pub fn from_toml_str(text: &str) -> Result<Self, ChannelError> {
        let desc: SceneDescription =
            toml::from_str(text).map_err(|e| ChannelError::Description(e.to_string()))?;
        if desc.users.is_empty() {
            return Err(ChannelError::EmptyScene);
        }
        Ok(desc)
    }

    pub fn channels(&self, cfg: &ModulationConfig) -> Result<Vec<UserChannel>, ChannelError> {
        self.users.iter().map(|u| u.to_channel(cfg)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Symbol;
    use crate::gmsk::{make_phase_pulse, modulate};

    fn test_wave() -> (ModulationConfig, Waveform) {
        let cfg = ModulationConfig::default();
        let pulse = make_phase_pulse(&cfg);
        let syms: Vec<Symbol> = (0..32).map(|i| if (i * 7) % 3 == 0 { 1 } else { -1 }).collect();
        (cfg, modulate(&syms, &cfg, &pulse))
    }

    #[test]
    fn neutral_channel_is_identity() {
        let (_, w) = test_wave();
        let out = apply_user_channel(&w, &UserChannel::default());
        assert_eq!(out, w);
    }

    #[test]
    fn phase_pi_negates() {
        let (_, w) = test_wave();
        let ch = UserChannel {
            phase: PI,
            ..Default::default()
        };
        let out = apply_user_channel(&w, &ch);
        for (a, b) in out.samples.iter().zip(&w.samples) {
            assert!((a + b).norm() < 1e-9);
        }
    }

    #[test]
    fn opposite_users_cancel() {
        let (cfg, w) = test_wave();
        let ch1 = UserChannel {
            phase: 0.3,
            delay: 3.0 * cfg.symbol_period,
            ..Default::default()
        };
        let ch2 = UserChannel {
            phase: 0.3 + PI,
            ..ch1
        };
        let scene = SlotScene {
            users: vec![(w.clone(), ch1), (w.clone(), ch2)],
            start_time: 0.0,
            span: 40.0 * cfg.symbol_period,
        };
        let r = superpose(&scene).unwrap();
        assert!(r.samples.iter().all(|s| s.norm() < 1e-9));
    }

    #[test]
    fn single_user_scene_matches_channel() {
        let (cfg, w) = test_wave();
        let ch = UserChannel {
            attenuation: 0.5,
            delay: 2.0 * cfg.symbol_period,
            doppler: 1200.0,
            phase: 1.0,
            doppler_rate: 0.0,
        };
        let direct = apply_user_channel(&w, &ch);
        let scene = SlotScene {
            users: vec![(w.clone(), ch)],
            start_time: direct.origin_time,
            span: direct.len() as f64 / direct.sample_rate,
        };
        let r = superpose(&scene).unwrap();
        assert_eq!(r.len(), direct.len());
        for (a, b) in r.samples.iter().zip(&direct.samples) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn superpose_rejects_mixed_rates() {
        let (_, w) = test_wave();
        let mut w2 = w.clone();
        w2.sample_rate *= 2.0;
        let scene = SlotScene {
            users: vec![(w, UserChannel::default()), (w2, UserChannel::default())],
            start_time: 0.0,
            span: 1e-3,
        };
        assert!(matches!(superpose(&scene), Err(ChannelError::SampleRateMismatch(..))));
        let empty = SlotScene {
            users: vec![],
            start_time: 0.0,
            span: 1e-3,
        };
        assert_eq!(superpose(&empty), Err(ChannelError::EmptyScene));
    }

    #[test]
    fn noiseless_awgn_is_identity_and_seeded_noise_repeats() {
        let (cfg, w) = test_wave();
        assert_eq!(add_awgn(&w, &NoiseConfig::noiseless(), 1.0, &cfg), w);
        let n = NoiseConfig {
            ebn0_db: 5.0,
            seed: 42,
        };
        assert_eq!(add_awgn(&w, &n, 1.0, &cfg), add_awgn(&w, &n, 1.0, &cfg));
        let other = NoiseConfig { seed: 43, ..n };
        assert_ne!(add_awgn(&w, &n, 1.0, &cfg), add_awgn(&w, &other, 1.0, &cfg));
    }

    #[test]
    fn scene_description_parses() {
        let cfg = ModulationConfig::default();
        let text = r#"
            [[user]]
            attenuation_db = 0
            [[user]]
            attenuation_db = 3
            delay_symbols = 40.5
            doppler_hz = -250
            phase_deg = 450
        "#;
        let desc = SceneDescription::from_toml_str(text).unwrap();
        let ch = desc.channels(&cfg).unwrap();
        assert_eq!(ch.len(), 2);
        assert!((ch[1].attenuation - 10f64.powf(-0.15)).abs() < 1e-12);
        assert!((ch[1].delay - 40.5 / 9600.0).abs() < 1e-15);
        assert!((ch[1].phase - PI / 2.0).abs() < 1e-12);
        assert!(SceneDescription::from_toml_str("[[user]]\nbogus = 1").is_err());
    }

    #[test]
    fn doppler_shifts_the_spectrum_by_whole_bins() {
        use rustfft::FftPlanner;
        let (cfg, w) = test_wave();
        let n = w.len();
        let k = 5;
        let ch = UserChannel {
            doppler: k as f64 * cfg.sample_rate() / n as f64,
            ..Default::default()
        };
        let shifted = apply_user_channel(&w, &ch);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut a = w.samples.clone();
        let mut b = shifted.samples.clone();
        fft.process(&mut a);
        fft.process(&mut b);
        let scale = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for i in 0..n {
            assert!((b[(i + k) % n] - a[i]).norm() < 1e-9 * scale, "bin {i}");
        }
    }

    #[test]
    fn noise_variance_statistics() {
        let cfg = ModulationConfig::default();
        let var = noise_variance(6.0, 1.0, &cfg);
        let mut w = Waveform::zeros(1_000_000, cfg.sample_rate(), 0.0);
        add_noise_with(&mut w, var, &mut ChaCha8Rng::seed_from_u64(12));
        let measured = w.mean_power();
        assert!((measured / var - 1.0).abs() < 0.01, "{measured} vs {var}");
        let re: f64 = w.samples.iter().map(|s| s.re * s.re).sum::<f64>() / w.len() as f64;
        assert!((re / (var / 2.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn envelope_energy_matches_configured_ebn0() {
        // Es measured from the waveform against N0 recovered from the variance.
        let (cfg, w) = test_wave();
        let q = cfg.oversampling;
        let n_sym = w.len() / q;
        let es = w.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * cfg.sample_period() / (2.0 * n_sym as f64);
        let n0 = noise_variance(7.5, cfg.symbol_energy, &cfg) / (2.0 * cfg.sample_rate());
        let db = 10.0 * (es / n0).log10();
        assert!((db - 7.5).abs() < 0.05, "{db}");
    }

    #[test]
    fn superposition_is_linear() {
        let (cfg, w) = test_wave();
        let mk = |a: f64| SlotScene {
            users: vec![
                (w.clone(), UserChannel { attenuation: a, delay: 3.0 * cfg.symbol_period, doppler: 120.0, phase: 0.3, doppler_rate: 0.0 }),
                (w.clone(), UserChannel { attenuation: 0.5 * a, delay: 0.0, doppler: -40.0, phase: 1.9, doppler_rate: 0.0 }),
            ],
            start_time: 0.0,
            span: 40.0 * cfg.symbol_period,
        };
        let one = superpose(&mk(1.0)).unwrap();
        let two = superpose(&mk(2.5)).unwrap();
        for (a, b) in one.samples.iter().zip(&two.samples) {
            assert!((a * 2.5 - b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn noiseless_config_leaves_signal_unchanged() {
        let (cfg, w) = test_wave();
        assert_eq!(add_awgn(&w, &NoiseConfig::noiseless(), 1.0, &cfg), w);
        let a = add_awgn(&w, &NoiseConfig { ebn0_db: 5.0, seed: 3 }, 1.0, &cfg);
        let b = add_awgn(&w, &NoiseConfig { ebn0_db: 5.0, seed: 3 }, 1.0, &cfg);
        assert_eq!(a, b);
        assert_ne!(a, w);
    }
}
