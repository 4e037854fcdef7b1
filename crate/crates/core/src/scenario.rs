//! Experiment scenes: single-user AWGN, two colliding users with a
//! controlled overlap, and slotted ALOHA frames seen from a LEO satellite.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise_with, add_user_into, noise_variance, UserChannel};
use crate::decoder::Acquisition;
use crate::frame::{build_packet, Packet, Payload, Symbol, FLAG_BITS, SLOT_BITS};
use crate::gmsk::{modulate, ModulationConfig, PhasePulse, Waveform};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const EARTH_RADIUS: f64 = 6_371_000.0;
/// Earth gravitational parameter, m^3/s^2.
pub const EARTH_MU: f64 = 3.986_004_418e14;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Extra symbols observed after a full slot, covering the pulse tail.
const WINDOW_MARGIN: usize = 4;

/// A packet ready for transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub payload: Payload,
    pub packet: Packet,
    pub symbols: Vec<Symbol>,
}

impl Transmission {
    /// Draws payloads until one fits the stuffing buffer.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let payload = Payload::random(rng);
            if let Ok(t) = Self::new(payload) {
                return t;
            }
        }
    }

    pub fn new(payload: Payload) -> Result<Self, crate::frame::FrameError> {
        let packet = build_packet(&payload)?;
        let symbols = packet.symbols(1);
        Ok(Transmission {
            payload,
            packet,
            symbols,
        })
    }

    pub fn waveform(&self, cfg: &ModulationConfig, pulse: &PhasePulse) -> Waveform {
        modulate(&self.symbols, cfg, pulse)
    }

    pub fn burst_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Stuffed data region (data, FCS and stuffing bits) in symbols.
    pub fn data_region(&self) -> std::ops::Range<usize> {
        self.packet.layout.data.clone()
    }
}

/// Receiver observation of one packet of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub received: Waveform,
    pub target: Acquisition,
    pub payload: Payload,
}

/// Samples spanning one slot plus margin from `start` seconds.
fn observation_window(cfg: &ModulationConfig, start: f64) -> Waveform {
    let fs = cfg.sample_rate();
    let len = (SLOT_BITS + cfg.memory + WINDOW_MARGIN) * cfg.oversampling;
    let start = (start * fs).round() / fs;
    Waveform::zeros(len, fs, start)
}

/// Single packet in AWGN with a random carrier phase.
pub fn single_user_observation<R: Rng + ?Sized>(
    cfg: &ModulationConfig,
    pulse: &PhasePulse,
    ebn0_db: f64,
    rng: &mut R,
) -> Observation {
    let tx = Transmission::random(rng);
    observe_transmission(tx, cfg, pulse, ebn0_db, rng)
}

/// `tx` in AWGN with a random carrier phase.
pub fn observe_transmission<R: Rng + ?Sized>(
    tx: Transmission,
    cfg: &ModulationConfig,
    pulse: &PhasePulse,
    ebn0_db: f64,
    rng: &mut R,
) -> Observation {
    let channel = UserChannel {
        phase: rng.random_range(0.0..2.0 * PI),
        ..Default::default()
    };
    let mut received = observation_window(cfg, 0.0);
    add_user_into(&mut received, &tx.waveform(cfg, pulse), &channel);
    add_noise_with(&mut received, noise_variance(ebn0_db, cfg.symbol_energy, cfg), rng);
    Observation {
        received,
        target: Acquisition {
            channel,
            burst_symbols: tx.burst_symbols(),
        },
        payload: tx.payload,
    }
}

/// Two-user collision: an interferer `power_delta_db` relative to the user of
/// interest, overlapping a fraction of its data region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoUserScenario {
    pub power_delta_db: f64,
    pub overlap_fraction: f64,
    pub doppler_delta_hz: f64,
}

impl Default for TwoUserScenario {
    fn default() -> Self {
        TwoUserScenario {
            power_delta_db: -3.0,
            overlap_fraction: 0.17,
            doppler_delta_hz: 0.0,
        }
    }
}

impl TwoUserScenario {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(format!("overlap fraction {} outside [0, 1]", self.overlap_fraction));
        }
        if !self.power_delta_db.is_finite() || !self.doppler_delta_hz.is_finite() {
            return Err("non-finite two-user parameter".into());
        }
        Ok(())
    }

    /// Interferer start, in symbols after the start of the user of interest.
    ///
    /// The interferer arrives late and covers the last `f` of the data
    /// region; with no overlap it starts after the end flag.
    pub fn interferer_offset(&self, tx: &Transmission) -> f64 {
        let data = tx.data_region();
        let len = data.len() as f64;
        if self.overlap_fraction <= 0.0 {
            (data.end + FLAG_BITS) as f64
        } else {
            data.end as f64 - self.overlap_fraction * len
        }
    }
}

/// Builds a two-user observation at the given Eb/N0 of the user of interest.
pub fn make_two_user_scene<R: Rng + ?Sized>(
    sc: &TwoUserScenario,
    cfg: &ModulationConfig,
    pulse: &PhasePulse,
    ebn0_db: f64,
    rng: &mut R,
) -> Observation {
    let user = Transmission::random(rng);
    let other = Transmission::random(rng);
    let user_ch = UserChannel {
        phase: rng.random_range(0.0..2.0 * PI),
        ..Default::default()
    };
    let offset = sc.interferer_offset(&user);
    let other_ch = UserChannel {
        attenuation: 10f64.powf(sc.power_delta_db / 20.0),
        delay: offset * cfg.symbol_period,
        doppler: sc.doppler_delta_hz,
        phase: rng.random_range(0.0..2.0 * PI),
        doppler_rate: 0.0,
    };
    let mut received = observation_window(cfg, 0.0);
    add_user_into(&mut received, &user.waveform(cfg, pulse), &user_ch);
    add_user_into(&mut received, &other.waveform(cfg, pulse), &other_ch);
    add_noise_with(&mut received, noise_variance(ebn0_db, cfg.symbol_energy, cfg), rng);
    Observation {
        received,
        target: Acquisition {
            channel: user_ch,
            burst_symbols: user.burst_symbols(),
        },
        payload: user.payload,
    }
}

/// Satellite orbit and visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitGeometry {
    /// Meters.
    pub altitude: f64,
    /// Meters.
    pub earth_radius: f64,
    /// Hz.
    pub carrier: f64,
    /// Degrees.
    pub min_elevation: f64,
}

impl Default for OrbitGeometry {
    fn default() -> Self {
        OrbitGeometry {
            altitude: 656_500.0,
            earth_radius: EARTH_RADIUS,
            carrier: 161.975e6,
            min_elevation: 0.0,
        }
    }
}

impl OrbitGeometry {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.altitude > 0.0) {
            return Err(format!("altitude {} must be positive", self.altitude));
        }
        if !(0.0..90.0).contains(&self.min_elevation) {
            return Err(format!("minimum elevation {} outside [0, 90)", self.min_elevation));
        }
        Ok(())
    }

    /// Earth central angle of the swath edge.
    pub fn max_central_angle(&self) -> f64 {
        let eps = self.min_elevation.to_radians();
        let r = self.earth_radius;
        (r * eps.cos() / (r + self.altitude)).acos() - eps
    }

    pub fn orbital_speed(&self) -> f64 {
        (EARTH_MU / (self.earth_radius + self.altitude)).sqrt()
    }

    /// Slant range at a given central angle.
    pub fn slant_range(&self, central_angle: f64) -> f64 {
        let r = self.earth_radius;
        let rs = r + self.altitude;
        (r * r + rs * rs - 2.0 * r * rs * central_angle.cos()).sqrt()
    }

    pub fn max_slant_range(&self) -> f64 {
        self.slant_range(self.max_central_angle())
    }

    /// Largest possible Doppler magnitude.
    pub fn max_doppler(&self) -> f64 {
        self.orbital_speed() / SPEED_OF_LIGHT * self.carrier
    }
}

/// Free-space link budget; the noise level is set so that a vessel at
/// nadir is received at `reference_ebn0_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_w: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub reference_ebn0_db: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget {
            tx_power_w: 12.5,
            tx_gain_dbi: 0.0,
            rx_gain_dbi: 0.0,
            reference_ebn0_db: 10.0,
        }
    }
}

impl LinkBudget {
    /// Received power in watts at `range` meters.
    pub fn received_power(&self, geom: &OrbitGeometry, range: f64) -> f64 {
        let lambda = SPEED_OF_LIGHT / geom.carrier;
        let gains = 10f64.powf((self.tx_gain_dbi + self.rx_gain_dbi) / 10.0);
        self.tx_power_w * gains * (lambda / (4.0 * PI * range)).powi(2)
    }

    /// System noise temperature implied by the reference Eb/N0.
    pub fn noise_temperature(&self, geom: &OrbitGeometry, bit_rate: f64) -> f64 {
        let c = self.received_power(geom, geom.altitude);
        let ebn0 = 10f64.powf(self.reference_ebn0_db / 10.0);
        c / (BOLTZMANN * bit_rate * ebn0)
    }

    /// Noise figure against a 290 K reference.
    pub fn noise_figure_db(&self, geom: &OrbitGeometry, bit_rate: f64) -> f64 {
        10.0 * (1.0 + self.noise_temperature(geom, bit_rate) / 290.0).log10()
    }

    /// Amplitude gain of a vessel at `range` relative to nadir.
    pub fn relative_amplitude(&self, geom: &OrbitGeometry, range: f64) -> f64 {
        geom.altitude / range
    }

    pub fn ebn0_db_at(&self, geom: &OrbitGeometry, range: f64) -> f64 {
        self.reference_ebn0_db - 20.0 * (range / geom.altitude).log10()
    }
}

/// A vessel position and its channel to the satellite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vessel {
    pub channel: UserChannel,
    /// Meters.
    pub range: f64,
    /// Radians.
    pub central_angle: f64,
}

/// Vessel drawn uniformly by area over the visible cap.
pub fn sample_vessel<R: Rng + ?Sized>(
    geom: &OrbitGeometry,
    link: &LinkBudget,
    rng: &mut R,
) -> Vessel {
    let cos_max = geom.max_central_angle().cos();
    let cos_l = rng.random_range(cos_max..=1.0);
    let azimuth = rng.random_range(0.0..2.0 * PI);
    vessel_at(geom, link, cos_l.acos(), azimuth, rng.random_range(0.0..2.0 * PI))
}

/// Channel of a static vessel at central angle `lambda` and `azimuth`
/// measured from the satellite's direction of motion.
pub fn vessel_at(
    geom: &OrbitGeometry,
    link: &LinkBudget,
    lambda: f64,
    azimuth: f64,
    phase: f64,
) -> Vessel {
    let r = geom.earth_radius;
    let rs = r + geom.altitude;
    let (sl, cl) = lambda.sin_cos();
    let vessel = [r * sl * azimuth.cos(), r * sl * azimuth.sin(), r * cl];
    let d = [-vessel[0], -vessel[1], rs - vessel[2]];
    let range = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    // Satellite velocity along +x.
    let range_rate = geom.orbital_speed() * d[0] / range;
    let doppler = -range_rate / SPEED_OF_LIGHT * geom.carrier;
    Vessel {
        channel: UserChannel {
            attenuation: link.relative_amplitude(geom, range),
            delay: range / SPEED_OF_LIGHT,
            doppler,
            phase,
            doppler_rate: 0.0,
        },
        range,
        central_angle: lambda,
    }
}

/// How the number of packets per frame is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Poisson with mean `offered_load * n_slots`.
    Poisson,
    /// Exactly `round(offered_load * n_slots)`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    /// Mean packets per slot.
    pub offered_load: f64,
    pub n_slots: usize,
    pub n_frames: usize,
}

/// One packet of an ALOHA frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlohaPacket {
    pub slot: usize,
    pub vessel: Vessel,
    pub tx: Transmission,
}

/// Slotted ALOHA frame: packets with independent uniform slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AlohaFrame {
    pub n_slots: usize,
    pub packets: Vec<AlohaPacket>,
    /// Packet indices per slot.
    pub slots: Vec<Vec<usize>>,
}

pub fn slot_duration(cfg: &ModulationConfig) -> f64 {
    SLOT_BITS as f64 * cfg.symbol_period
}

pub fn run_aloha_frame<R: Rng + ?Sized>(
    load: &LoadPoint,
    arrivals: ArrivalProcess,
    geom: &OrbitGeometry,
    link: &LinkBudget,
    rng: &mut R,
) -> AlohaFrame {
    let mean = load.offered_load * load.n_slots as f64;
    let count = if mean <= 0.0 {
        0
    } else {
        match arrivals {
            ArrivalProcess::Poisson => Poisson::new(mean).expect("positive mean").sample(rng) as usize,
            ArrivalProcess::Fixed => mean.round() as usize,
        }
    };
    let mut slots = vec![Vec::new(); load.n_slots];
    let packets: Vec<AlohaPacket> = (0..count)
        .map(|i| {
            let slot = rng.random_range(0..load.n_slots);
            slots[slot].push(i);
            AlohaPacket {
                slot,
                vessel: sample_vessel(geom, link, rng),
                tx: Transmission::random(rng),
            }
        })
        .collect();
    AlohaFrame {
        n_slots: load.n_slots,
        packets,
        slots,
    }
}

impl AlohaFrame {
    /// Strongest packet of a slot.
    pub fn target(&self, slot: usize) -> Option<usize> {
        self.slots[slot].iter().copied().max_by(|&a, &b| {
            let pa = self.packets[a].vessel.channel.attenuation;
            let pb = self.packets[b].vessel.channel.attenuation;
            pa.total_cmp(&pb).then(b.cmp(&a))
        })
    }

    /// Arrival time of a packet's first symbol at the satellite.
    pub fn arrival(&self, idx: usize, cfg: &ModulationConfig) -> f64 {
        let p = &self.packets[idx];
        p.slot as f64 * slot_duration(cfg) + p.vessel.channel.delay
    }

    /// Packets whose reception overlaps the observation window of `target`.
    pub fn overlapping(&self, target: usize, cfg: &ModulationConfig) -> Vec<usize> {
        let start = self.arrival(target, cfg);
        let end = start + (SLOT_BITS + cfg.memory + WINDOW_MARGIN) as f64 * cfg.symbol_period;
        let slot = self.packets[target].slot;
        let lo = slot.saturating_sub(1);
        let hi = (slot + 1).min(self.n_slots - 1);
        let mut out = Vec::new();
        for s in lo..=hi {
            for &i in &self.slots[s] {
                let a = self.arrival(i, cfg);
                let b = a + (self.packets[i].tx.burst_symbols() + cfg.memory) as f64 * cfg.symbol_period;
                if a < end && b > start {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Observation of the strongest packet of `slot`, with every
    /// overlapping packet as interference and noise at the link budget's
    /// reference level.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        slot: usize,
        cfg: &ModulationConfig,
        pulse: &PhasePulse,
        link: &LinkBudget,
        rng: &mut R,
    ) -> Option<(usize, Observation)> {
        let target = self.target(slot)?;
        let mut received = observation_window(cfg, self.arrival(target, cfg));
        for i in self.overlapping(target, cfg) {
            let p = &self.packets[i];
            let mut w = p.tx.waveform(cfg, pulse);
            w.origin_time = p.slot as f64 * slot_duration(cfg);
            add_user_into(&mut received, &w, &p.vessel.channel);
        }
        add_noise_with(
            &mut received,
            noise_variance(link.reference_ebn0_db, cfg.symbol_energy, cfg),
            rng,
        );
        let p = &self.packets[target];
        let mut channel = p.vessel.channel;
        channel.delay = self.arrival(target, cfg);
        Some((
            target,
            Observation {
                received,
                target: Acquisition {
                    channel,
                    burst_symbols: p.tx.burst_symbols(),
                },
                payload: p.tx.payload.clone(),
            },
        ))
    }
}

/// Outcome of one frame for one detector.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameScore {
    pub received: usize,
    pub transmitted: usize,
    pub n_slots: usize,
}

impl FrameScore {
    pub fn throughput(&self) -> f64 {
        self.received as f64 / self.n_slots as f64
    }

    pub fn per(&self) -> f64 {
        if self.transmitted == 0 {
            0.0
        } else {
            1.0 - self.received as f64 / self.transmitted as f64
        }
    }
}

/// Scores a frame: a packet counts as received iff its decode returned the
/// exact payload. `decoded[slot]` is the payload decoded for that slot's
/// target, if any.
pub fn score_frame(frame: &AlohaFrame, decoded: &[Option<Payload>]) -> FrameScore {
    let mut received = 0;
    for (slot, d) in decoded.iter().enumerate() {
        if let (Some(payload), Some(target)) = (d, frame.target(slot)) {
            if *payload == frame.packets[target].tx.payload {
                received += 1;
            }
        }
    }
    FrameScore {
        received,
        transmitted: frame.packets.len(),
        n_slots: frame.n_slots,
    }
}
