//! Quick oracle checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{add_noise_with, noise_variance, UserChannel};
use crate::decoder::{
    plva, plva_terminated, viterbi, viterbi_terminated, Acquisition, Detector, InitialMetrics,
    ListConfig, Receiver,
};
use crate::frame::{bytes_to_bits_lsb_first, fcs_value, nrzi_encode, preamble_bits, Symbol};
use crate::gmsk::{make_phase_pulse, modulate, ModulationConfig};
use crate::oracle::{enumerate_sequence_metrics, fcs_long_division};
use crate::scenario::{single_user_observation, Transmission};
use crate::stats::antipodal_ber;
use crate::sweep::{msk_ber, thread_pool};
use crate::trellis::{build_coherent_trellis, build_differential_trellis, Trellis};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<String, String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

pub fn fcs_oracle(trials: usize, seed: u64) -> Result<String, String> {
    let v = fcs_value(&bytes_to_bits_lsb_first(b"123456789"));
    if v != 0x906E || fcs_long_division(&bytes_to_bits_lsb_first(b"123456789")) != 0x906E {
        return Err(format!("check value {v:#06x}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let n = rng.random_range(16..400);
        let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if fcs_value(&bits) != fcs_long_division(&bits) {
            return Err(format!("mismatch on trial {t} ({n} bits)"));
        }
    }
    Ok(format!("0x906E and {trials} random inputs"))
}

pub fn codec_round_trip(trials: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let tx = Transmission::random(&mut rng);
        let level = tx.symbols[crate::frame::PREAMBLE_BITS - 1];
        let got = crate::frame::post_process_candidate(&tx.symbols[crate::frame::PREAMBLE_BITS..], level);
        if got.as_ref() != Ok(&tx.payload) {
            return Err(format!("trial {t}: {got:?}"));
        }
    }
    Ok(format!("{trials} payloads"))
}

/// PLVA with lists large enough to hold every path must return all `2^n`
/// sequences in the order of their brute-force metrics.
pub fn brute_force_lists(trials: usize, n: usize, ebn0_db: f64, seed: u64) -> Result<String, String> {
    let cfg = ModulationConfig::default();
    let pulse = make_phase_pulse(&cfg);
    let trellis = build_coherent_trellis(&cfg, &pulse);
    let table = trellis.table();
    let prefix = nrzi_encode(&preamble_bits(), 1);
    let init = InitialMetrics::Known(trellis.state_after(&prefix).map_err(|e| e.to_string())?);
    let q = cfg.oversampling;
    let var = noise_variance(ebn0_db, cfg.symbol_energy, &cfg);
    let all = 1usize << n;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64) << 20);
        let data: Vec<Symbol> = (0..n).map(|_| if rng.random() { 1 } else { -1 }).collect();
        let mut syms = prefix.clone();
        syms.extend_from_slice(&data);
        let mut w = modulate(&syms, &cfg, &pulse);
        add_noise_with(&mut w, var, &mut rng);
        let rx = &w.samples[prefix.len() * q..(prefix.len() + n) * q];
        let mut oracle = enumerate_sequence_metrics(rx, &prefix, n, &cfg, &pulse);
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1));
        let got = plva(&table.branch_metrics(rx), table, ListConfig::new(all, all).map_err(|e| e.to_string())?, init);
        if got.len() != all {
            return Err(format!("trial {t}: {} candidates", got.len()));
        }
        for (k, (c, (seq, m))) in got.iter().zip(&oracle).enumerate() {
            if &c.symbols != seq || (c.metric - m).abs() > 1e-9 * m.abs().max(1.0) {
                return Err(format!("trial {t}: rank {k} differs"));
            }
        }
    }
    Ok(format!("{trials} trials, {all} sequences each"))
}

/// PLVA(1,1) against the classical search on noisy packets.
pub fn viterbi_reduction(trials: usize, ebn0_db: f64, seed: u64) -> Result<String, String> {
    let cfg = ModulationConfig::default();
    let pulse = make_phase_pulse(&cfg);
    for det in [Detector::Coherent, Detector::Differential { delay: 3 }] {
        let rx = Receiver::new(cfg, det, ListConfig::VITERBI).map_err(|e| e.to_string())?;
        let table = rx.trellis().table();
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let obs = single_user_observation(&cfg, &pulse, ebn0_db, &mut rng);
            let prepared = rx.prepare(&obs.received, &obs.target);
            let metrics = table.branch_metrics(&prepared.stages);
            let terminal = table.terminal_metrics(&prepared.tail).map_err(|e| e.to_string())?;
            let va = viterbi_terminated(&metrics, table, rx.initial_metrics(), &terminal);
            let pl = plva_terminated(&metrics, table, ListConfig::VITERBI, rx.initial_metrics(), &terminal);
            if pl.len() != 1 || pl[0] != va {
                return Err(format!("{det} trial {t}"));
            }
            let va0 = viterbi(&metrics, table, rx.initial_metrics());
            let pl0 = plva(&metrics, table, ListConfig::VITERBI, rx.initial_metrics());
            if pl0[0] != va0 {
                return Err(format!("{det} trial {t} without terminal metrics"));
            }
        }
    }
    Ok(format!("{trials} packets per detector"))
}

pub fn state_counts() -> Result<String, String> {
    let cfg = ModulationConfig::default();
    let pulse = make_phase_pulse(&cfg);
    let c = build_coherent_trellis(&cfg, &pulse).table().num_states();
    let d = build_differential_trellis(&cfg, &pulse, 3)
        .map_err(|e| e.to_string())?
        .table()
        .num_states();
    if (c, d) != (16, 32) {
        return Err(format!("coherent {c}, differential {d}"));
    }
    Ok("coherent 16, differential(K=3) 32".into())
}

/// MSK bit error rate within `sigmas` standard deviations of the antipodal
/// closed form.
pub fn noise_calibration(ebn0_db: f64, bits: u64, sigmas: f64, seed: u64) -> Result<String, String> {
    let block = 10_001;
    let blocks = bits.div_ceil(block as u64 - 1);
    let count = msk_ber(ebn0_db, blocks, block, seed, &thread_pool(1));
    let p = antipodal_ber(ebn0_db);
    let sigma = (p * (1.0 - p) / count.trials as f64).sqrt();
    let z = (count.rate() - p) / sigma;
    let detail = format!("BER {:.4e} vs {:.4e} ({z:+.2} sigma, {} bits)", count.rate(), p, count.trials);
    if z.abs() <= sigmas {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn noiseless_decode() -> Result<String, String> {
    let cfg = ModulationConfig::default();
    let pulse = make_phase_pulse(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for det in [Detector::Coherent, Detector::Differential { delay: 1 }, Detector::Differential { delay: 3 }] {
        let rx = Receiver::new(cfg, det, ListConfig::new(16, 16).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let tx = Transmission::random(&mut rng);
        let channel = UserChannel {
            phase: 1.3,
            doppler: 2500.0,
            delay: 17.0 * cfg.sample_period(),
            ..Default::default()
        };
        let mut w = modulate(&tx.symbols, &cfg, &pulse);
        w = crate::channel::apply_user_channel(&w, &channel);
        let acq = Acquisition {
            channel,
            burst_symbols: tx.burst_symbols(),
        };
        match rx.decode_packet(&w, &acq) {
            Ok(s) if s.payload == tx.payload && s.rank == 0 => {}
            other => return Err(format!("{det}: {:?}", other.map(|s| s.rank))),
        }
    }
    Ok("coherent, differential K=1 and K=3".into())
}

/// Runs every check at its quick size.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check("fcs_oracle", fcs_oracle(1000, seed)),
        check("codec_round_trip", codec_round_trip(1000, seed)),
        check("trellis_state_counts", state_counts()),
        check("noiseless_decode", noiseless_decode()),
        check("brute_force_lists", brute_force_lists(5, 8, 3.0, seed)),
        check("viterbi_reduction", viterbi_reduction(50, 5.0, seed)),
        check("noise_calibration", noise_calibration(6.0, 200_000, 4.0, seed)),
    ]
}
