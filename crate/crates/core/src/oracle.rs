//! Independent reference computations used to cross-check the fast paths.
//!
//! Nothing here shares code with the implementation it checks: the FCS is
//! computed by polynomial long division, sequence metrics by modulating and
//! correlating every candidate sequence, and the geometry and ALOHA values
//! from closed forms.

use num_complex::Complex64;

use crate::frame::Symbol;
use crate::gmsk::{modulate, ModulationConfig, PhasePulse};

/// FCS by long division over GF(2): generator x^16 + x^12 + x^5 + 1, the first
/// 16 message bits complemented (equivalent to a preset of ones), remainder
/// complemented (inputs of at least 16 bits). Bit `i` of the result is the `i`-th transmitted FCS bit,
/// i.e. the coefficient of x^(15 - i).
pub fn fcs_long_division(bits: &[u8]) -> u16 {
    const GEN: [u8; 17] = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
    let mut work: Vec<u8> = bits.to_vec();
    for b in work.iter_mut().take(16) {
        *b ^= 1;
    }
    work.extend(std::iter::repeat(0).take(16));
    for i in 0..bits.len() {
        if work[i] == 1 {
            for (j, &g) in GEN.iter().enumerate() {
                work[i + j] ^= g;
            }
        }
    }
    let rem = &work[work.len() - 16..];
    rem.iter()
        .enumerate()
        .fold(0u16, |acc, (i, &b)| acc | (((b ^ 1) as u16) << i))
}

/// Metric of every length-`n` continuation of `prefix`, by modulating the
/// whole sequence and correlating it with `received` over the last `n`
/// symbol periods. `received` holds exactly `n` symbol periods, aligned with
/// the first symbol after `prefix`.
///
/// Returns `(symbols, metric)` for all `2^n` sequences in lexicographic order
/// of the inputs (`-1` before `+1`, first symbol most significant).
pub fn enumerate_sequence_metrics(
    received: &[Complex64],
    prefix: &[Symbol],
    n: usize,
    cfg: &ModulationConfig,
    pulse: &PhasePulse,
) -> Vec<(Vec<Symbol>, f64)> {
    let q = cfg.oversampling;
    assert_eq!(received.len(), n * q);
    let dt = cfg.sample_period();
    (0..1usize << n)
        .map(|code| {
            let seq: Vec<Symbol> = (0..n)
                .map(|i| if (code >> (n - 1 - i)) & 1 == 1 { 1 } else { -1 })
                .collect();
            let mut full = prefix.to_vec();
            full.extend_from_slice(&seq);
            let w = modulate(&full, cfg, pulse);
            let start = prefix.len() * q;
            let metric: f64 = received
                .iter()
                .zip(&w.samples[start..start + n * q])
                .map(|(r, s)| (r * s.conj()).re)
                .sum::<f64>()
                * dt;
            (seq, metric)
        })
        .collect()
}

/// Slotted ALOHA throughput without capture: `G exp(-G)`.
pub fn slotted_aloha_throughput(load: f64) -> f64 {
    load * (-load).exp()
}

/// Slant range to the horizon (zero elevation) by Pythagoras.
pub fn horizon_range(earth_radius: f64, altitude: f64) -> f64 {
    ((earth_radius + altitude).powi(2) - earth_radius.powi(2)).sqrt()
}

/// Circular orbit speed.
pub fn orbital_speed(earth_radius: f64, altitude: f64) -> f64 {
    (3.986_004_418e14 / (earth_radius + altitude)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{bytes_to_bits_lsb_first, fcs_value};

    #[test]
    fn long_division_check_value() {
        assert_eq!(fcs_long_division(&bytes_to_bits_lsb_first(b"123456789")), 0x906E);
        assert_eq!(fcs_value(&bytes_to_bits_lsb_first(b"123456789")), 0x906E);
    }

    #[test]
    fn horizon_reference() {
        let r = horizon_range(6_371_000.0, 656_500.0);
        // sqrt(7027.5^2 - 6371^2) km
        assert!((r - 2_965_824.548).abs() < 1e-2, "{r}");
    }
}
