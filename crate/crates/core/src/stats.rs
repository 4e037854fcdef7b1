//! Error-rate statistics.

use crate::gmsk::gauss_q;

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials`, as
/// `(centre, half_width)`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (centre, half)
}

/// Error counter for one simulation point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCount {
    pub errors: u64,
    pub trials: u64,
}

impl ErrorCount {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.errors as f64 / self.trials as f64
        }
    }

    /// Wilson 95% interval `(low, high)`.
    pub fn interval(&self) -> (f64, f64) {
        let (c, h) = wilson(self.errors, self.trials, Z95);
        // The bounds are exactly 0 and 1 at the extremes; pin them so
        // rounding does not show up in the tables.
        let low = if self.errors == 0 { 0.0 } else { (c - h).max(0.0) };
        let high = if self.errors == self.trials { 1.0 } else { (c + h).min(1.0) };
        (low, high)
    }

    pub fn half_width(&self) -> f64 {
        wilson(self.errors, self.trials, Z95).1
    }

    pub fn add(&mut self, other: ErrorCount) {
        self.errors += other.errors;
        self.trials += other.trials;
    }
}

/// Antipodal signalling error rate `Q(sqrt(2 Eb / N0))`.
pub fn antipodal_ber(ebn0_db: f64) -> f64 {
    gauss_q((2.0 * 10f64.powf(ebn0_db / 10.0)).sqrt())
}

/// Eb/N0 at which a curve crosses `target`, interpolating `log10(rate)`
/// linearly between grid points. `points` must be sorted by Eb/N0.
pub fn crossing(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if y0 >= target && y1 <= target && y0 > 0.0 {
            if y1 <= 0.0 {
                return Some(x1);
            }
            let (l0, l1) = (y0.log10(), y1.log10());
            if l0 == l1 {
                return Some(x0);
            }
            return Some(x0 + (lt - l0) / (l1 - l0) * (x1 - x0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 10 of 100: interval (0.055229, 0.174366), as statsmodels reports.
        let e = ErrorCount {
            errors: 10,
            trials: 100,
        };
        let (lo, hi) = e.interval();
        assert!((lo - 0.055_229_137).abs() < 1e-8, "{lo}");
        assert!((hi - 0.174_365_662).abs() < 1e-8, "{hi}");
        let (c0, h0) = wilson(0, 50, Z95);
        assert!((c0 - h0).abs() < 1e-15);
    }

    #[test]
    fn antipodal_reference() {
        // Q(sqrt(2 * 10^0.6)) = Q(2.8212)
        assert!((antipodal_ber(6.0) - 2.388_3e-3).abs() < 1e-6);
    }

    #[test]
    fn crossing_interpolates_in_log_domain() {
        let pts = [(4.0, 1e-1), (5.0, 1e-3), (6.0, 1e-4)];
        assert!((crossing(&pts, 1e-2).unwrap() - 4.5).abs() < 1e-12);
        assert!((crossing(&pts, 1e-4).unwrap() - 6.0).abs() < 1e-12);
        assert!(crossing(&pts, 1e-6).is_none());
    }
}
