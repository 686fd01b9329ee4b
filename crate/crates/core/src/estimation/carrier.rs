use super::EstimationError;
use crate::linalg::wrap_two_pi;

/// Largest number of integer candidates allowed inside the search window.
pub const MAX_CANDIDATES: usize = 100;

/// Posterior probability below which the chosen integer is flagged.
const CONFIDENT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierRange {
    pub range_m: f64,
    /// Whole wavelengths in the selected range.
    pub cycles: i64,
    /// Range implied by the phase alone, in `[0, lambda)`.
    pub fractional_m: f64,
    /// Gaussian posterior probability of the selected integer given the
    /// coarse range.
    pub confidence: f64,
    pub ambiguous: bool,
}

/// Range from the phase of a line-of-sight gain, `psi = -2 pi d / lambda +
/// psi_tx + psi_rx (mod 2 pi)`, with the integer cycle count chosen as the
/// one closest to a coarse range `coarse_m +/- sigma_m`.
pub fn carrier_phase_range(
    psi: f64,
    coarse_m: f64,
    sigma_m: f64,
    wavelength: f64,
    tx_phase: f64,
    rx_phase: f64,
) -> Result<CarrierRange, EstimationError> {
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(EstimationError::InvalidInput("wavelength must be positive".into()));
    }
    if !(sigma_m.is_finite() && sigma_m >= 0.0) || !coarse_m.is_finite() || !psi.is_finite() {
        return Err(EstimationError::InvalidInput("coarse range and phase must be finite, sigma non-negative".into()));
    }
    let fractional_m = wrap_two_pi(-psi + tx_phase + rx_phase) * wavelength / (2.0 * std::f64::consts::PI);
    let lo = ((coarse_m - 3.0 * sigma_m - fractional_m) / wavelength).ceil();
    let hi = ((coarse_m + 3.0 * sigma_m - fractional_m) / wavelength).floor();
    let candidates = (hi - lo + 1.0).max(0.0) as usize;
    if candidates > MAX_CANDIDATES {
        return Err(EstimationError::AmbiguityTooWide { candidates });
    }
    let z = ((coarse_m - fractional_m) / wavelength).round();
    let confidence = if sigma_m == 0.0 {
        1.0
    } else {
        let spread = (6.0 * sigma_m / wavelength).ceil() + 2.0;
        let weight = |z: f64| (-(fractional_m + z * wavelength - coarse_m).powi(2) / (2.0 * sigma_m * sigma_m)).exp();
        let total: f64 = ((z - spread) as i64..=(z + spread) as i64).map(|c| weight(c as f64)).sum();
        if total > 0.0 {
            weight(z) / total
        } else {
            0.0
        }
    };
    Ok(CarrierRange {
        range_m: fractional_m + z * wavelength,
        cycles: z as i64,
        fractional_m,
        confidence,
        ambiguous: confidence < CONFIDENT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn phase_of(d: f64, lambda: f64, tx: f64, rx: f64) -> f64 {
        crate::linalg::wrap_pi(-2.0 * PI * d / lambda + tx + rx)
    }

    #[test]
    fn resolves_quarter_wavelength_offset() {
        let lambda = 0.01;
        let psi = phase_of(10.0025, lambda, 0.3, -1.1);
        let r = carrier_phase_range(psi, 10.0, 0.002, lambda, 0.3, -1.1).unwrap();
        assert!((r.range_m - 10.0025).abs() < lambda / 10.0);
    }

    #[test]
    fn exact_with_zero_sigma() {
        let lambda = 0.0107;
        let d = 7.31234;
        let r = carrier_phase_range(phase_of(d, lambda, 0.0, 0.0), d, 0.0, lambda, 0.0, 0.0).unwrap();
        assert!((r.range_m - d).abs() < 1e-10);
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn wide_window_is_refused() {
        let lambda = 0.01;
        let err = carrier_phase_range(0.0, 10.0, 0.5, lambda, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, EstimationError::AmbiguityTooWide { candidates } if candidates > 100));
    }

    #[test]
    fn half_cycle_offset_is_flagged() {
        let lambda = 0.01;
        let d = 10.0;
        let r = carrier_phase_range(phase_of(d, lambda, 0.0, 0.0), d + 0.5 * lambda, 0.3 * lambda, lambda, 0.0, 0.0).unwrap();
        assert!(r.ambiguous);
        assert!(r.confidence < 0.99);
    }

    proptest! {
        #[test]
        fn correct_integer_within_quarter_wavelength(d in 1.0f64..100.0, err in -0.24f64..0.24, tx in -3.0f64..3.0) {
            let lambda = 0.01;
            let r = carrier_phase_range(phase_of(d, lambda, tx, 0.5), d + err * lambda, 0.05 * lambda, lambda, tx, 0.5).unwrap();
            prop_assert!((r.range_m - d).abs() < 1e-9);
        }
    }
}
