use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{synthesize, ChannelError, ChannelTensor};
use crate::scenario::Scenario;

/// Hardware impairments. Phase noise is a Wiener walk common to all antennas;
/// element displacements are static per seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSpec {
    /// Standard deviation of i.i.d. element position errors [m].
    pub element_displacement_sigma: f64,
    /// Wiener increment variance per symbol [rad^2].
    pub phase_noise: f64,
    pub cfo: f64,
    pub timing_offset: f64,
    pub seed: u64,
}

impl ImpairmentSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.element_displacement_sigma) || !ok(self.phase_noise) {
            return Err(ChannelError::Configuration("impairment variances must be finite and non-negative".into()));
        }
        if !self.cfo.is_finite() || !self.timing_offset.is_finite() {
            return Err(ChannelError::Configuration("cfo and timing offset must be finite".into()));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.phase_noise == 0.0 && self.cfo == 0.0 && self.timing_offset == 0.0
    }
}

// Separate streams so that changing one impairment does not reshuffle the other.
const PHASE_STREAM: u64 = 1;
const DISPLACEMENT_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Wiener phase walk `w_0 = 0`, `w_k = w_{k-1} + N(0, variance)`.
pub(crate) fn wiener_walk(n: usize, variance: f64, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if variance > 0.0 {
        let mut rng = rng_for(seed, PHASE_STREAM);
        let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
        for k in 1..n {
            out[k] = out[k - 1] + normal.sample(&mut rng);
        }
    }
    out
}

/// Applies CFO, phase noise and a timing offset to an existing tensor.
/// Element displacements need the geometry; see [`synthesize_impaired`].
pub fn apply_impairments(h: &ChannelTensor, spec: &ImpairmentSpec) -> Result<ChannelTensor, ChannelError> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(h.clone());
    }
    let grid = &h.grid;
    let walk = wiener_walk(grid.n_symbols, spec.phase_noise, spec.seed);
    let mut out = h.clone();
    for i in 0..grid.n_subcarriers {
        let timing = -2.0 * PI * grid.baseband_frequency(i) * spec.timing_offset;
        for (k, w) in walk.iter().enumerate() {
            let phase = 2.0 * PI * k as f64 * grid.symbol_duration_s * spec.cfo + w + timing;
            let m: &mut DMatrix<Complex64> = out.get_mut(i, k);
            *m *= Complex64::from_polar(1.0, phase);
        }
    }
    Ok(out)
}

/// Scenario with both arrays' element offsets perturbed by the spec's
/// displacement error.
pub fn perturbed_scenario(s: &Scenario, spec: &ImpairmentSpec) -> Result<Scenario, ChannelError> {
    spec.validate()?;
    let mut t = s.clone();
    if spec.element_displacement_sigma > 0.0 {
        let mut rng = rng_for(spec.seed, DISPLACEMENT_STREAM);
        t.rx = s.rx.perturbed(spec.element_displacement_sigma, &mut rng);
        t.tx = s.tx.perturbed(spec.element_displacement_sigma, &mut rng);
    }
    Ok(t)
}

/// Re-synthesizes with displaced elements, then applies the remaining impairments.
pub fn synthesize_impaired(s: &Scenario, spec: &ImpairmentSpec) -> Result<ChannelTensor, ChannelError> {
    let h = synthesize(&perturbed_scenario(s, spec)?)?;
    apply_impairments(&h, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ArrayGeometry, SpectralGrid};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};

    fn tone() -> ChannelTensor {
        let s = Scenario::los(
            ArrayGeometry::single(Vector3::zeros()),
            ArrayGeometry::single(Vector3::new(5.0, 0.0, 0.0)),
            SpectralGrid::with_bandwidth(28e9, 100e6, 8, 6).unwrap(),
        );
        synthesize(&s).unwrap()
    }

    #[test]
    fn zero_spec_is_identity() {
        let h = tone();
        assert_eq!(apply_impairments(&h, &ImpairmentSpec::default()).unwrap(), h);
    }

    #[test]
    fn cfo_gives_exact_phase_ramp() {
        let h = tone();
        let df = h.grid.subcarrier_spacing_hz;
        let spec = ImpairmentSpec { cfo: df, ..Default::default() };
        let out = apply_impairments(&h, &spec).unwrap();
        for i in 0..8 {
            for k in 0..6 {
                let ratio = out.get(i, k)[(0, 0)] / h.get(i, k)[(0, 0)];
                let expected = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * h.grid.symbol_duration_s * df);
                assert_relative_eq!((ratio - expected).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn timing_offset_shifts_delay() {
        let h = tone();
        let spec = ImpairmentSpec { timing_offset: 3e-9, ..Default::default() };
        let out = apply_impairments(&h, &spec).unwrap();
        for i in 0..8 {
            let ratio = out.get(i, 0)[(0, 0)] / h.get(i, 0)[(0, 0)];
            let expected = Complex64::from_polar(1.0, -2.0 * PI * h.grid.baseband_frequency(i) * 3e-9);
            assert_relative_eq!((ratio - expected).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn phase_noise_is_common_and_reproducible() {
        let h = tone();
        let spec = ImpairmentSpec { phase_noise: 0.01, seed: 4, ..Default::default() };
        let a = apply_impairments(&h, &spec).unwrap();
        let b = apply_impairments(&h, &spec).unwrap();
        assert_eq!(a, b);
        // The same phase perturbation hits every subcarrier of a symbol.
        for k in 0..6 {
            let r0 = a.get(0, k)[(0, 0)] / h.get(0, k)[(0, 0)];
            let r5 = a.get(5, k)[(0, 0)] / h.get(5, k)[(0, 0)];
            assert_relative_eq!((r0 - r5).norm(), 0.0, epsilon = 1e-12);
        }
        assert_eq!(a.get(0, 0), h.get(0, 0));
        assert!(apply_impairments(&h, &ImpairmentSpec { phase_noise: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn displacements_are_frozen_per_seed() {
        let lambda = 299_792_458.0 / 28e9;
        let s = Scenario::los(
            ArrayGeometry::single(Vector3::new(3.0, 1.0, 0.0)),
            ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), 8, lambda / 2.0),
            SpectralGrid::with_bandwidth(28e9, 100e6, 2, 1).unwrap(),
        );
        let spec = ImpairmentSpec { element_displacement_sigma: lambda / 20.0, seed: 7, ..Default::default() };
        let a = synthesize_impaired(&s, &spec).unwrap();
        let b = synthesize_impaired(&s, &spec).unwrap();
        assert_eq!(a, b);
        let clean = synthesize(&s).unwrap();
        assert!(a.relative_difference(&clean) > 1e-3);
    }
}
