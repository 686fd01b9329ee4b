//! Channel synthesis.
//!
//! `H_{n,k} = sum_l alpha_l a_rx(theta_l) a_tx^T(phi_l) exp(-j 2 pi n df tau_l) exp(j 2 pi k Ts nu_l)`
//! plus the RIS term when a panel is present. The model flags switch to
//! spherical-wavefront responses (`near_field`), per-element Friis gains
//! (`non_stationary`) and per-subcarrier wavelengths (`beam_squint`).

mod impair;
pub mod io;
mod observe;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

pub use impair::{apply_impairments, perturbed_scenario, synthesize_impaired, ImpairmentSpec};
pub use observe::{observe, Observations, SignalDesign};

use crate::scenario::{
    friis_amplitude, geometric_path_params, ris_path_params, ArrayGeometry, Direction, PathKind, Scenario, ScenarioError,
    SpectralGrid,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("tensor format: {0}")]
    Format(String),
}

/// Complex channel matrices `H_{n,k}` (rx elements x tx elements) for every
/// subcarrier position `i` and symbol `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub grid: SpectralGrid,
    rx_elements: usize,
    tx_elements: usize,
    data: Vec<DMatrix<Complex64>>,
}

impl ChannelTensor {
    pub fn zeros(grid: SpectralGrid, rx_elements: usize, tx_elements: usize) -> Self {
        let n = grid.n_subcarriers * grid.n_symbols;
        Self {
            grid,
            rx_elements,
            tx_elements,
            data: vec![DMatrix::zeros(rx_elements, tx_elements); n],
        }
    }

    pub(crate) fn from_parts(grid: SpectralGrid, rx_elements: usize, tx_elements: usize, data: Vec<DMatrix<Complex64>>) -> Result<Self, ChannelError> {
        if data.len() != grid.n_subcarriers * grid.n_symbols {
            return Err(ChannelError::Dimension(format!("{} matrices for a {}x{} grid", data.len(), grid.n_subcarriers, grid.n_symbols)));
        }
        if data.iter().any(|m| m.shape() != (rx_elements, tx_elements)) {
            return Err(ChannelError::Dimension("inconsistent matrix shapes".into()));
        }
        Ok(Self {
            grid,
            rx_elements,
            tx_elements,
            data,
        })
    }

    pub fn rx_elements(&self) -> usize {
        self.rx_elements
    }

    pub fn tx_elements(&self) -> usize {
        self.tx_elements
    }

    fn index(&self, i: usize, k: usize) -> usize {
        assert!(i < self.grid.n_subcarriers && k < self.grid.n_symbols, "({i}, {k}) outside the grid");
        i * self.grid.n_symbols + k
    }

    /// Matrix at subcarrier position `i` and symbol `k`.
    pub fn get(&self, i: usize, k: usize) -> &DMatrix<Complex64> {
        &self.data[self.index(i, k)]
    }

    pub fn get_mut(&mut self, i: usize, k: usize) -> &mut DMatrix<Complex64> {
        let idx = self.index(i, k);
        &mut self.data[idx]
    }

    pub fn matrices(&self) -> impl Iterator<Item = &DMatrix<Complex64>> {
        self.data.iter()
    }

    pub fn add_assign(&mut self, other: &ChannelTensor) -> Result<(), ChannelError> {
        if self.data.len() != other.data.len() || self.rx_elements != other.rx_elements || self.tx_elements != other.tx_elements {
            return Err(ChannelError::Dimension("tensor shapes differ".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Frobenius norm over the whole tensor.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_difference(&self, other: &ChannelTensor) -> f64 {
        let diff: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_squared()).sum();
        diff.sqrt() / other.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|m| m.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// Far-field response: entry `p` is `exp(j 2 pi / lambda * offset_p . u(direction))`.
pub fn steering_vector(arr: &ArrayGeometry, direction: &Direction, wavelength: f64) -> DVector<Complex64> {
    let u = direction.unit_vector();
    let k = 2.0 * PI / wavelength;
    DVector::from_iterator(
        arr.num_elements(),
        arr.element_offsets.iter().map(|o| Complex64::from_polar(1.0, k * o.dot(&u))),
    )
}

/// Derivative of the steering vector with respect to a unit-vector perturbation `du`.
pub(crate) fn steering_derivative(arr: &ArrayGeometry, steering: &DVector<Complex64>, du: &Vector3<f64>, wavelength: f64) -> DVector<Complex64> {
    let k = 2.0 * PI / wavelength;
    DVector::from_iterator(
        arr.num_elements(),
        arr.element_offsets
            .iter()
            .zip(steering.iter())
            .map(|(o, a)| a * Complex64::new(0.0, k * o.dot(du))),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearFieldResponse {
    pub response: DVector<Complex64>,
    /// The source lies inside the array's bounding sphere, where the model is
    /// not meaningful.
    pub inside_bounding_sphere: bool,
}

/// Spherical-wavefront response: entry `p` is
/// `exp(-j 2 pi (||s - x_p|| - ||s - x_ref||) / lambda)`.
pub fn near_field_response(arr: &ArrayGeometry, source: &Vector3<f64>, wavelength: f64) -> Result<NearFieldResponse, ChannelError> {
    let d_ref = (source - arr.center).norm();
    let mut out = DVector::zeros(arr.num_elements());
    for p in 0..arr.num_elements() {
        let d = (source - arr.element_position(p)).norm();
        if d < 1e-12 {
            return Err(ChannelError::Degenerate(format!("source coincides with element {p}")));
        }
        out[p] = Complex64::from_polar(1.0, -2.0 * PI * (d - d_ref) / wavelength);
    }
    Ok(NearFieldResponse {
        response: out,
        inside_bounding_sphere: d_ref <= arr.bounding_radius(),
    })
}

fn delay_doppler(grid: &SpectralGrid, i: usize, k: usize, delay: f64, doppler: f64) -> Complex64 {
    let phase = -2.0 * PI * grid.baseband_frequency(i) * delay + 2.0 * PI * k as f64 * grid.symbol_duration_s * doppler;
    Complex64::from_polar(1.0, phase)
}

/// Array responses of one path at one wavelength, rx then tx.
fn path_responses(
    s: &Scenario,
    aoa: &Direction,
    aod: &Direction,
    rx_source: &Vector3<f64>,
    tx_target: &Vector3<f64>,
    wavelength: f64,
) -> Result<(DVector<Complex64>, DVector<Complex64>), ChannelError> {
    if s.flags.near_field {
        Ok((
            near_field_response(&s.rx, rx_source, wavelength)?.response,
            near_field_response(&s.tx, tx_target, wavelength)?.response,
        ))
    } else {
        Ok((steering_vector(&s.rx, aoa, wavelength), steering_vector(&s.tx, aod, wavelength)))
    }
}

/// Per-element-pair gain magnitudes for the non-stationary model.
fn element_pair_amplitudes(s: &Scenario, l: usize) -> DMatrix<f64> {
    let path = &s.paths[l];
    let lambda = s.wavelength();
    DMatrix::from_fn(s.rx.num_elements(), s.tx.num_elements(), |p, q| {
        let xr = s.rx.element_position(p);
        let xt = s.tx.element_position(q);
        let (length, rx_src, tx_dst) = match path.kind {
            PathKind::LineOfSight => ((xt - xr).norm(), xt, xr),
            PathKind::SingleBounce { incidence_point } => ((xt - incidence_point).norm() + (incidence_point - xr).norm(), incidence_point, incidence_point),
        };
        let u_rx = s.rx.orientation.inverse() * (rx_src - xr).normalize();
        let u_tx = s.tx.orientation.inverse() * (tx_dst - xt).normalize();
        friis_amplitude(lambda, length, s.rx.gain_pattern.gain(&u_rx), s.tx.gain_pattern.gain(&u_tx)) * path.reflection_loss
    })
}

/// Channel tensor of the scenario's paths, plus the RIS term when present.
pub fn synthesize(s: &Scenario) -> Result<ChannelTensor, ChannelError> {
    s.validate()?;
    let mut h = synthesize_paths(s)?;
    if s.ris.is_some() {
        h.add_assign(&ris_term(s)?)?;
    }
    Ok(h)
}

/// Channel tensor of the uncontrolled paths only.
pub fn synthesize_paths(s: &Scenario) -> Result<ChannelTensor, ChannelError> {
    let grid = &s.grid;
    let (nr, nt) = (s.rx.num_elements(), s.tx.num_elements());
    let mut per_path = Vec::with_capacity(s.paths.len());
    for l in 0..s.paths.len() {
        let params = geometric_path_params(s, l)?;
        let (rx_src, tx_dst) = match s.paths[l].kind {
            PathKind::LineOfSight => (s.tx.center, s.rx.center),
            PathKind::SingleBounce { incidence_point } => (incidence_point, incidence_point),
        };
        let amplitudes = s.flags.non_stationary.then(|| element_pair_amplitudes(s, l));
        per_path.push((params, rx_src, tx_dst, amplitudes));
    }
    let fixed_responses = if s.flags.beam_squint {
        None
    } else {
        Some(
            per_path
                .iter()
                .map(|(p, rx_src, tx_dst, _)| path_responses(s, &p.aoa, &p.aod, rx_src, tx_dst, s.wavelength()))
                .collect::<Result<Vec<_>, _>>()?,
        )
    };
    let data: Vec<Vec<DMatrix<Complex64>>> = (0..grid.n_subcarriers)
        .into_par_iter()
        .map(|i| -> Result<Vec<DMatrix<Complex64>>, ChannelError> {
            let lambda_i = s.array_wavelength(i);
            let mut spatial = Vec::with_capacity(per_path.len());
            for (l, (params, rx_src, tx_dst, amplitudes)) in per_path.iter().enumerate() {
                let (a_rx, a_tx) = match &fixed_responses {
                    Some(r) => r[l].clone(),
                    None => path_responses(s, &params.aoa, &params.aod, rx_src, tx_dst, lambda_i)?,
                };
                let m = match amplitudes {
                    None => &a_rx * a_tx.transpose() * params.gain,
                    Some(amp) => {
                        let phase = Complex64::from_polar(1.0, params.gain.arg());
                        DMatrix::from_fn(nr, nt, |p, q| a_rx[p] * a_tx[q] * amp[(p, q)] * phase)
                    }
                };
                spatial.push(m);
            }
            Ok((0..grid.n_symbols)
                .map(|k| {
                    let mut acc = DMatrix::zeros(nr, nt);
                    for (m, (params, ..)) in spatial.iter().zip(&per_path) {
                        acc += m * delay_doppler(grid, i, k, params.delay_s, params.doppler_hz);
                    }
                    acc
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    ChannelTensor::from_parts(grid.clone(), nr, nt, data.into_iter().flatten().collect())
}

/// `a_ris^T(phi) Omega_k a_ris(theta)` for one profile.
pub fn ris_reflection(ris_arr: &ArrayGeometry, profile: &[Complex64], departure: &Direction, arrival: &Direction, wavelength: f64) -> Complex64 {
    let a_dep = steering_vector(ris_arr, departure, wavelength);
    let a_arr = steering_vector(ris_arr, arrival, wavelength);
    a_dep.iter().zip(profile).zip(a_arr.iter()).map(|((d, w), a)| d * w * a).sum()
}

/// RIS contribution `alpha_k^ris a_rx(theta^ris) a_tx^T(phi^ris) exp(-j2pi n df tau^ris) exp(j2pi k Ts nu^ris)`
/// with `alpha_k^ris = alpha^{tx-ris} alpha^{ris-rx} a_ris^T(phi^{ris-rx}) Omega_k a_ris(theta^{tx-ris})`.
pub fn ris_term(s: &Scenario) -> Result<ChannelTensor, ChannelError> {
    let ris = s.ris.as_ref().ok_or_else(|| ChannelError::Configuration("scenario has no RIS".into()))?;
    let rp = ris_path_params(s)?;
    let grid = &s.grid;
    let (nr, nt) = (s.rx.num_elements(), s.tx.num_elements());
    let hop_gain = rp.gain_tx_ris * rp.gain_ris_rx;
    let mut data = Vec::with_capacity(grid.n_subcarriers * grid.n_symbols);
    for i in 0..grid.n_subcarriers {
        let lambda_i = s.array_wavelength(i);
        let spatial = steering_vector(&s.rx, &rp.aoa, lambda_i) * steering_vector(&s.tx, &rp.aod, lambda_i).transpose();
        for k in 0..grid.n_symbols {
            let alpha = hop_gain * ris_reflection(&ris.geometry, &ris.profiles[k], &rp.ris_departure, &rp.ris_arrival, lambda_i);
            data.push(&spatial * (alpha * delay_doppler(grid, i, k, rp.delay_s, rp.doppler_hz)));
        }
    }
    ChannelTensor::from_parts(grid.clone(), nr, nt, data)
}
