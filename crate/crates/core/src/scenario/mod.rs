//! Domain types shared by every other module: spectral grid, arrays, paths,
//! RIS panels, clocks and the [`Scenario`] snapshot, plus the geometric path
//! parameters derived from them.

mod config;
pub mod geometry;

use nalgebra::{Matrix3, Rotation3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use config::{load_scenario, ScenarioConfig, SCHEMA_VERSION};
pub use geometry::{direction_jacobian, Direction, DirectionJacobian};

use crate::SPEED_OF_LIGHT;

/// Default amplitude loss of a single-bounce path (-20 dB in power).
pub const DEFAULT_REFLECTION_LOSS: f64 = 0.1;

/// Minimum separation between points treated as distinct [m].
const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Field { field: String, message: String },
    #[error("invariant violated ({invariant}): {detail}")]
    Validation { invariant: &'static str, detail: String },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("path index {index} out of range ({count} paths)")]
    PathIndex { index: usize, count: usize },
}

fn invariant(invariant: &'static str, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        invariant,
        detail: detail.into(),
    }
}

/// OFDM time-frequency grid. Subcarrier positions `i = 0..N` map to signed
/// indices `n = i - N/2`, i.e. `{-N/2, ..., N/2 - 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    pub symbol_duration_s: f64,
    pub n_symbols: usize,
}

impl SpectralGrid {
    pub fn new(
        carrier_hz: f64,
        subcarrier_spacing_hz: f64,
        n_subcarriers: usize,
        symbol_duration_s: f64,
        n_symbols: usize,
    ) -> Result<Self, ScenarioError> {
        let g = Self {
            carrier_hz,
            subcarrier_spacing_hz,
            n_subcarriers,
            symbol_duration_s,
            n_symbols,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the minimum symbol duration `1/delta_f`.
    pub fn with_bandwidth(carrier_hz: f64, bandwidth_hz: f64, n_subcarriers: usize, n_symbols: usize) -> Result<Self, ScenarioError> {
        let df = bandwidth_hz / n_subcarriers as f64;
        Self::new(carrier_hz, df, n_subcarriers, 1.0 / df, n_symbols)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(invariant("f_c > 0", format!("carrier {}", self.carrier_hz)));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            return Err(invariant("delta_f > 0", format!("spacing {}", self.subcarrier_spacing_hz)));
        }
        if self.n_subcarriers == 0 || self.n_symbols == 0 {
            return Err(invariant("grid non-empty", "need at least one subcarrier and one symbol"));
        }
        if self.bandwidth() >= self.carrier_hz {
            return Err(invariant("W < f_c", format!("bandwidth {} >= carrier {}", self.bandwidth(), self.carrier_hz)));
        }
        // Relative slack so that T_s = 1/delta_f computed in floating point passes.
        if !(self.symbol_duration_s.is_finite() && self.symbol_duration_s * self.subcarrier_spacing_hz >= 1.0 - 1e-12) {
            return Err(invariant("T_s >= 1/delta_f", format!("T_s {} with delta_f {}", self.symbol_duration_s, self.subcarrier_spacing_hz)));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Signed subcarrier index of position `i`.
    pub fn subcarrier_index(&self, i: usize) -> i64 {
        i as i64 - (self.n_subcarriers / 2) as i64
    }

    /// Position of signed index `n`, if it is on the grid.
    pub fn position_of(&self, n: i64) -> Option<usize> {
        let i = n + (self.n_subcarriers / 2) as i64;
        (0..self.n_subcarriers as i64).contains(&i).then_some(i as usize)
    }

    pub fn subcarrier_indices(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n_subcarriers).map(|i| self.subcarrier_index(i))
    }

    /// Baseband offset `n * delta_f` of position `i`.
    pub fn baseband_frequency(&self, i: usize) -> f64 {
        self.subcarrier_index(i) as f64 * self.subcarrier_spacing_hz
    }

    /// `lambda_n = c / (f_c + n delta_f)`.
    pub fn subcarrier_wavelength(&self, i: usize) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_hz + self.baseband_frequency(i))
    }
}

/// Element gain pattern as a function of the local direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainPattern {
    #[default]
    Isotropic,
    /// `2(q+1) cos^q(angle off the local +x boresight)`, zero behind the array.
    CosinePower { exponent: f64 },
}

impl GainPattern {
    /// Linear power gain toward a local-frame unit vector.
    pub fn gain(&self, local_unit: &Vector3<f64>) -> f64 {
        match *self {
            GainPattern::Isotropic => 1.0,
            GainPattern::CosinePower { exponent } => {
                let c = local_unit.x.max(0.0);
                2.0 * (exponent + 1.0) * c.powf(exponent)
            }
        }
    }
}

/// Antenna array: phase center, attitude (local to global) and element
/// offsets in the local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub center: Vector3<f64>,
    pub orientation: Rotation3<f64>,
    pub element_offsets: Vec<Vector3<f64>>,
    pub gain_pattern: GainPattern,
}

impl ArrayGeometry {
    /// Validating constructor from a raw orientation matrix.
    pub fn new(
        center: Vector3<f64>,
        orientation: Matrix3<f64>,
        element_offsets: Vec<Vector3<f64>>,
        gain_pattern: GainPattern,
    ) -> Result<Self, ScenarioError> {
        let orthogonality = (orientation.transpose() * orientation - Matrix3::identity()).norm();
        if !orientation.iter().all(|v| v.is_finite()) || orthogonality > 1e-9 {
            return Err(invariant("orientation orthonormal", format!("|R^T R - I| = {orthogonality:e}")));
        }
        if (orientation.determinant() - 1.0).abs() > 1e-9 {
            return Err(invariant("orientation det = +1", format!("det = {}", orientation.determinant())));
        }
        let arr = Self {
            center,
            orientation: Rotation3::from_matrix_unchecked(orientation),
            element_offsets,
            gain_pattern,
        };
        arr.validate()?;
        Ok(arr)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.element_offsets.is_empty() {
            return Err(invariant("element count >= 1", "array has no elements"));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(invariant("positions finite", "array center"));
        }
        if !self.element_offsets.iter().flat_map(|o| o.iter()).all(|v| v.is_finite()) {
            return Err(invariant("offsets finite", "element offset"));
        }
        Ok(())
    }

    /// Single isotropic element at `center`.
    pub fn single(center: Vector3<f64>) -> Self {
        Self {
            center,
            orientation: Rotation3::identity(),
            element_offsets: vec![Vector3::zeros()],
            gain_pattern: GainPattern::Isotropic,
        }
    }

    /// Uniform linear array along the local y axis, centered on the phase center.
    /// Broadside is the local +x axis.
    pub fn ula(center: Vector3<f64>, orientation: Rotation3<f64>, count: usize, spacing: f64) -> Self {
        let mid = (count as f64 - 1.0) / 2.0;
        Self {
            center,
            orientation,
            element_offsets: (0..count)
                .map(|i| Vector3::new(0.0, (i as f64 - mid) * spacing, 0.0))
                .collect(),
            gain_pattern: GainPattern::Isotropic,
        }
    }

    /// Uniform planar array in the local y-z plane.
    pub fn upa(center: Vector3<f64>, orientation: Rotation3<f64>, ny: usize, nz: usize, spacing: f64) -> Self {
        let my = (ny as f64 - 1.0) / 2.0;
        let mz = (nz as f64 - 1.0) / 2.0;
        let mut offsets = Vec::with_capacity(ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                offsets.push(Vector3::new(0.0, (iy as f64 - my) * spacing, (iz as f64 - mz) * spacing));
            }
        }
        Self {
            center,
            orientation,
            element_offsets: offsets,
            gain_pattern: GainPattern::Isotropic,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.element_offsets.len()
    }

    pub fn element_position(&self, p: usize) -> Vector3<f64> {
        self.center + self.orientation * self.element_offsets[p]
    }

    /// Radius of the smallest sphere around the phase center containing all elements.
    pub fn bounding_radius(&self) -> f64 {
        self.element_offsets.iter().map(|o| o.norm()).fold(0.0, f64::max)
    }

    /// Largest element-to-element distance.
    pub fn aperture(&self) -> f64 {
        let mut a: f64 = 0.0;
        for (i, x) in self.element_offsets.iter().enumerate() {
            for y in &self.element_offsets[i + 1..] {
                a = a.max((x - y).norm());
            }
        }
        a
    }

    /// Local-frame unit vector toward a global point.
    pub fn local_unit_toward(&self, target: &Vector3<f64>) -> Vector3<f64> {
        (self.orientation.inverse() * (target - self.center)).normalize()
    }

    /// Local-frame direction toward a global point.
    pub fn direction_toward(&self, target: &Vector3<f64>) -> Direction {
        Direction::from_vector(&(self.orientation.inverse() * (target - self.center)))
    }

    /// Global point at `distance` along a local-frame direction.
    pub fn point_along(&self, direction: &Direction, distance: f64) -> Vector3<f64> {
        self.center + self.orientation * direction.unit_vector() * distance
    }

    /// Copy with i.i.d. Gaussian displacements of standard deviation `sigma`
    /// added to every offset coordinate.
    pub fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            for o in &mut out.element_offsets {
                for c in o.iter_mut() {
                    *c += normal.sample(rng);
                }
            }
        }
        out
    }

    /// Same array rigidly moved by `rotation` about the origin then `translation`.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            center: rotation * self.center + translation,
            orientation: rotation * self.orientation,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    LineOfSight,
    SingleBounce { incidence_point: Vector3<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry {
    pub kind: PathKind,
    /// Extra carrier phase from the reflection, in `[0, 2pi)`.
    pub reflection_phase: f64,
    /// Linear amplitude factor in `(0, 1]`.
    pub reflection_loss: f64,
}

impl PathGeometry {
    pub fn los() -> Self {
        Self {
            kind: PathKind::LineOfSight,
            reflection_phase: 0.0,
            reflection_loss: 1.0,
        }
    }

    pub fn single_bounce(incidence_point: Vector3<f64>) -> Self {
        Self {
            kind: PathKind::SingleBounce { incidence_point },
            reflection_phase: 0.0,
            reflection_loss: DEFAULT_REFLECTION_LOSS,
        }
    }

    pub fn incidence_point(&self) -> Option<Vector3<f64>> {
        match self.kind {
            PathKind::LineOfSight => None,
            PathKind::SingleBounce { incidence_point } => Some(incidence_point),
        }
    }

    pub fn is_los(&self) -> bool {
        matches!(self.kind, PathKind::LineOfSight)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let PathKind::SingleBounce { incidence_point } = self.kind {
            if !incidence_point.iter().all(|v| v.is_finite()) {
                return Err(invariant("incidence point finite", format!("{incidence_point:?}")));
            }
        }
        if !(0.0..2.0 * PI).contains(&self.reflection_phase) {
            return Err(invariant("reflection_phase in [0, 2pi)", format!("{}", self.reflection_phase)));
        }
        if !(self.reflection_loss > 0.0 && self.reflection_loss <= 1.0) {
            return Err(invariant("reflection_loss in (0, 1]", format!("{}", self.reflection_loss)));
        }
        Ok(())
    }
}

/// Admissible per-element RIS coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSet {
    /// Any coefficient with `|w| <= 1`.
    #[default]
    Continuous,
    /// Element off (`0`) or unit modulus with phase on a `2^bits` grid.
    QuantizedPhase { bits: u32 },
}

impl ProfileSet {
    pub fn admits(&self, w: Complex64) -> bool {
        match *self {
            ProfileSet::Continuous => w.norm() <= 1.0 + 1e-12,
            ProfileSet::QuantizedPhase { bits } => {
                if w.norm() < 1e-12 {
                    return true;
                }
                if (w.norm() - 1.0).abs() > 1e-9 {
                    return false;
                }
                let levels = 2f64.powi(bits as i32);
                let q = w.arg() / (2.0 * PI) * levels;
                (q - q.round()).abs() < 1e-6
            }
        }
    }
}

/// Reconfigurable intelligent surface: geometry plus one diagonal profile per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct RisPanel {
    pub geometry: ArrayGeometry,
    pub profile_set: ProfileSet,
    /// `profiles[k][m] = omega_{m,k}`.
    pub profiles: Vec<Vec<Complex64>>,
}

impl RisPanel {
    pub fn num_elements(&self) -> usize {
        self.geometry.num_elements()
    }

    /// Profiles in `+/-` pairs: symbol `2j` uses `base[j]`, symbol `2j+1` uses
    /// `-base[j]`. Correlating with the alternating code isolates the RIS term
    /// from any static channel contribution.
    pub fn with_pm_code(geometry: ArrayGeometry, profile_set: ProfileSet, base: &[Vec<Complex64>]) -> Self {
        let profiles = base
            .iter()
            .flat_map(|b| [b.clone(), b.iter().map(|w| -w).collect()])
            .collect();
        Self {
            geometry,
            profile_set,
            profiles,
        }
    }

    /// Random unit-modulus base profiles (uniform phases) in a `+/-` code.
    pub fn random_pm_code<R: Rng + ?Sized>(geometry: ArrayGeometry, n_symbols: usize, rng: &mut R) -> Self {
        let m = geometry.num_elements();
        let base: Vec<Vec<Complex64>> = (0..n_symbols / 2)
            .map(|_| (0..m).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))).collect())
            .collect();
        Self::with_pm_code(geometry, ProfileSet::Continuous, &base)
    }

    pub fn validate(&self, n_symbols: usize) -> Result<(), ScenarioError> {
        self.geometry.validate()?;
        if self.profiles.len() != n_symbols {
            return Err(invariant(
                "RIS profile length equals n_symbols",
                format!("{} profiles for {} symbols", self.profiles.len(), n_symbols),
            ));
        }
        let m = self.num_elements();
        for (k, p) in self.profiles.iter().enumerate() {
            if p.len() != m {
                return Err(invariant("RIS profile covers every element", format!("symbol {k}: {} of {m} coefficients", p.len())));
            }
            if let Some(w) = p.iter().find(|w| !self.profile_set.admits(**w)) {
                return Err(invariant("|omega| <= 1 and omega in profile set", format!("symbol {k}: {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockModel {
    /// Receiver clock bias B [s].
    pub bias_s: f64,
    pub cfo_hz: f64,
    /// Wiener phase-noise increment variance per symbol [rad^2].
    pub phase_noise_variance: f64,
    pub tx_chain_phase: f64,
    pub rx_chain_phase: f64,
}

impl ClockModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let all = [self.bias_s, self.cfo_hz, self.phase_noise_variance, self.tx_chain_phase, self.rx_chain_phase];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(invariant("clock parameters finite", format!("{self:?}")));
        }
        if self.phase_noise_variance < 0.0 {
            return Err(invariant("phase noise variance >= 0", format!("{}", self.phase_noise_variance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelFlags {
    pub near_field: bool,
    pub non_stationary: bool,
    pub beam_squint: bool,
}

/// One snapshot: transmitter, receiver, propagation paths, optional RIS,
/// spectral grid and clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub paths: Vec<PathGeometry>,
    pub ris: Option<RisPanel>,
    pub grid: SpectralGrid,
    pub clock: ClockModel,
    pub rx_velocity: Vector3<f64>,
    /// Noise power spectral density [W/Hz].
    pub noise_psd: f64,
    pub flags: ModelFlags,
}

impl Scenario {
    /// Line-of-sight-only scenario with an ideal clock and no noise.
    pub fn los(tx: ArrayGeometry, rx: ArrayGeometry, grid: SpectralGrid) -> Self {
        Self {
            tx,
            rx,
            paths: vec![PathGeometry::los()],
            ris: None,
            grid,
            clock: ClockModel::default(),
            rx_velocity: Vector3::zeros(),
            noise_psd: 0.0,
            flags: ModelFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.grid.validate()?;
        self.tx.validate()?;
        self.rx.validate()?;
        self.clock.validate()?;
        if self.paths.is_empty() && self.ris.is_none() {
            return Err(invariant("at least one path or one RIS", "empty channel"));
        }
        if (self.tx.center - self.rx.center).norm() < MIN_SEPARATION {
            return Err(invariant("Tx and Rx positions distinct", format!("{:?}", self.tx.center)));
        }
        if !self.rx_velocity.iter().all(|v| v.is_finite()) {
            return Err(invariant("velocity finite", format!("{:?}", self.rx_velocity)));
        }
        if !(self.noise_psd.is_finite() && self.noise_psd >= 0.0) {
            return Err(invariant("noise_psd >= 0", format!("{}", self.noise_psd)));
        }
        for p in &self.paths {
            p.validate()?;
        }
        if let Some(ris) = &self.ris {
            ris.validate(self.grid.n_symbols)?;
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.grid.wavelength()
    }

    /// Wavelength used for the array responses of subcarrier position `i`:
    /// `lambda_n` with beam squint, the carrier wavelength otherwise.
    pub fn array_wavelength(&self, i: usize) -> f64 {
        if self.flags.beam_squint {
            self.grid.subcarrier_wavelength(i)
        } else {
            self.grid.wavelength()
        }
    }

    /// Applies one rigid motion to every position and attitude.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let mut s = self.clone();
        s.tx = self.tx.transformed(rotation, translation);
        s.rx = self.rx.transformed(rotation, translation);
        for p in &mut s.paths {
            if let PathKind::SingleBounce { incidence_point } = &mut p.kind {
                *incidence_point = rotation * *incidence_point + translation;
            }
        }
        if let Some(ris) = &mut s.ris {
            ris.geometry = ris.geometry.transformed(rotation, translation);
        }
        s.rx_velocity = rotation * self.rx_velocity;
        s
    }
}

/// Per-path channel parameters derived from geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    /// Arrival direction in the Rx local frame.
    pub aoa: Direction,
    /// Departure direction in the Tx local frame.
    pub aod: Direction,
    /// Delay including the clock bias [s].
    pub delay_s: f64,
    pub doppler_hz: f64,
    /// Geometric propagation length [m].
    pub length_m: f64,
}

fn check_distinct(a: &Vector3<f64>, b: &Vector3<f64>, what: &str) -> Result<f64, ScenarioError> {
    let d = (a - b).norm();
    if d < MIN_SEPARATION {
        return Err(ScenarioError::DegenerateGeometry(what.to_string()));
    }
    Ok(d)
}

/// Gain magnitude from the Friis relation, `lambda / (4 pi d) sqrt(G_rx G_tx)`.
pub fn friis_amplitude(wavelength: f64, length: f64, g_rx: f64, g_tx: f64) -> f64 {
    wavelength / (4.0 * PI * length) * (g_rx * g_tx).sqrt()
}

/// Channel parameters of path `l`: gain with the carrier-phase model, local
/// angles, delay (plus clock bias) and Doppler.
pub fn geometric_path_params(s: &Scenario, l: usize) -> Result<PathParams, ScenarioError> {
    let path = s.paths.get(l).ok_or(ScenarioError::PathIndex {
        index: l,
        count: s.paths.len(),
    })?;
    let tx = s.tx.center;
    let rx = s.rx.center;
    check_distinct(&tx, &rx, "Tx and Rx coincide")?;
    let (last_hop_source, first_hop_target, length) = match path.kind {
        PathKind::LineOfSight => (tx, rx, (tx - rx).norm()),
        PathKind::SingleBounce { incidence_point } => {
            let d1 = check_distinct(&incidence_point, &tx, "incidence point at the Tx")?;
            let d2 = check_distinct(&incidence_point, &rx, "incidence point at the Rx")?;
            (incidence_point, incidence_point, d1 + d2)
        }
    };
    let lambda = s.wavelength();
    let u_rx = s.rx.local_unit_toward(&last_hop_source);
    let u_tx = s.tx.local_unit_toward(&first_hop_target);
    let amplitude = friis_amplitude(lambda, length, s.rx.gain_pattern.gain(&u_rx), s.tx.gain_pattern.gain(&u_tx)) * path.reflection_loss;
    let phase = -2.0 * PI * length / lambda + s.clock.tx_chain_phase + s.clock.rx_chain_phase + path.reflection_phase;
    let arrival_global = (last_hop_source - rx).normalize();
    Ok(PathParams {
        gain: Complex64::from_polar(amplitude, phase),
        aoa: Direction::from_vector(&u_rx),
        aod: Direction::from_vector(&u_tx),
        delay_s: length / SPEED_OF_LIGHT + s.clock.bias_s,
        doppler_hz: s.grid.carrier_hz * s.rx_velocity.dot(&arrival_global) / SPEED_OF_LIGHT,
        length_m: length,
    })
}

/// Geometry of the Tx -> RIS -> Rx route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisPathParams {
    /// Complex gain of the Tx -> RIS hop, including the Tx chain phase.
    pub gain_tx_ris: Complex64,
    /// Complex gain of the RIS -> Rx hop, including the Rx chain phase.
    pub gain_ris_rx: Complex64,
    /// Direction of the RIS in the Rx frame.
    pub aoa: Direction,
    /// Direction of the RIS in the Tx frame.
    pub aod: Direction,
    /// Direction of the Tx in the RIS frame.
    pub ris_arrival: Direction,
    /// Direction of the Rx in the RIS frame.
    pub ris_departure: Direction,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub length_m: f64,
}

pub fn ris_path_params(s: &Scenario) -> Result<RisPathParams, ScenarioError> {
    let ris = s.ris.as_ref().ok_or_else(|| ScenarioError::Field {
        field: "ris".into(),
        message: "scenario has no RIS".into(),
    })?;
    let p = ris.geometry.center;
    let d1 = check_distinct(&p, &s.tx.center, "RIS at the Tx")?;
    let d2 = check_distinct(&p, &s.rx.center, "RIS at the Rx")?;
    let lambda = s.wavelength();
    let u_rx = s.rx.local_unit_toward(&p);
    let u_tx = s.tx.local_unit_toward(&p);
    let g1 = friis_amplitude(lambda, d1, 1.0, s.tx.gain_pattern.gain(&u_tx));
    let g2 = friis_amplitude(lambda, d2, s.rx.gain_pattern.gain(&u_rx), 1.0);
    Ok(RisPathParams {
        gain_tx_ris: Complex64::from_polar(g1, -2.0 * PI * d1 / lambda + s.clock.tx_chain_phase),
        gain_ris_rx: Complex64::from_polar(g2, -2.0 * PI * d2 / lambda + s.clock.rx_chain_phase),
        aoa: Direction::from_vector(&u_rx),
        aod: Direction::from_vector(&u_tx),
        ris_arrival: ris.geometry.direction_toward(&s.tx.center),
        ris_departure: ris.geometry.direction_toward(&s.rx.center),
        delay_s: (d1 + d2) / SPEED_OF_LIGHT + s.clock.bias_s,
        doppler_hz: s.grid.carrier_hz * s.rx_velocity.dot(&(p - s.rx.center).normalize()) / SPEED_OF_LIGHT,
        length_m: d1 + d2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::to_db;
    use approx::assert_relative_eq;

    fn grid() -> SpectralGrid {
        SpectralGrid::with_bandwidth(28e9, 400e6, 64, 1).unwrap()
    }

    fn los_at(d: f64) -> Scenario {
        Scenario::los(
            ArrayGeometry::single(Vector3::zeros()),
            ArrayGeometry::single(Vector3::new(d, 0.0, 0.0)),
            grid(),
        )
    }

    #[test]
    fn friis_at_one_meter() {
        let p = geometric_path_params(&los_at(1.0), 0).unwrap();
        let lambda = SPEED_OF_LIGHT / 28e9;
        let expected = (lambda / (4.0 * PI)).powi(2);
        assert_relative_eq!(p.gain.norm_sqr(), expected, max_relative = 1e-12);
        assert_relative_eq!(to_db(p.gain.norm_sqr()), -61.39, epsilon = 0.01);
    }

    #[test]
    fn doubling_distance_costs_six_db() {
        let g1 = geometric_path_params(&los_at(3.0), 0).unwrap().gain.norm_sqr();
        let g2 = geometric_path_params(&los_at(6.0), 0).unwrap().gain.norm_sqr();
        assert_relative_eq!(to_db(g1) - to_db(g2), 20.0 * 2f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn collinear_bounce_matches_los_delay() {
        let mut s = los_at(10.0);
        s.clock.bias_s = 3e-9;
        s.paths.push(PathGeometry::single_bounce(Vector3::new(4.0, 0.0, 0.0)));
        let los = geometric_path_params(&s, 0).unwrap();
        let nlos = geometric_path_params(&s, 1).unwrap();
        assert_relative_eq!(los.delay_s, nlos.delay_s, max_relative = 1e-14);
        assert_relative_eq!(los.delay_s, 10.0 / SPEED_OF_LIGHT + 3e-9, max_relative = 1e-14);
    }

    #[test]
    fn zero_velocity_zero_doppler() {
        let mut s = los_at(5.0);
        s.paths.push(PathGeometry::single_bounce(Vector3::new(2.0, 3.0, 1.0)));
        for l in 0..2 {
            assert_eq!(geometric_path_params(&s, l).unwrap().doppler_hz, 0.0);
        }
    }

    #[test]
    fn doppler_sign_toward_source() {
        let mut s = los_at(5.0);
        // Rx at +x moving toward the Tx at the origin.
        s.rx_velocity = Vector3::new(-10.0, 0.0, 0.0);
        let p = geometric_path_params(&s, 0).unwrap();
        assert_relative_eq!(p.doppler_hz, 28e9 * 10.0 / SPEED_OF_LIGHT, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_geometry_errors() {
        let mut s = los_at(5.0);
        s.paths.push(PathGeometry::single_bounce(Vector3::zeros()));
        assert!(matches!(geometric_path_params(&s, 1), Err(ScenarioError::DegenerateGeometry(_))));
        let s = los_at(0.0);
        assert!(matches!(geometric_path_params(&s, 0), Err(ScenarioError::DegenerateGeometry(_))));
        assert!(matches!(geometric_path_params(&los_at(1.0), 3), Err(ScenarioError::PathIndex { .. })));
    }

    #[test]
    fn nlos_is_never_shorter_than_los() {
        let mut s = los_at(7.0);
        s.paths.push(PathGeometry::single_bounce(Vector3::new(3.0, 2.0, -1.0)));
        let a = geometric_path_params(&s, 0).unwrap();
        let b = geometric_path_params(&s, 1).unwrap();
        assert!(b.delay_s > a.delay_s);
        assert_relative_eq!(b.gain.norm() / a.gain.norm(), DEFAULT_REFLECTION_LOSS * a.length_m / b.length_m, max_relative = 1e-12);
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut s = los_at(1.0);
        s.tx = ArrayGeometry::ula(Vector3::new(1.0, 2.0, 0.5), Rotation3::from_euler_angles(0.1, 0.2, 0.3), 4, 0.005);
        s.rx = ArrayGeometry::upa(Vector3::new(8.0, -3.0, 1.0), Rotation3::from_euler_angles(-0.4, 0.1, 2.0), 2, 2, 0.005);
        s.paths.push(PathGeometry::single_bounce(Vector3::new(4.0, 5.0, 2.0)));
        let rot = Rotation3::from_euler_angles(0.7, -0.3, 1.9);
        let moved = s.transformed(&rot, &Vector3::new(-20.0, 4.0, 11.0));
        for l in 0..2 {
            let a = geometric_path_params(&s, l).unwrap();
            let b = geometric_path_params(&moved, l).unwrap();
            assert_relative_eq!(a.delay_s, b.delay_s, max_relative = 1e-12);
            assert_relative_eq!(a.gain.norm(), b.gain.norm(), max_relative = 1e-12);
            assert_relative_eq!(a.aoa.azimuth, b.aoa.azimuth, epsilon = 1e-9);
            assert_relative_eq!(a.aoa.elevation, b.aoa.elevation, epsilon = 1e-9);
            assert_relative_eq!(a.aod.azimuth, b.aod.azimuth, epsilon = 1e-9);
            assert_relative_eq!(a.aod.elevation, b.aod.elevation, epsilon = 1e-9);
        }
    }

    #[test]
    fn grid_indices_are_symmetric_around_carrier() {
        let g = grid();
        assert_eq!(g.subcarrier_index(0), -32);
        assert_eq!(g.subcarrier_index(63), 31);
        assert_eq!(g.position_of(0), Some(32));
        assert_eq!(g.position_of(32), None);
        assert_relative_eq!(g.bandwidth(), 400e6);
    }

    #[test]
    fn grid_invariants() {
        assert!(SpectralGrid::new(28e9, 1e6, 10, 1e-7, 1).is_err());
        assert!(SpectralGrid::new(1e6, 1e6, 10, 1e-6, 1).is_err());
        assert!(SpectralGrid::new(-1.0, 1e6, 10, 1e-6, 1).is_err());
    }

    #[test]
    fn orientation_must_be_a_rotation() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(ArrayGeometry::new(Vector3::zeros(), reflect, vec![Vector3::zeros()], GainPattern::Isotropic).is_err());
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(ArrayGeometry::new(Vector3::zeros(), skewed, vec![Vector3::zeros()], GainPattern::Isotropic).is_err());
        assert!(ArrayGeometry::new(Vector3::zeros(), Matrix3::identity(), vec![], GainPattern::Isotropic).is_err());
    }

    #[test]
    fn quantized_profile_set() {
        let set = ProfileSet::QuantizedPhase { bits: 1 };
        assert!(set.admits(Complex64::new(-1.0, 0.0)));
        assert!(set.admits(Complex64::new(0.0, 0.0)));
        assert!(!set.admits(Complex64::new(0.0, 1.0)));
        assert!(!ProfileSet::Continuous.admits(Complex64::new(1.0, 0.5)));
    }
}
