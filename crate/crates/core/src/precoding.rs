//! Transmit beams and array response maps.
//!
//! Coefficients are stored in "conjugate" form, so the array gain of a beam
//! toward a response vector `a` is `|c^T a|^2` and a matched beam reaches the
//! element count.

use nalgebra::{DVector, Rotation3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::channel::{near_field_response, steering_vector, ChannelError};
use crate::linalg::golden_max;
use crate::scenario::{ArrayGeometry, Direction, ModelFlags, SpectralGrid};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PrecodingError {
    #[error("focus distance required for a near-field focusing beam")]
    MissingFocusDistance,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("empty response grid")]
    EmptyGrid,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("export: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    /// Frequency-flat phase shifts matched at the carrier.
    Phase,
    /// True time delays, matched on every subcarrier.
    TimeDelay,
    /// Spherical-wavefront phases matched at a focus point, at the carrier.
    NearFieldFocus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamTarget {
    pub direction: Direction,
    pub focus_distance: Option<f64>,
}

impl BeamTarget {
    pub fn toward(direction: Direction) -> Self {
        Self { direction, focus_distance: None }
    }

    pub fn focused(direction: Direction, distance: f64) -> Self {
        Self {
            direction,
            focus_distance: Some(distance),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub kind: PrecoderKind,
    pub target: BeamTarget,
    /// One unit-norm vector per subcarrier position.
    pub coefficients: Vec<DVector<Complex64>>,
}

impl Precoder {
    /// Array gain `|c_i^T a|^2` for response vector `a` at subcarrier position `i`.
    pub fn gain(&self, i: usize, response: &DVector<Complex64>) -> f64 {
        self.coefficients[i].dot(response).norm_sqr()
    }

    /// The transmit vector `f` to feed into a channel: the coefficients themselves.
    pub fn transmit_vectors(&self) -> Vec<DVector<Complex64>> {
        self.coefficients.clone()
    }
}

fn matched(response: &DVector<Complex64>) -> DVector<Complex64> {
    let scale = 1.0 / (response.len() as f64).sqrt();
    response.map(|a| a.conj() * scale)
}

pub fn make_precoder(arr: &ArrayGeometry, kind: PrecoderKind, target: BeamTarget, grid: &SpectralGrid) -> Result<Precoder, PrecodingError> {
    let d = target.direction;
    if !d.azimuth.is_finite() || !d.elevation.is_finite() || d.elevation.abs() > PI / 2.0 {
        return Err(PrecodingError::InvalidTarget(format!("{d:?}")));
    }
    let n = grid.n_subcarriers;
    let coefficients = match kind {
        PrecoderKind::Phase => vec![matched(&steering_vector(arr, &d, grid.wavelength())); n],
        PrecoderKind::TimeDelay => (0..n)
            .map(|i| matched(&steering_vector(arr, &d, grid.subcarrier_wavelength(i))))
            .collect(),
        PrecoderKind::NearFieldFocus => {
            let dist = target.focus_distance.ok_or(PrecodingError::MissingFocusDistance)?;
            if !(dist.is_finite() && dist > 0.0) {
                return Err(PrecodingError::InvalidTarget(format!("focus distance {dist}")));
            }
            let focus = arr.point_along(&d, dist);
            vec![matched(&near_field_response(arr, &focus, grid.wavelength())?.response); n]
        }
    };
    Ok(Precoder { kind, target, coefficients })
}

/// Per-element delays of a time-delay beam: `tau_p = offset_p . u / c`, so the
/// coefficient on subcarrier `n` is `exp(-j 2 pi (f_c + n df) tau_p) / sqrt(P)`.
pub fn element_delays(arr: &ArrayGeometry, direction: &Direction) -> Vec<f64> {
    let u = direction.unit_vector();
    arr.element_offsets.iter().map(|o| o.dot(&u) / SPEED_OF_LIGHT).collect()
}

/// Array response of `arr` toward `(direction, distance)` at subcarrier
/// position `i` under the chosen model flags.
pub fn model_response(
    arr: &ArrayGeometry,
    direction: &Direction,
    distance: f64,
    grid: &SpectralGrid,
    i: usize,
    flags: &ModelFlags,
) -> Result<DVector<Complex64>, PrecodingError> {
    let lambda = if flags.beam_squint {
        grid.subcarrier_wavelength(i)
    } else {
        grid.wavelength()
    };
    if flags.near_field {
        Ok(near_field_response(arr, &arr.point_along(direction, distance), lambda)?.response)
    } else {
        Ok(steering_vector(arr, direction, lambda))
    }
}

/// Axes of a response map. Angles are azimuths at a fixed elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGrid {
    pub azimuths: Vec<f64>,
    pub elevation: f64,
    pub distances: Vec<f64>,
    /// Subcarrier positions.
    pub subcarriers: Vec<usize>,
}

impl ResponseGrid {
    /// 721 azimuths over `[-pi/2, pi/2]`, 200 log-spaced distances over 0.5 to 100 m,
    /// carrier-centre subcarrier.
    pub fn standard(grid: &SpectralGrid) -> Self {
        Self {
            azimuths: linspace(-PI / 2.0, PI / 2.0, 721),
            elevation: 0.0,
            distances: logspace(0.5, 100.0, 200),
            subcarriers: vec![grid.n_subcarriers / 2],
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Response values in dB relative to the map's global peak.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub grid: ResponseGrid,
    /// Linear array gains, indexed `[angle][distance][subcarrier]`.
    pub linear: Vec<f64>,
    pub peak: f64,
}

impl ResponseMap {
    fn index(&self, a: usize, d: usize, s: usize) -> usize {
        (a * self.grid.distances.len() + d) * self.grid.subcarriers.len() + s
    }

    pub fn linear_at(&self, a: usize, d: usize, s: usize) -> f64 {
        self.linear[self.index(a, d, s)]
    }

    pub fn db_at(&self, a: usize, d: usize, s: usize) -> f64 {
        crate::to_db(self.linear_at(a, d, s) / self.peak)
    }

    /// CSV with one row per angle and one column per (distance, subcarrier).
    pub fn write_csv<W: Write>(&self, w: W, carrier: &SpectralGrid) -> Result<(), PrecodingError> {
        let err = |e: csv::Error| PrecodingError::Export(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["azimuth_rad".to_string()];
        for d in &self.grid.distances {
            for s in &self.grid.subcarriers {
                header.push(format!("d={d:.4}m;n={}", carrier.subcarrier_index(*s)));
            }
        }
        out.write_record(&header).map_err(err)?;
        for (a, az) in self.grid.azimuths.iter().enumerate() {
            let mut row = vec![format!("{az:.6}")];
            for d in 0..self.grid.distances.len() {
                for s in 0..self.grid.subcarriers.len() {
                    row.push(format!("{:.4}", self.db_at(a, d, s)));
                }
            }
            out.write_record(&row).map_err(err)?;
        }
        out.flush().map_err(|e| PrecodingError::Export(e.to_string()))
    }
}

/// `|c_n^T a_model(angle, distance, lambda_n)|^2` over the grid.
pub fn response_map(arr: &ArrayGeometry, p: &Precoder, rg: &ResponseGrid, grid: &SpectralGrid, flags: &ModelFlags) -> Result<ResponseMap, PrecodingError> {
    if rg.azimuths.is_empty() || rg.distances.is_empty() || rg.subcarriers.is_empty() {
        return Err(PrecodingError::EmptyGrid);
    }
    let rows: Vec<Vec<f64>> = rg
        .azimuths
        .par_iter()
        .map(|&az| -> Result<Vec<f64>, PrecodingError> {
            let dir = Direction::new(az, rg.elevation);
            let mut row = Vec::with_capacity(rg.distances.len() * rg.subcarriers.len());
            for &d in &rg.distances {
                for &i in &rg.subcarriers {
                    row.push(p.gain(i, &model_response(arr, &dir, d, grid, i, flags)?));
                }
            }
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    let linear: Vec<f64> = rows.into_iter().flatten().collect();
    let peak = linear.iter().cloned().fold(0.0, f64::max);
    Ok(ResponseMap {
        grid: rg.clone(),
        linear,
        peak,
    })
}

/// Azimuth of the far-field response peak at subcarrier position `i`,
/// refined beyond the grid spacing.
pub fn peak_azimuth(arr: &ArrayGeometry, p: &Precoder, grid: &SpectralGrid, i: usize, elevation: f64, flags: &ModelFlags) -> Result<f64, PrecodingError> {
    let far = ModelFlags { near_field: false, ..*flags };
    let eval = |az: f64| -> f64 {
        model_response(arr, &Direction::new(az, elevation), 1.0, grid, i, &far)
            .map(|a| p.gain(i, &a))
            .unwrap_or(0.0)
    };
    let azimuths = linspace(-PI / 2.0, PI / 2.0, 721);
    let step = azimuths[1] - azimuths[0];
    let best = azimuths
        .iter()
        .cloned()
        .max_by(|x, y| eval(*x).total_cmp(&eval(*y)))
        .ok_or(PrecodingError::EmptyGrid)?;
    Ok(golden_max(eval, best - step, best + step, 1e-10))
}

/// Beam squint predicted for a linear array steered to `azimuth` (in the array
/// plane) with a phase-only beam, at a frequency `f` instead of the carrier.
pub fn ula_squint(azimuth: f64, carrier_hz: f64, frequency_hz: f64) -> f64 {
    (azimuth.sin() * carrier_hz / frequency_hz).asin() - azimuth
}

/// Wideband 64-element half-wavelength ULA at 28 GHz with 400 MHz bandwidth
/// over 64 subcarriers, targeting azimuth `pi/4`, with a focus distance of 2.8 m.
#[derive(Debug, Clone)]
pub struct WidebandUlaSetup {
    pub array: ArrayGeometry,
    pub grid: SpectralGrid,
    pub target: Direction,
    pub focus_distance: f64,
}

impl WidebandUlaSetup {
    pub fn standard() -> Self {
        let grid = SpectralGrid::with_bandwidth(28e9, 400e6, 64, 1).expect("valid preset grid");
        let array = ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), 64, grid.wavelength() / 2.0);
        Self {
            array,
            grid,
            target: Direction::azimuth_only(PI / 4.0),
            focus_distance: 2.8,
        }
    }

    /// Distance axis for near-field maps: 0.5 m to 20 m in 0.05 m steps.
    pub fn distance_axis() -> Vec<f64> {
        (10..=400).map(|i| i as f64 * 0.05).collect()
    }
}


/// Squint of a phase beam at one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SquintSample {
    pub subcarrier: i64,
    pub frequency_hz: f64,
    pub peak_azimuth_rad: f64,
    pub predicted_shift_rad: f64,
}

impl SquintSample {
    pub fn relative_error(&self, target: f64) -> f64 {
        ((self.peak_azimuth_rad - target) - self.predicted_shift_rad).abs() / self.predicted_shift_rad.abs()
    }
}

/// Headline numbers of the wideband and near-field beam comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamStudy {
    /// Phase beam at the lowest and highest subcarriers.
    pub squint: Vec<SquintSample>,
    /// Largest on-target deviation of the time-delay beam from full gain [dB].
    pub time_delay_ripple_db: f64,
    /// On-target gain of the focusing beam over the far-field beam at the
    /// focus distance [dB].
    pub near_field_gain_db: f64,
    /// Distance-axis peak of the focusing beam along the target direction.
    pub focus_peak_m: f64,
    pub distance_step_m: f64,
}

pub fn beam_study(setup: &WidebandUlaSetup) -> Result<BeamStudy, PrecodingError> {
    let (arr, grid, target) = (&setup.array, &setup.grid, setup.target);
    let phase = make_precoder(arr, PrecoderKind::Phase, BeamTarget::toward(target), grid)?;
    let wide = ModelFlags {
        beam_squint: true,
        ..Default::default()
    };
    let squint = [0, grid.n_subcarriers - 1]
        .iter()
        .map(|&i| -> Result<SquintSample, PrecodingError> {
            let f = grid.carrier_hz + grid.baseband_frequency(i);
            Ok(SquintSample {
                subcarrier: grid.subcarrier_index(i),
                frequency_hz: f,
                peak_azimuth_rad: peak_azimuth(arr, &phase, grid, i, target.elevation, &wide)?,
                predicted_shift_rad: ula_squint(target.azimuth, grid.carrier_hz, f),
            })
        })
        .collect::<Result<_, _>>()?;
    let ttd = make_precoder(arr, PrecoderKind::TimeDelay, BeamTarget::toward(target), grid)?;
    let full = arr.num_elements() as f64;
    let mut ripple: f64 = 0.0;
    for i in 0..grid.n_subcarriers {
        let a = model_response(arr, &target, 1.0, grid, i, &wide)?;
        ripple = ripple.max(crate::to_db(ttd.gain(i, &a) / full).abs());
    }
    let near = ModelFlags {
        near_field: true,
        ..Default::default()
    };
    let centre = grid.n_subcarriers / 2;
    let focus = make_precoder(arr, PrecoderKind::NearFieldFocus, BeamTarget::focused(target, setup.focus_distance), grid)?;
    let a = model_response(arr, &target, setup.focus_distance, grid, centre, &near)?;
    let near_field_gain_db = crate::to_db(focus.gain(centre, &a) / phase.gain(centre, &a));
    let distances = WidebandUlaSetup::distance_axis();
    let rg = ResponseGrid {
        azimuths: vec![target.azimuth],
        elevation: target.elevation,
        distances: distances.clone(),
        subcarriers: vec![centre],
    };
    let m = response_map(arr, &focus, &rg, grid, &near)?;
    let best = (0..distances.len())
        .max_by(|x, y| m.linear_at(0, *x, 0).total_cmp(&m.linear_at(0, *y, 0)))
        .ok_or(PrecodingError::EmptyGrid)?;
    Ok(BeamStudy {
        squint,
        time_delay_ripple_db: ripple,
        near_field_gain_db,
        focus_peak_m: distances[best],
        distance_step_m: distances[1] - distances[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup() -> WidebandUlaSetup {
        WidebandUlaSetup::standard()
    }

    #[test]
    fn phase_beam_full_gain_at_carrier() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let a = steering_vector(&s.array, &s.target, s.grid.wavelength());
        assert_relative_eq!(p.gain(0, &a), 64.0, max_relative = 1e-12);
        for c in &p.coefficients {
            assert_relative_eq!(c.norm(), 1.0, epsilon = 1e-12);
        }
        assert!(p.coefficients.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn time_delay_beam_full_gain_everywhere() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::TimeDelay, BeamTarget::toward(s.target), &s.grid).unwrap();
        let taus = element_delays(&s.array, &s.target);
        for i in 0..s.grid.n_subcarriers {
            let a = steering_vector(&s.array, &s.target, s.grid.subcarrier_wavelength(i));
            assert_relative_eq!(p.gain(i, &a), 64.0, max_relative = 1e-10);
            let f = s.grid.carrier_hz + s.grid.baseband_frequency(i);
            for (c, tau) in p.coefficients[i].iter().zip(&taus) {
                let expected = Complex64::from_polar(1.0 / 8.0, -2.0 * PI * f * tau);
                assert_relative_eq!((c - expected).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn focus_requires_distance() {
        let s = setup();
        assert_eq!(
            make_precoder(&s.array, PrecoderKind::NearFieldFocus, BeamTarget::toward(s.target), &s.grid),
            Err(PrecodingError::MissingFocusDistance)
        );
    }

    #[test]
    fn edge_subcarrier_squint_matches_ula_formula() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let flags = ModelFlags { beam_squint: true, ..Default::default() };
        for i in [0, s.grid.n_subcarriers - 1] {
            let peak = peak_azimuth(&s.array, &p, &s.grid, i, 0.0, &flags).unwrap();
            let f = s.grid.carrier_hz + s.grid.baseband_frequency(i);
            let predicted = ula_squint(PI / 4.0, s.grid.carrier_hz, f);
            assert_relative_eq!(peak - PI / 4.0, predicted, max_relative = 1e-3);
        }
        // Half-band edge value quoted for the preset.
        assert_relative_eq!(ula_squint(PI / 4.0, 28e9, 28.2e9), -0.00707, max_relative = 1e-2);
    }

    #[test]
    fn squint_is_monotone_in_index_and_zero_at_centre() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let flags = ModelFlags { beam_squint: true, ..Default::default() };
        let shift = |n: i64| (peak_azimuth(&s.array, &p, &s.grid, s.grid.position_of(n).unwrap(), 0.0, &flags).unwrap() - PI / 4.0).abs();
        assert!(shift(0) < 1e-7);
        for sign in [-1i64, 1] {
            let mags: Vec<f64> = [4i64, 12, 20, 31].iter().map(|m| shift(sign * m)).collect();
            assert!(mags.windows(2).all(|w| w[1] > w[0]), "{mags:?}");
        }
    }

    #[test]
    fn time_delay_on_target_is_flat() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::TimeDelay, BeamTarget::toward(s.target), &s.grid).unwrap();
        let rg = ResponseGrid {
            azimuths: vec![PI / 4.0],
            elevation: 0.0,
            distances: vec![10.0],
            subcarriers: (0..64).collect(),
        };
        let m = response_map(&s.array, &p, &rg, &s.grid, &ModelFlags { beam_squint: true, ..Default::default() }).unwrap();
        for i in 0..64 {
            assert!(m.db_at(0, 0, i).abs() < 0.1);
        }
    }

    #[test]
    fn far_field_map_is_distance_independent() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let rg = ResponseGrid {
            azimuths: linspace(0.0, 1.2, 41),
            elevation: 0.0,
            distances: vec![0.7, 3.0, 50.0],
            subcarriers: vec![32],
        };
        let m = response_map(&s.array, &p, &rg, &s.grid, &ModelFlags::default()).unwrap();
        for a in 0..41 {
            assert_eq!(m.linear_at(a, 0, 0), m.linear_at(a, 2, 0));
        }
    }

    #[test]
    fn single_element_map_is_flat() {
        let grid = SpectralGrid::with_bandwidth(28e9, 400e6, 4, 1).unwrap();
        let arr = ArrayGeometry::single(Vector3::zeros());
        let p = make_precoder(&arr, PrecoderKind::Phase, BeamTarget::toward(Direction::azimuth_only(0.3)), &grid).unwrap();
        let rg = ResponseGrid {
            azimuths: linspace(-1.5, 1.5, 31),
            elevation: 0.0,
            distances: vec![1.0, 4.0],
            subcarriers: vec![0, 3],
        };
        let m = response_map(&arr, &p, &rg, &grid, &ModelFlags { near_field: true, beam_squint: true, ..Default::default() }).unwrap();
        assert!(m.linear.iter().all(|v| (crate::to_db(v / m.peak)).abs() < 1e-12));
    }

    #[test]
    fn focus_peaks_at_focus_distance() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::NearFieldFocus, BeamTarget::focused(s.target, s.focus_distance), &s.grid).unwrap();
        let distances = WidebandUlaSetup::distance_axis();
        let rg = ResponseGrid {
            azimuths: vec![PI / 4.0],
            elevation: 0.0,
            distances: distances.clone(),
            subcarriers: vec![32],
        };
        let m = response_map(&s.array, &p, &rg, &s.grid, &ModelFlags { near_field: true, ..Default::default() }).unwrap();
        let best = (0..distances.len()).max_by(|a, b| m.linear_at(0, *a, 0).total_cmp(&m.linear_at(0, *b, 0))).unwrap();
        assert!((distances[best] - 2.8).abs() <= 0.05 + 1e-9, "{}", distances[best]);
    }

    #[test]
    fn near_field_loss_grows_as_user_approaches() {
        let s = setup();
        let nf_flags = ModelFlags { near_field: true, ..Default::default() };
        let loss = |dist: f64| {
            let ff = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
            let nf = make_precoder(&s.array, PrecoderKind::NearFieldFocus, BeamTarget::focused(s.target, dist), &s.grid).unwrap();
            let a = model_response(&s.array, &s.target, dist, &s.grid, 32, &nf_flags).unwrap();
            crate::to_db(nf.gain(32, &a) / ff.gain(32, &a))
        };
        let (l1, l28, l10) = (loss(1.0), loss(2.8), loss(10.0));
        assert!(l1 > 3.0 && l1 > l28 && l28 > l10 && l10 > 0.0, "{l1} {l28} {l10}");
    }

    #[test]
    fn element_displacement_degrades_the_beam() {
        use crate::channel::{perturbed_scenario, ImpairmentSpec};
        use crate::scenario::Scenario;
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let rg = ResponseGrid {
            azimuths: linspace(-PI / 2.0, PI / 2.0, 721),
            elevation: 0.0,
            distances: vec![10.0],
            subcarriers: vec![32],
        };
        let flags = ModelFlags::default();
        let clean = response_map(&s.array, &p, &rg, &s.grid, &flags).unwrap();
        let scenario = Scenario::los(s.array.clone(), ArrayGeometry::single(Vector3::new(10.0, 0.0, 0.0)), s.grid.clone());
        let spec = ImpairmentSpec {
            element_displacement_sigma: s.grid.wavelength() / 20.0,
            seed: 3,
            ..Default::default()
        };
        let impaired_arr = perturbed_scenario(&scenario, &spec).unwrap().tx;
        let impaired = response_map(&impaired_arr, &p, &rg, &s.grid, &flags).unwrap();
        let peak = |m: &ResponseMap| m.linear.iter().cloned().fold(0.0, f64::max);
        assert!(peak(&impaired) < peak(&clean));
        // Mean response away from the main lobe.
        let side = |m: &ResponseMap| {
            let vals: Vec<f64> = rg.azimuths.iter().enumerate().filter(|(_, az)| (*az - PI / 4.0).abs() > 0.1).map(|(a, _)| m.linear_at(a, 0, 0)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(side(&impaired) > side(&clean));
    }

    #[test]
    fn beam_study_summary() {
        let b = beam_study(&setup()).unwrap();
        assert_eq!(b.squint.len(), 2);
        assert!(b.squint.iter().all(|q| q.relative_error(PI / 4.0) < 1e-2));
        assert!(b.squint[0].predicted_shift_rad > 0.0 && b.squint[1].predicted_shift_rad < 0.0);
        assert!(b.time_delay_ripple_db < 1e-6);
        assert!(b.near_field_gain_db > 0.0);
        assert!((b.focus_peak_m - 2.8).abs() <= b.distance_step_m);
    }

    #[test]
    fn csv_export_shape() {
        let s = setup();
        let p = make_precoder(&s.array, PrecoderKind::Phase, BeamTarget::toward(s.target), &s.grid).unwrap();
        let rg = ResponseGrid {
            azimuths: linspace(0.0, 1.0, 5),
            elevation: 0.0,
            distances: vec![1.0, 2.0],
            subcarriers: vec![0, 63],
        };
        let m = response_map(&s.array, &p, &rg, &s.grid, &ModelFlags::default()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &s.grid).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 5);
        assert!(response_map(&s.array, &p, &ResponseGrid { azimuths: vec![], ..rg }, &s.grid, &ModelFlags::default()).is_err());
    }
}
