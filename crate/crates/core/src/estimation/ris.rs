use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::ml::{search_directions, AngleGrid, DelayCorrelator};
use super::solver::{FixOptions, FixResult, Problem};
use super::{compass_max, EstimationError};
use crate::bounds::ParamLayout;
use crate::channel::{steering_vector, Observations, SignalDesign};
use crate::scenario::{ArrayGeometry, Direction, PathGeometry, Scenario};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisFixOptions {
    pub oversample: usize,
    /// Weights of the final least-squares polish.
    pub delay_sigma_s: f64,
    pub angle_sigma_rad: f64,
    pub fix: FixOptions,
}

impl Default for RisFixOptions {
    fn default() -> Self {
        Self {
            oversample: 16,
            delay_sigma_s: 1e-11,
            angle_sigma_rad: 1e-3,
            fix: FixOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisFix {
    pub fix: FixResult,
    pub los_delay_s: f64,
    pub ris_delay_s: f64,
    /// Direction of the user in the RIS frame.
    pub ris_departure: Direction,
    /// Gain of the RIS route without the profile response.
    pub ris_gain: Complex64,
}

/// Checks that symbol `2j+1` uses the negated profile of symbol `2j`.
fn check_code(profiles: &[Vec<Complex64>]) -> Result<(), EstimationError> {
    let k = profiles.len();
    let static_code = profiles.iter().all(|p| p.iter().zip(&profiles[0]).all(|(a, b)| (a - b).norm() < 1e-12));
    if static_code {
        return Err(EstimationError::SeparationImpossible("the RIS profile does not change over symbols".into()));
    }
    if k < 2 || k % 2 != 0 {
        return Err(EstimationError::SeparationImpossible(format!("{k} symbols cannot hold sign-alternating profile pairs")));
    }
    let paired = (0..k / 2).all(|j| profiles[2 * j].iter().zip(&profiles[2 * j + 1]).all(|(a, b)| (a + b).norm() < 1e-12));
    if !paired {
        return Err(EstimationError::SeparationImpossible(
            "profiles must alternate sign between symbols 2j and 2j+1".into(),
        ));
    }
    Ok(())
}

/// Position and clock of a single-antenna user from one single-antenna BS
/// and one RIS with a sign-alternating temporal code. Only `s.tx`, `s.ris`
/// and `s.grid` are used; the user position in `s` is ignored. Doppler is
/// taken as zero.
pub fn ris_fix(obs: &Observations, s: &Scenario, design: &SignalDesign, opts: &RisFixOptions) -> Result<RisFix, EstimationError> {
    let grid = &s.grid;
    let ris = s
        .ris
        .as_ref()
        .ok_or_else(|| EstimationError::InvalidInput("scenario has no RIS".into()))?;
    if s.tx.num_elements() != 1 || obs.outputs() != 1 || design.combiner.nrows() != 1 {
        return Err(EstimationError::InvalidInput("RIS positioning expects a single-antenna BS and user".into()));
    }
    if obs.grid != *grid {
        return Err(EstimationError::InvalidInput("observations and scenario use different grids".into()));
    }
    design.validate(grid, 1, 1)?;
    check_code(&ris.profiles)?;
    let (n, k) = (grid.n_subcarriers, grid.n_symbols);
    let w = design.combiner[(0, 0)].conj();
    let mut rows = vec![vec![Complex64::new(0.0, 0.0); n]; k];
    for (kk, row) in rows.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let e = w * design.precoder(grid, i, kk)[0];
            if e.norm() == 0.0 {
                return Err(EstimationError::InvalidInput(format!("zero transmit weight at subcarrier {i}, symbol {kk}")));
            }
            *v = obs.get(i, kk)[0] / e;
        }
    }
    let pairs = k / 2;
    let ris_rows: Vec<Vec<Complex64>> = (0..pairs)
        .map(|j| rows[2 * j].iter().zip(&rows[2 * j + 1]).map(|(a, b)| (a - b) / 2.0).collect())
        .collect();
    let static_row: Vec<Vec<Complex64>> = vec![(0..n).map(|i| rows.iter().map(|r| r[i]).sum::<Complex64>() / k as f64).collect()];
    let amps: Vec<f64> = design.powers.iter().map(|p| p.sqrt()).collect();
    let total: f64 = design.powers.iter().sum();

    let corr = DelayCorrelator::new(&ris_rows, amps.clone(), grid);
    let tau0 = corr.search(grid, opts.oversample.max(1));
    let lambda = s.wavelength();
    let arrival = ris.geometry.direction_toward(&s.tx.center);
    let a_arr = steering_vector(&ris.geometry, &arrival, lambda);
    let weighted = DMatrix::from_fn(ris.num_elements(), pairs, |m, j| ris.profiles[2 * j][m] * a_arr[m]);
    let response = |d: &Direction| (steering_vector(&ris.geometry, d, lambda).transpose() * &weighted).transpose();
    let c0 = DVector::from_vec(corr.correlate_all(tau0));
    let angle_metric = |d: &Direction| {
        let b = response(d);
        let nb = b.norm_squared();
        if nb > 0.0 {
            b.dotc(&c0).norm_sqr() / nb
        } else {
            0.0
        }
    };
    let angle_grid = AngleGrid::for_array(&ris.geometry);
    let (d0, _, _) = search_directions(&angle_grid, &angle_metric, None)?;
    let joint = |x: &[f64]| {
        let d = Direction::new(x[1], x[2]);
        let b = response(&d);
        let nb = b.norm_squared();
        if nb == 0.0 {
            return 0.0;
        }
        let inner: Complex64 = corr.correlate_all(x[0]).iter().zip(b.iter()).map(|(c, bj)| bj.conj() * c).sum();
        inner.norm_sqr() / nb
    };
    let steps = [0.25 / grid.bandwidth(), 2e-3, if angle_grid.elevations.len() > 1 { 2e-3 } else { 0.0 }];
    let free: Vec<usize> = (0..3).filter(|&i| steps[i] > 0.0).collect();
    let x0 = [tau0, d0.azimuth, d0.elevation];
    let expand = |sub: &[f64]| {
        let mut x = x0;
        for (j, &i) in free.iter().enumerate() {
            x[i] = sub[j];
        }
        x
    };
    let (sub, _) = compass_max(
        |sub| joint(&expand(sub)),
        &free.iter().map(|&i| x0[i]).collect::<Vec<_>>(),
        &free.iter().map(|&i| steps[i]).collect::<Vec<_>>(),
        1e-9,
    );
    let [ris_delay_s, az, el] = expand(&sub);
    let ris_departure = Direction::new(az, el);
    let b = response(&ris_departure);
    let inner: Complex64 = corr.correlate_all(ris_delay_s).iter().zip(b.iter()).map(|(c, bj)| bj.conj() * c).sum();
    let ris_gain = inner / (total * b.norm_squared());

    let los_delay_s = DelayCorrelator::new(&static_row, amps, grid).search(grid, opts.oversample.max(1));
    let period = 1.0 / grid.subcarrier_spacing_hz;
    let mut gap = (ris_delay_s - los_delay_s).rem_euclid(period);
    if gap > period / 2.0 {
        gap -= period;
    }

    let x_bs = s.tx.center;
    let x_ris = ris.geometry.center;
    let u = ris.geometry.orientation * ris_departure.unit_vector();
    let span = (x_ris - x_bs).norm();
    let e = span - SPEED_OF_LIGHT * gap;
    let q = x_ris - x_bs;
    let r = (e * e - span * span) / (2.0 * (q.dot(&u) - e));
    if !(r.is_finite() && r > 0.0) {
        return Err(EstimationError::SeparationImpossible(format!(
            "delay gap {gap:e} s and departure direction admit no user position"
        )));
    }
    let p = x_ris + r * u;
    let bias = los_delay_s - (p - x_bs).norm() / SPEED_OF_LIGHT;

    let mut template = Scenario::los(s.tx.clone(), ArrayGeometry::single(p), grid.clone());
    template.paths = vec![PathGeometry::los()];
    template.ris = Some(ris.clone());
    template.clock.bias_s = bias;
    let layout = ParamLayout {
        paths: 1,
        has_ris: true,
        include_doppler: false,
    };
    let mut measured = DVector::zeros(10);
    measured[0] = los_delay_s;
    measured[5] = los_delay_s + gap;
    measured[8] = ris_departure.azimuth;
    measured[9] = ris_departure.elevation;
    let mut info = DMatrix::zeros(10, 10);
    let wd = opts.delay_sigma_s.powi(-2);
    let wa = opts.angle_sigma_rad.powi(-2);
    info[(0, 0)] = wd;
    info[(5, 5)] = wd;
    info[(8, 8)] = wa;
    if angle_grid.elevations.len() > 1 {
        info[(9, 9)] = wa;
    }
    let problem = Problem::new(template.clone(), layout, measured, info)?;
    problem.require_identifiable(&template)?;
    let (x, converged, iterations, cost) = problem.solve(template, &opts.fix);
    Ok(RisFix {
        fix: problem.result(&x, converged, iterations, cost),
        los_delay_s,
        ris_delay_s,
        ris_departure,
        ris_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe, synthesize};
    use crate::scenario::{RisPanel, SpectralGrid};
    use nalgebra::{Rotation3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(extra_path: bool) -> (Scenario, SignalDesign) {
        let grid = SpectralGrid::with_bandwidth(28e9, 400e6, 64, 16).unwrap();
        let lambda = grid.wavelength();
        let mut s = Scenario::los(
            ArrayGeometry::single(Vector3::zeros()),
            ArrayGeometry::single(Vector3::new(10.0, 2.0, 0.5)),
            grid.clone(),
        );
        let panel = ArrayGeometry::upa(
            Vector3::new(5.0, 8.0, 0.0),
            Rotation3::from_axis_angle(&Vector3::z_axis(), -PI / 2.0),
            8,
            8,
            lambda / 2.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        s.ris = Some(RisPanel::random_pm_code(panel, 16, &mut rng));
        s.clock.bias_s = 5e-9;
        if extra_path {
            s.paths.push(PathGeometry::single_bounce(Vector3::new(4.0, -3.0, 0.2)));
        }
        let design = SignalDesign::uniform(vec![DVector::from_element(1, Complex64::new(1.0, 0.0))], &grid, 1, 1.0);
        (s, design)
    }

    #[test]
    fn noiseless_siso_with_ris_recovers_position() {
        let (s, design) = setup(false);
        let obs = observe(&synthesize(&s).unwrap(), &design, 0.0, 0).unwrap();
        let out = ris_fix(&obs, &s, &design, &RisFixOptions::default()).unwrap();
        assert!(out.fix.converged);
        assert!((out.fix.position - s.rx.center).norm() < 1e-6, "{}", (out.fix.position - s.rx.center).norm());
        assert!((out.fix.bias_s - s.clock.bias_s).abs() < 1e-14);
        assert!(out.fix.orientation.is_none());
    }

    #[test]
    fn reflection_response_matches_channel_model() {
        let (s, _) = setup(false);
        let ris = s.ris.as_ref().unwrap();
        let lambda = s.wavelength();
        let arrival = ris.geometry.direction_toward(&s.tx.center);
        let d = Direction::new(0.2, -0.1);
        let direct = crate::channel::ris_reflection(&ris.geometry, &ris.profiles[4], &d, &arrival, lambda);
        let a_arr = steering_vector(&ris.geometry, &arrival, lambda);
        let a_dep = steering_vector(&ris.geometry, &d, lambda);
        let folded: Complex64 = (0..ris.num_elements()).map(|m| a_dep[m] * ris.profiles[4][m] * a_arr[m]).sum();
        assert!((direct - folded).norm() < 1e-12);
    }

    #[test]
    fn static_code_is_refused() {
        let (mut s, design) = setup(false);
        let ris = s.ris.as_mut().unwrap();
        let first = ris.profiles[0].clone();
        ris.profiles.iter_mut().for_each(|p| *p = first.clone());
        let obs = observe(&synthesize(&s).unwrap(), &design, 0.0, 0).unwrap();
        let err = ris_fix(&obs, &s, &design, &RisFixOptions::default()).unwrap_err();
        assert!(matches!(err, EstimationError::SeparationImpossible(_)));
    }

    #[test]
    fn uncontrolled_multipath_leaves_ris_estimates_unchanged() {
        let (clean, design) = setup(false);
        let (busy, _) = setup(true);
        let a = ris_fix(&observe(&synthesize(&clean).unwrap(), &design, 0.0, 0).unwrap(), &clean, &design, &RisFixOptions::default()).unwrap();
        let b = ris_fix(&observe(&synthesize(&busy).unwrap(), &design, 0.0, 0).unwrap(), &busy, &design, &RisFixOptions::default()).unwrap();
        let cell = 1.0 / clean.grid.bandwidth();
        assert!((a.ris_delay_s - b.ris_delay_s).abs() < 1e-6 * cell);
        assert!((a.ris_departure.azimuth - b.ris_departure.azimuth).abs() < 1e-7);
        assert!((a.ris_departure.elevation - b.ris_departure.elevation).abs() < 1e-7);
        assert!((a.ris_gain - b.ris_gain).norm() < 1e-6 * a.ris_gain.norm());
    }
}
