//! Constant-velocity extended Kalman filter over user position, velocity
//! and clock offset.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;

use crate::bounds::{link_jacobian, ChannelParameters, FimOptions, ParamLayout, StateLayout};
use crate::linalg::{min_eigenvalue, psd_sqrt, symmetrize, wrap_pi};
use crate::scenario::Scenario;
use crate::SPEED_OF_LIGHT;

pub const STATE_DIM: usize = 7;
pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Debug, thiserror::Error)]
pub enum TrackingError {
    #[error("time step must be positive, got {0} s")]
    NonPositiveStep(f64),
    #[error("timestamps must increase strictly: {previous} s then {next} s")]
    NonIncreasingTime { previous: f64, next: f64 },
    #[error("{0}")]
    InvalidCovariance(String),
    #[error("invalid motion model: {0}")]
    InvalidModel(String),
    #[error("measurement: {0}")]
    Measurement(String),
    #[error("trajectory file: {0}")]
    Io(String),
}

/// Filter state `[x, y, z, vx, vy, vz, c*B]`; the clock offset is carried in
/// metres.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub covariance: StateCov,
    pub timestamp: f64,
}

impl TrackState {
    pub fn new(mean: StateVec, covariance: StateCov, timestamp: f64) -> Result<Self, TrackingError> {
        check_psd(&DMatrix::from_column_slice(STATE_DIM, STATE_DIM, covariance.as_slice()), "state covariance")?;
        Ok(Self { mean, covariance, timestamp })
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
    }
}

/// White-acceleration motion with a random-walk clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// Acceleration noise density per axis [(m/s^2)^2/Hz].
    pub process_noise_psd: f64,
    /// Growth rate of the clock-offset variance [m^2/s].
    pub clock_drift_variance: f64,
}

impl MotionModel {
    pub fn validate(&self) -> Result<(), TrackingError> {
        for (name, v) in [("process noise", self.process_noise_psd), ("clock drift", self.clock_drift_variance)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrackingError::InvalidModel(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn transition(&self, dt: f64) -> StateCov {
        let mut f = StateCov::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        f
    }

    /// Discretized process noise over `dt`.
    pub fn noise(&self, dt: f64) -> StateCov {
        let q = self.process_noise_psd;
        let mut m = StateCov::zeros();
        for i in 0..3 {
            m[(i, i)] = q * dt.powi(3) / 3.0;
            m[(i, i + 3)] = q * dt.powi(2) / 2.0;
            m[(i + 3, i)] = q * dt.powi(2) / 2.0;
            m[(i + 3, i + 3)] = q * dt;
        }
        m[(6, 6)] = self.clock_drift_variance * dt;
        m
    }
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<(), TrackingError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::InvalidCovariance(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(TrackingError::InvalidCovariance(format!("{what} is not symmetric")));
    }
    let min = min_eigenvalue(m);
    if min < -1e-12 * scale {
        return Err(TrackingError::InvalidCovariance(format!("{what} has eigenvalue {min:e}")));
    }
    Ok(())
}

pub fn predict(t: &TrackState, m: &MotionModel, dt: f64) -> Result<TrackState, TrackingError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(TrackingError::NonPositiveStep(dt));
    }
    m.validate()?;
    let f = m.transition(dt);
    let p = f * t.covariance * f.transpose() + m.noise(dt);
    Ok(TrackState {
        mean: f * t.mean,
        covariance: (p + p.transpose()) * 0.5,
        timestamp: t.timestamp + dt,
    })
}

/// What a measurement-domain update observes for every path of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathComponents {
    pub arrival_angles: bool,
    /// Doppler shift, which fuses the velocity as a range rate.
    pub doppler: bool,
}

impl PathComponents {
    fn per_path(&self) -> usize {
        1 + 2 * usize::from(self.arrival_angles) + usize::from(self.doppler)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    /// A position fix with its covariance.
    Position { position: Vector3<f64>, covariance: Matrix3<f64> },
    /// Per path, in scenario order: delay [s], then optionally the local
    /// arrival azimuth and elevation, then optionally Doppler [Hz].
    Paths {
        values: DVector<f64>,
        covariance: DMatrix<f64>,
        components: PathComponents,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub innovation: DVector<f64>,
    /// Normalized innovation squared.
    pub nis: f64,
}

/// Predicted path measurements and their Jacobian with respect to the track
/// state, from the scenario geometry with the user moved to the track mean.
fn path_model(t: &TrackState, s: &Scenario, c: &PathComponents) -> Result<(DVector<f64>, DMatrix<f64>, Vec<bool>), TrackingError> {
    let mut moved = s.clone();
    moved.rx.center = t.position();
    moved.rx_velocity = t.velocity();
    moved.clock.bias_s = t.mean[6] / SPEED_OF_LIGHT;
    moved.ris = None;
    let opts = FimOptions {
        include_doppler: c.doppler,
        ..Default::default()
    };
    let layout = ParamLayout::for_scenario(&moved, &opts);
    let state = StateLayout {
        orientation: false,
        clock: true,
        velocity: c.doppler,
        ips: vec![moved.paths.iter().filter(|p| !p.is_los()).count()],
    };
    let params = ChannelParameters::from_scenario(&moved)
        .map_err(|e| TrackingError::Measurement(e.to_string()))?
        .geometric_vector(&layout);
    let jl = link_jacobian(&moved, &layout, &state, 0);
    let g = layout.geometric_len();
    let mut rows = Vec::new();
    let mut is_angle = Vec::new();
    for l in 0..moved.paths.len() {
        rows.push(l * g);
        is_angle.push(false);
        if c.arrival_angles {
            rows.extend([l * g + 1, l * g + 2]);
            is_angle.extend([true, true]);
        }
        if c.doppler {
            rows.push(l * g + 5);
            is_angle.push(false);
        }
    }
    let h_pred = DVector::from_iterator(rows.len(), rows.iter().map(|&r| params[r]));
    let clock_col = state.clock_index().expect("clock column");
    let mut h = DMatrix::zeros(rows.len(), STATE_DIM);
    for (i, &r) in rows.iter().enumerate() {
        for k in 0..3 {
            h[(i, k)] = jl[(r, k)];
        }
        if let Some(v) = state.velocity_start() {
            for k in 0..3 {
                h[(i, 3 + k)] = jl[(r, v + k)];
            }
        }
        h[(i, 6)] = jl[(r, clock_col)];
    }
    Ok((h_pred, h, is_angle))
}

/// EKF update with the Joseph-form covariance.
pub fn update(t: &TrackState, meas: &Measurement, s: &Scenario) -> Result<(TrackState, UpdateReport), TrackingError> {
    let (z, r, pred, h, is_angle) = match meas {
        Measurement::Position { position, covariance } => {
            let mut h = DMatrix::zeros(3, STATE_DIM);
            for i in 0..3 {
                h[(i, i)] = 1.0;
            }
            (
                DVector::from_column_slice(position.as_slice()),
                DMatrix::from_column_slice(3, 3, covariance.as_slice()),
                DVector::from_column_slice(t.position().as_slice()),
                h,
                vec![false; 3],
            )
        }
        Measurement::Paths { values, covariance, components } => {
            let expected = s.paths.len() * components.per_path();
            if values.len() != expected {
                return Err(TrackingError::Measurement(format!("{} values for {expected} path components", values.len())));
            }
            let (pred, h, is_angle) = path_model(t, s, components)?;
            (values.clone(), covariance.clone(), pred, h, is_angle)
        }
    };
    if r.nrows() != z.len() || r.ncols() != z.len() {
        return Err(TrackingError::Measurement(format!("covariance is {}x{} for {} values", r.nrows(), r.ncols(), z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::Measurement("non-finite measurement".into()));
    }
    check_psd(&r, "measurement covariance")?;
    let innovation = DVector::from_fn(z.len(), |i, _| if is_angle[i] { wrap_pi(z[i] - pred[i]) } else { z[i] - pred[i] });
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, t.covariance.as_slice());
    let sm = symmetrize(&(&h * &p * h.transpose() + &r));
    let chol = sm
        .clone()
        .cholesky()
        .ok_or_else(|| TrackingError::InvalidCovariance("innovation covariance is not positive definite".into()))?;
    let s_inv = chol.inverse();
    let k = &p * h.transpose() * &s_inv;
    let nis = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
    let mean = t.mean + StateVec::from_column_slice((&k * &innovation).as_slice());
    let ikh = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM) - &k * &h;
    let joseph = symmetrize(&(&ikh * &p * ikh.transpose() + &k * &r * k.transpose()));
    Ok((
        TrackState {
            mean,
            covariance: StateCov::from_column_slice(joseph.as_slice()),
            timestamp: t.timestamp,
        },
        UpdateReport { innovation, nis },
    ))
}

/// One filtered epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub time: f64,
    pub state: TrackState,
    pub nis: f64,
}

/// Runs the filter over time-stamped measurements. The first measurement
/// must come strictly after the initial state's timestamp.
pub fn run_filter(
    initial: &TrackState,
    model: &MotionModel,
    measurements: &[(f64, Measurement)],
    s: &Scenario,
) -> Result<Vec<TrackRecord>, TrackingError> {
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(measurements.len());
    for (time, meas) in measurements {
        if *time <= state.timestamp {
            return Err(TrackingError::NonIncreasingTime {
                previous: state.timestamp,
                next: *time,
            });
        }
        let predicted = predict(&state, model, time - state.timestamp)?;
        let (updated, report) = update(&predicted, meas, s)?;
        state = TrackState { timestamp: *time, ..updated };
        out.push(TrackRecord {
            time: *time,
            state: state.clone(),
            nis: report.nis,
        });
    }
    Ok(out)
}

/// Normalized estimation error squared of a state estimate.
pub fn nees(t: &TrackState, truth: &StateVec) -> Result<f64, TrackingError> {
    let e = t.mean - truth;
    let inv = t
        .covariance
        .cholesky()
        .ok_or_else(|| TrackingError::InvalidCovariance("state covariance is not positive definite".into()))?
        .inverse();
    Ok((e.transpose() * inv * e)[(0, 0)])
}

fn gaussian<R: Rng + ?Sized, const N: usize>(cov: &SMatrix<f64, N, N>, rng: &mut R) -> SVector<f64, N> {
    let l = psd_sqrt(&DMatrix::from_column_slice(N, N, cov.as_slice()));
    let z = DVector::from_fn(N, |_, _| StandardNormal.sample(rng));
    SVector::from_column_slice((l * z).as_slice())
}

/// True states at `dt` spacing drawn from the motion model itself.
pub fn simulate_cv<R: Rng + ?Sized>(start: &StateVec, model: &MotionModel, dt: f64, steps: usize, rng: &mut R) -> Result<Vec<StateVec>, TrackingError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(TrackingError::NonPositiveStep(dt));
    }
    model.validate()?;
    let f = model.transition(dt);
    let q = model.noise(dt);
    let mut x = *start;
    Ok((0..steps)
        .map(|_| {
            x = f * x + gaussian(&q, rng);
            x
        })
        .collect())
}

/// Monte-Carlo comparison of filtered and raw position fixes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSetup {
    pub model: MotionModel,
    pub dt: f64,
    pub steps: usize,
    /// Standard deviation of each position-fix coordinate [m].
    pub fix_sigma_m: f64,
    pub initial_position_sigma_m: f64,
    pub initial_velocity_sigma: f64,
    pub initial_clock_sigma_m: f64,
}

impl TrackingSetup {
    pub fn standard() -> Self {
        Self {
            model: MotionModel {
                process_noise_psd: 0.05,
                clock_drift_variance: 0.01,
            },
            dt: 0.1,
            steps: 100,
            fix_sigma_m: 0.5,
            initial_position_sigma_m: 1.0,
            initial_velocity_sigma: 1.0,
            initial_clock_sigma_m: 1.0,
        }
    }

    fn initial_covariance(&self) -> StateCov {
        let mut p = StateCov::zeros();
        for i in 0..3 {
            p[(i, i)] = self.initial_position_sigma_m.powi(2);
            p[(i + 3, i + 3)] = self.initial_velocity_sigma.powi(2);
        }
        p[(6, 6)] = self.initial_clock_sigma_m.powi(2);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub truth: Vec<StateVec>,
    pub fixes: Vec<Vector3<f64>>,
    pub records: Vec<TrackRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingStudy {
    pub runs: usize,
    pub filter_rmse_m: f64,
    pub fix_rmse_m: f64,
    /// NEES averaged over runs and epochs.
    pub mean_nees: f64,
}

/// One trajectory with noisy fixes, filtered. The initial truth is drawn
/// from the filter prior so the filter is consistent by construction.
pub fn tracking_run<R: Rng + ?Sized>(setup: &TrackingSetup, s: &Scenario, rng: &mut R) -> Result<TrackingRun, TrackingError> {
    let p0 = setup.initial_covariance();
    let mut prior_mean = StateVec::zeros();
    prior_mean[3] = 1.5;
    prior_mean[4] = -0.5;
    prior_mean.fixed_rows_mut::<3>(0).copy_from(&s.rx.center);
    let start = prior_mean + gaussian(&p0, rng);
    let truth = simulate_cv(&start, &setup.model, setup.dt, setup.steps, rng)?;
    let r = Matrix3::identity() * setup.fix_sigma_m.powi(2);
    let fixes: Vec<Vector3<f64>> = truth
        .iter()
        .map(|x| x.fixed_rows::<3>(0).into_owned() + gaussian(&r, rng))
        .collect();
    let initial = TrackState::new(prior_mean, p0, 0.0)?;
    let measurements: Vec<(f64, Measurement)> = fixes
        .iter()
        .enumerate()
        .map(|(i, z)| {
            (
                (i + 1) as f64 * setup.dt,
                Measurement::Position {
                    position: *z,
                    covariance: r,
                },
            )
        })
        .collect();
    let records = run_filter(&initial, &setup.model, &measurements, s)?;
    Ok(TrackingRun { truth, fixes, records })
}

pub fn tracking_study<R: Rng + ?Sized>(setup: &TrackingSetup, s: &Scenario, runs: usize, rng: &mut R) -> Result<TrackingStudy, TrackingError> {
    let (mut filt, mut raw, mut nees_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
    for _ in 0..runs {
        let run = tracking_run(setup, s, rng)?;
        for ((x, z), rec) in run.truth.iter().zip(&run.fixes).zip(&run.records) {
            let p = x.fixed_rows::<3>(0).into_owned();
            filt += (rec.state.position() - p).norm_squared();
            raw += (z - p).norm_squared();
            nees_sum += nees(&rec.state, x)?;
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Ok(TrackingStudy {
        runs,
        filter_rmse_m: (filt / n).sqrt(),
        fix_rmse_m: (raw / n).sqrt(),
        mean_nees: nees_sum / n,
    })
}

/// Columns: `t`, true state, estimate, covariance diagonal, `nis`.
pub fn write_trajectory_csv<W: Write>(truth: &[StateVec], records: &[TrackRecord], w: W) -> Result<(), TrackingError> {
    let io = |e: csv::Error| TrackingError::Io(e.to_string());
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let names = ["x", "y", "z", "vx", "vy", "vz", "clock_m"];
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| format!("true_{n}")));
    header.extend(names.iter().map(|n| format!("est_{n}")));
    header.extend(names.iter().map(|n| format!("var_{n}")));
    header.push("nis".into());
    wr.write_record(&header).map_err(io)?;
    for (x, rec) in truth.iter().zip(records) {
        let mut row = vec![rec.time.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.extend(rec.state.mean.iter().map(|v| v.to_string()));
        row.extend((0..STATE_DIM).map(|i| rec.state.covariance[(i, i)].to_string()));
        row.push(rec.nis.to_string());
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush().map_err(|e| TrackingError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ArrayGeometry, PathGeometry, SpectralGrid};
    use nalgebra::Rotation3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario() -> Scenario {
        let grid = SpectralGrid::with_bandwidth(28e9, 400e6, 64, 1).unwrap();
        let lambda = grid.wavelength();
        let mut s = Scenario::los(
            ArrayGeometry::single(Vector3::zeros()),
            ArrayGeometry::upa(Vector3::new(10.0, 3.0, 1.0), Rotation3::from_axis_angle(&Vector3::z_axis(), 3.0), 4, 4, lambda / 2.0),
            grid,
        );
        s.paths.push(PathGeometry::single_bounce(Vector3::new(5.0, -4.0, 0.5)));
        s
    }

    fn state(p: Vector3<f64>, v: Vector3<f64>, sigma: f64) -> TrackState {
        let mut m = StateVec::zeros();
        m.fixed_rows_mut::<3>(0).copy_from(&p);
        m.fixed_rows_mut::<3>(3).copy_from(&v);
        TrackState::new(m, StateCov::identity() * sigma * sigma, 0.0).unwrap()
    }

    #[test]
    fn zero_noise_static_prediction_is_identity() {
        let mut t = state(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), 0.5);
        for i in 3..6 {
            t.covariance[(i, i)] = 0.0;
        }
        let m = MotionModel {
            process_noise_psd: 0.0,
            clock_drift_variance: 0.0,
        };
        let p = predict(&t, &m, 0.7).unwrap();
        assert_eq!(p.mean, t.mean);
        assert!((p.covariance - t.covariance).amax() < 1e-15);
    }

    #[test]
    fn position_advances_by_velocity() {
        let t = state(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.5, -1.0, 2.0), 0.5);
        let m = MotionModel {
            process_noise_psd: 0.3,
            clock_drift_variance: 0.1,
        };
        let p = predict(&t, &m, 0.25).unwrap();
        assert!((p.position() - Vector3::new(1.125, 1.75, 3.5)).norm() < 1e-15);
        assert!(p.covariance.trace() > t.covariance.trace());
        assert!(matches!(predict(&t, &m, 0.0), Err(TrackingError::NonPositiveStep(_))));
        assert!(matches!(predict(&t, &m, -1.0), Err(TrackingError::NonPositiveStep(_))));
    }

    #[test]
    fn process_noise_matches_integrated_white_acceleration() {
        let m = MotionModel {
            process_noise_psd: 2.0,
            clock_drift_variance: 0.0,
        };
        let dt = 0.4;
        let steps = 4000;
        let h = dt / steps as f64;
        let mut q = nalgebra::Matrix2::zeros();
        for i in 0..steps {
            let tau = (i as f64 + 0.5) * h;
            let g = nalgebra::Vector2::new(dt - tau, 1.0);
            q += g * g.transpose() * 2.0 * h;
        }
        let qd = m.noise(dt);
        assert!((qd[(0, 0)] - q[(0, 0)]).abs() < 1e-6);
        assert!((qd[(0, 3)] - q[(0, 1)]).abs() < 1e-6);
        assert!((qd[(3, 3)] - q[(1, 1)]).abs() < 1e-9);
    }

    #[test]
    fn tight_fix_snaps_mean() {
        let t = state(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), 2.0);
        let z = Vector3::new(1.5, 1.0, 2.0);
        let (u, report) = update(
            &t,
            &Measurement::Position {
                position: z,
                covariance: Matrix3::identity() * 1e-12,
            },
            &scenario(),
        )
        .unwrap();
        assert!((u.position() - z).norm() < 1e-9);
        assert!(report.nis > 0.0);
    }

    #[test]
    fn rejects_indefinite_measurement_covariance() {
        let t = state(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), 2.0);
        let bad = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let err = update(&t, &Measurement::Position { position: Vector3::zeros(), covariance: bad }, &scenario()).unwrap_err();
        assert!(matches!(err, TrackingError::InvalidCovariance(_)));
    }

    #[test]
    fn path_jacobian_matches_finite_differences() {
        let s = scenario();
        let mut t = state(s.rx.center, Vector3::new(1.0, 0.5, -0.2), 1.0);
        t.mean[6] = 0.3;
        let c = PathComponents {
            arrival_angles: true,
            doppler: true,
        };
        let (h0, h, _) = path_model(&t, &s, &c).unwrap();
        for k in 0..STATE_DIM {
            let step = 1e-6;
            let mut a = t.clone();
            a.mean[k] += step;
            let mut b = t.clone();
            b.mean[k] -= step;
            let (ha, _, _) = path_model(&a, &s, &c).unwrap();
            let (hb, _, _) = path_model(&b, &s, &c).unwrap();
            for r in 0..h0.len() {
                let fd = (ha[r] - hb[r]) / (2.0 * step);
                let scale = h.row(r).amax();
                assert!((fd - h[(r, k)]).abs() <= 1e-5 * scale, "row {r} col {k}: {fd} vs {}", h[(r, k)]);
            }
        }
    }

    #[test]
    fn static_user_covariance_contracts() {
        let s = scenario();
        let c = PathComponents {
            arrival_angles: true,
            doppler: false,
        };
        let truth = {
            let mut m = StateVec::zeros();
            m.fixed_rows_mut::<3>(0).copy_from(&s.rx.center);
            m[6] = 0.4;
            m
        };
        let exact = TrackState {
            mean: truth,
            covariance: StateCov::identity(),
            timestamp: 0.0,
        };
        let (values, _, _) = path_model(&exact, &s, &c).unwrap();
        let r: DMatrix<f64> = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-20, 1e-4, 1e-4, 1e-20, 1e-4, 1e-4]));
        let mut t = state(s.rx.center + Vector3::new(0.06, -0.04, 0.02), Vector3::zeros(), 0.1);
        t.mean[6] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut trace = t.position_covariance().trace();
        for _ in 0..20 {
            let noisy = DVector::from_fn(6, |i, _| { let e: f64 = StandardNormal.sample(&mut rng); values[i] + r[(i, i)].sqrt() * e });
            let meas = Measurement::Paths {
                values: noisy,
                covariance: r.clone(),
                components: c,
            };
            t = update(&t, &meas, &s).unwrap().0;
            let next = t.position_covariance().trace();
            assert!(next <= trace * (1.0 + 1e-12));
            assert!(min_eigenvalue(&DMatrix::from_column_slice(7, 7, t.covariance.as_slice())) >= -1e-12);
            trace = next;
        }
        assert!((t.position() - s.rx.center).norm() < 0.05, "{}", (t.position() - s.rx.center).norm());
    }

    #[test]
    fn timestamps_must_increase() {
        let s = scenario();
        let t = state(Vector3::zeros(), Vector3::zeros(), 1.0);
        let m = TrackingSetup::standard().model;
        let fix = Measurement::Position {
            position: Vector3::zeros(),
            covariance: Matrix3::identity(),
        };
        let err = run_filter(&t, &m, &[(0.5, fix.clone()), (0.5, fix)], &s).unwrap_err();
        assert!(matches!(err, TrackingError::NonIncreasingTime { .. }));
    }

    #[test]
    fn filter_beats_raw_fixes_and_is_consistent() {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let study = tracking_study(&TrackingSetup::standard(), &s, 20, &mut rng).unwrap();
        assert!(study.filter_rmse_m < study.fix_rmse_m);
        assert!((5.5..8.5).contains(&study.mean_nees), "{}", study.mean_nees);
    }

    #[test]
    fn trajectory_csv_has_documented_columns() {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let setup = TrackingSetup {
            steps: 3,
            ..TrackingSetup::standard()
        };
        let run = tracking_run(&setup, &s, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&run.truth, &run.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("t,true_x,true_y,true_z"));
        assert!(lines[0].ends_with("var_clock_m,nis"));
        assert_eq!(lines[1].split(',').count(), 23);
    }
}
