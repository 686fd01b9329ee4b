use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::EstimationError;
use crate::bounds::{link_jacobian, user_identifiability, ChannelParameters, ParamLayout, StateLayout, Verdict};
use crate::linalg::{pinv_psd, pinv_with_null, wahba, wrap_pi, RankAnalysis};
use crate::scenario::{geometric_path_params, ArrayGeometry, Direction, PathGeometry, PathKind, Scenario, SpectralGrid};
use crate::SPEED_OF_LIGHT;

const GEOMETRIC_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathType {
    Los,
    Nlos,
}

/// One path's measured delay and local angles. An infinite variance marks
/// a quantity that was not measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    #[serde(rename = "type")]
    pub kind: PathType,
    pub tau_s: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
    pub var_tau: f64,
    pub var_aoa_az: f64,
    pub var_aoa_el: f64,
    pub var_aod_az: f64,
    pub var_aod_el: f64,
}

impl PathMeasurement {
    pub fn values(&self) -> [f64; 5] {
        [self.tau_s, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el]
    }

    pub fn variances(&self) -> [f64; 5] {
        [self.var_tau, self.var_aoa_az, self.var_aoa_el, self.var_aod_az, self.var_aod_el]
    }

    fn set_values(&mut self, v: &[f64]) {
        self.tau_s = v[0];
        self.aoa_az = v[1];
        self.aoa_el = v[2];
        self.aod_az = v[3];
        self.aod_el = v[4];
    }
}

/// Noiseless measurements of every path of `s`. Quantities the arrays cannot
/// observe (angles at a single element, elevation without vertical extent,
/// delay with one subcarrier) get an infinite variance.
pub fn measurements_from_scenario(s: &Scenario, delay_sigma_s: f64, angle_sigma_rad: f64) -> Result<Vec<PathMeasurement>, EstimationError> {
    let vertical = |a: &ArrayGeometry| a.element_offsets.iter().any(|o| o.z.abs() > 1e-12);
    let horizontal = |a: &ArrayGeometry| a.element_offsets.iter().any(|o| o.y.abs() > 1e-12);
    let var = |on: bool, sigma: f64| if on { sigma * sigma } else { f64::INFINITY };
    (0..s.paths.len())
        .map(|l| {
            let p = geometric_path_params(s, l)?;
            Ok(PathMeasurement {
                kind: if s.paths[l].is_los() { PathType::Los } else { PathType::Nlos },
                tau_s: p.delay_s,
                aoa_az: p.aoa.azimuth,
                aoa_el: p.aoa.elevation,
                aod_az: p.aod.azimuth,
                aod_el: p.aod.elevation,
                var_tau: var(s.grid.n_subcarriers > 1, delay_sigma_s),
                var_aoa_az: var(horizontal(&s.rx), angle_sigma_rad),
                var_aoa_el: var(vertical(&s.rx), angle_sigma_rad),
                var_aod_az: var(horizontal(&s.tx), angle_sigma_rad),
                var_aod_el: var(vertical(&s.tx), angle_sigma_rad),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixOptions {
    pub max_iterations: usize,
    /// Stop when every gradient entry, scaled by the square root of its
    /// Hessian diagonal, is below this (relative to the residual norm when
    /// that exceeds one).
    pub gradient_tolerance: f64,
    /// Random starts when no line-of-sight path anchors the initial guess.
    pub starts: usize,
    pub seed: u64,
}

impl Default for FixOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            starts: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixResult {
    pub position: Vector3<f64>,
    pub orientation: Option<Rotation3<f64>>,
    pub bias_s: f64,
    pub incidence_points: Vec<Vector3<f64>>,
    /// Inverse Gauss-Newton Hessian, in state order (`state_names`).
    pub covariance: DMatrix<f64>,
    pub state_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted squared residual at the solution.
    pub cost: f64,
}

/// Weighted least squares of geometric channel parameters against the
/// state of one link.
pub(crate) struct Problem {
    pub template: Scenario,
    pub layout: ParamLayout,
    pub state: StateLayout,
    pub measured: DVector<f64>,
    pub info: DMatrix<f64>,
}

impl Problem {
    pub(crate) fn new(template: Scenario, layout: ParamLayout, measured: DVector<f64>, info: DMatrix<f64>) -> Result<Self, EstimationError> {
        let n = layout.blocks() * GEOMETRIC_LEN;
        if measured.len() != n || info.nrows() != n || info.ncols() != n {
            return Err(EstimationError::InvalidInput(format!("{n} geometric parameters need a {n}x{n} information matrix")));
        }
        if info.iter().any(|v| !v.is_finite()) || (&info - info.transpose()).amax() > 1e-9 * info.amax().max(1e-300) {
            return Err(EstimationError::InvalidInput("information matrix must be finite and symmetric".into()));
        }
        if crate::linalg::min_eigenvalue(&info) < -1e-9 * info.amax() {
            return Err(EstimationError::InvalidInput("information matrix must be positive semidefinite".into()));
        }
        let measured_row = |r: usize| info[(r, r)] > 0.0;
        let any = |offset: usize| (0..layout.blocks()).any(|b| measured_row(b * GEOMETRIC_LEN + offset));
        let state = StateLayout {
            orientation: any(1) || any(2),
            clock: any(0),
            velocity: false,
            ips: vec![template.paths.iter().filter(|p| !p.is_los()).count()],
        };
        Ok(Self {
            template,
            layout,
            state,
            measured,
            info,
        })
    }

    fn measured_rows(&self) -> Vec<bool> {
        (0..self.measured.len()).map(|r| self.info[(r, r)] > 0.0).collect()
    }

    pub(crate) fn residual(&self, s: &Scenario) -> Option<DVector<f64>> {
        let model = ChannelParameters::from_scenario(s).ok()?.geometric_vector(&self.layout);
        let rows = self.measured_rows();
        Some(DVector::from_fn(model.len(), |r, _| {
            if !rows[r] {
                0.0
            } else if r % GEOMETRIC_LEN == 0 {
                self.measured[r] - model[r]
            } else {
                wrap_pi(self.measured[r] - model[r])
            }
        }))
    }

    pub(crate) fn cost(&self, s: &Scenario) -> f64 {
        match self.residual(s) {
            Some(r) => (r.transpose() * &self.info * &r)[(0, 0)].max(0.0),
            None => f64::INFINITY,
        }
    }

    fn jacobian(&self, s: &Scenario) -> DMatrix<f64> {
        link_jacobian(s, &self.layout, &self.state, 0)
    }

    /// Information with each independent block scaled to unit trace.
    fn balanced(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let blocks = self.layout.blocks();
        let coupled = (0..blocks).any(|a| {
            (0..blocks).any(|b| a != b && self.info.view((a * GEOMETRIC_LEN, b * GEOMETRIC_LEN), (GEOMETRIC_LEN, GEOMETRIC_LEN)).amax() > 0.0)
        });
        let terms: Vec<DMatrix<f64>> = if coupled {
            vec![j.transpose() * &self.info * j]
        } else {
            (0..blocks)
                .map(|b| {
                    let jb = j.rows(b * GEOMETRIC_LEN, GEOMETRIC_LEN);
                    jb.transpose() * self.info.view((b * GEOMETRIC_LEN, b * GEOMETRIC_LEN), (GEOMETRIC_LEN, GEOMETRIC_LEN)) * jb
                })
                .collect()
        };
        let n = self.state.len();
        terms.into_iter().fold(DMatrix::zeros(n, n), |acc, t| {
            let tr = t.trace();
            if tr > 0.0 {
                acc + t / tr
            } else {
                acc
            }
        })
    }

    pub(crate) fn identifiability(&self, s: &Scenario) -> (Verdict, RankAnalysis) {
        let balanced = crate::linalg::symmetrize(&self.balanced(&self.jacobian(s)));
        let (ok, ra) = user_identifiability(&balanced, &self.state);
        let verdict = if balanced.diagonal().iter().all(|d| *d <= 0.0) {
            Verdict::NotApplicable
        } else if ok {
            Verdict::Identifiable
        } else {
            Verdict::NotIdentifiable
        };
        (verdict, ra)
    }

    pub(crate) fn require_identifiable(&self, s: &Scenario) -> Result<(), EstimationError> {
        match self.identifiability(s) {
            (Verdict::Identifiable, _) => Ok(()),
            (verdict, ra) => Err(EstimationError::NotIdentifiable {
                verdict,
                null_dim: ra.null_dim(),
            }),
        }
    }

    /// Levenberg-Marquardt from `start`.
    pub(crate) fn solve(&self, start: Scenario, opts: &FixOptions) -> (Scenario, bool, usize, f64) {
        let mut x = start;
        let mut cost = self.cost(&x);
        let mut mu = 1e-3;
        let mut converged = false;
        let mut iterations = 0;
        if !cost.is_finite() {
            return (x, false, 0, cost);
        }
        while iterations < opts.max_iterations {
            let r = match self.residual(&x) {
                Some(r) => r,
                None => break,
            };
            let j = self.jacobian(&x);
            let jw = j.transpose() * &self.info;
            let h = crate::linalg::symmetrize(&(&jw * &j));
            let g = &jw * r;
            let scale = cost.sqrt().max(1.0);
            let floor = h.diagonal().amax().max(1e-300) * 1e-12;
            let scaled = (0..g.len()).map(|i| g[i].abs() / h[(i, i)].max(floor).sqrt()).fold(0.0, f64::max);
            if scaled < opts.gradient_tolerance * scale {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = false;
            while mu < 1e12 {
                let mut a = h.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += mu * h[(i, i)].max(floor);
                }
                let step = match a.cholesky() {
                    Some(c) => c.solve(&g),
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                };
                let candidate = crate::bounds::apply_state_delta(std::slice::from_ref(&x), &self.state, &step).remove(0);
                let c = self.cost(&candidate);
                if c < cost {
                    x = candidate;
                    cost = c;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                mu *= 4.0;
            }
            if !accepted {
                converged = scaled < 1e-7 * scale;
                break;
            }
        }
        (x, converged, iterations, cost)
    }

    pub(crate) fn result(&self, x: &Scenario, converged: bool, iterations: usize, cost: f64) -> FixResult {
        let j = self.jacobian(x);
        let h = crate::linalg::symmetrize(&(j.transpose() * &self.info * &j));
        let (_, ra) = self.identifiability(x);
        let covariance = pinv_with_null(&h, &ra.null_basis).unwrap_or_else(|| pinv_psd(&h, 1e-12));
        FixResult {
            position: x.rx.center,
            orientation: self.state.orientation.then_some(x.rx.orientation),
            bias_s: x.clock.bias_s,
            incidence_points: x.paths.iter().filter_map(|p| p.incidence_point()).collect(),
            covariance: crate::linalg::symmetrize(&covariance),
            state_names: self.state.names(),
            converged,
            iterations,
            cost,
        }
    }
}

fn template_grid() -> SpectralGrid {
    SpectralGrid::with_bandwidth(28e9, 100e6, 2, 1).expect("valid template grid")
}

/// Geometric state consistent with a user at `p` with clock offset
/// `bias_m`: each incidence point on its departure ray at the range that
/// matches its delay, and the attitude that best aligns the arrival angles.
fn candidate_state(problem: &Problem, meas: &[PathMeasurement], bs: &ArrayGeometry, p: Vector3<f64>, bias_m: f64) -> Scenario {
    let mut s = problem.template.clone();
    s.rx.center = p;
    s.clock.bias_s = bias_m / SPEED_OF_LIGHT;
    let q = bs.center - p;
    for (path, m) in s.paths.iter_mut().zip(meas) {
        if let PathKind::SingleBounce { incidence_point } = &mut path.kind {
            let g = bs.orientation * Direction::new(m.aod_az, m.aod_el).unit_vector();
            let len = SPEED_OF_LIGHT * m.tau_s - bias_m;
            let t = (len * len - q.norm_squared()) / (2.0 * (q.dot(&g) + len));
            let t = if m.var_tau.is_finite() && m.var_aod_az.is_finite() && t.is_finite() && t > 0.1 {
                t
            } else {
                0.5 * q.norm().max(1.0)
            };
            *incidence_point = bs.center + t * g;
        }
    }
    if problem.state.orientation {
        let mut local = Vec::new();
        let mut global = Vec::new();
        for (path, m) in s.paths.iter().zip(meas) {
            if !m.var_aoa_az.is_finite() {
                continue;
            }
            let source = path.incidence_point().unwrap_or(bs.center);
            local.push(Direction::new(m.aoa_az, if m.var_aoa_el.is_finite() { m.aoa_el } else { 0.0 }).unit_vector());
            global.push((source - p).normalize());
        }
        if local.len() >= 2 {
            s.rx.orientation = wahba(&local, &global, &vec![1.0; local.len()]);
        } else if let Some(u) = local.first() {
            s.rx.orientation = Rotation3::rotation_between(u, &global[0]).unwrap_or_else(Rotation3::identity);
        }
    }
    s
}

/// Weighted least-squares position fix from per-path measurements, with
/// the measurement information given as a full matrix over the stacked
/// `[tau, aoa_az, aoa_el, aod_az, aod_el]` blocks.
pub fn multipath_fix_weighted(
    meas: &[PathMeasurement],
    info: &DMatrix<f64>,
    bs: &ArrayGeometry,
    opts: &FixOptions,
) -> Result<FixResult, EstimationError> {
    if meas.is_empty() {
        return Err(EstimationError::InvalidInput("no path measurements".into()));
    }
    if meas.iter().filter(|m| m.kind == PathType::Los).count() > 1 {
        return Err(EstimationError::InvalidInput("at most one line-of-sight path".into()));
    }
    bs.validate()?;
    let mut rx = ArrayGeometry::single(bs.center + Vector3::new(1.0, 0.0, 0.0));
    rx.orientation = Rotation3::identity();
    let mut template = Scenario::los(bs.clone(), rx, template_grid());
    template.paths = meas
        .iter()
        .map(|m| match m.kind {
            PathType::Los => PathGeometry::los(),
            PathType::Nlos => PathGeometry::single_bounce(bs.center + Vector3::new(0.0, 1.0, 0.0)),
        })
        .collect();
    let layout = ParamLayout {
        paths: meas.len(),
        has_ris: false,
        include_doppler: false,
    };
    let mut values = Vec::with_capacity(meas.len() * GEOMETRIC_LEN);
    for m in meas {
        values.extend(m.values().iter().map(|v| if v.is_finite() { *v } else { 0.0 }));
    }
    let problem = Problem::new(template, layout, DVector::from_vec(values), info.clone())?;

    let los = meas
        .iter()
        .position(|m| m.kind == PathType::Los)
        .filter(|&l| meas[l].var_tau.is_finite() && meas[l].var_aod_az.is_finite());
    let starts: Vec<Scenario> = match los {
        Some(l) => {
            let g0 = bs.orientation * Direction::new(meas[l].aod_az, meas[l].aod_el).unit_vector();
            let r0 = SPEED_OF_LIGHT * meas[l].tau_s;
            let hi = (2.0 * r0.abs()).max(1e3);
            let mut ranges: Vec<f64> = (0..600).map(|i| 0.1 * (hi / 0.1f64).powf(i as f64 / 599.0)).collect();
            ranges.push(r0);
            let best = ranges
                .par_iter()
                .filter(|t| **t > 0.0)
                .map(|&t| {
                    let s = candidate_state(&problem, meas, bs, bs.center + t * g0, r0 - t);
                    (problem.cost(&s), s)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, s)| s)
                .ok_or_else(|| EstimationError::InvalidInput("no admissible line-of-sight range".into()))?;
            vec![best]
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let tau_min = meas.iter().filter(|m| m.var_tau.is_finite()).map(|m| m.tau_s).fold(f64::INFINITY, f64::min);
            (0..opts.starts.max(1))
                .map(|_| {
                    let r = 10f64.powf(rng.random_range(0.0..2.3));
                    let d = Direction::new(rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI / 4.0..PI / 4.0));
                    let p = bs.center + r * (bs.orientation * d.unit_vector());
                    let bias = if tau_min.is_finite() {
                        SPEED_OF_LIGHT * tau_min - r - rng.random_range(0.0..20.0)
                    } else {
                        0.0
                    };
                    candidate_state(&problem, meas, bs, p, bias)
                })
                .collect()
        }
    };
    problem.require_identifiable(&starts[0])?;
    let solved: Vec<(Scenario, bool, usize, f64)> = starts.into_par_iter().map(|s| problem.solve(s, opts)).collect();
    let (x, converged, iterations, cost) = solved
        .into_iter()
        .min_by(|a, b| a.3.total_cmp(&b.3))
        .expect("at least one start");
    Ok(problem.result(&x, converged, iterations, cost))
}

/// [`multipath_fix_weighted`] with independent measurement errors given by
/// the per-quantity variances.
pub fn multipath_fix(meas: &[PathMeasurement], bs: &ArrayGeometry, opts: &FixOptions) -> Result<FixResult, EstimationError> {
    let mut diag = Vec::with_capacity(meas.len() * GEOMETRIC_LEN);
    for m in meas {
        for v in m.variances() {
            if v.is_nan() || v <= 0.0 {
                return Err(EstimationError::InvalidInput(format!("variance {v} must be positive or infinite")));
            }
            diag.push(if v.is_finite() { 1.0 / v } else { 0.0 });
        }
    }
    multipath_fix_weighted(meas, &DMatrix::from_diagonal(&DVector::from_vec(diag)), bs, opts)
}

/// Adds zero-mean Gaussian errors with the given per-block covariances.
pub fn perturb_measurements<R: Rng + ?Sized>(meas: &[PathMeasurement], covariances: &[DMatrix<f64>], rng: &mut R) -> Vec<PathMeasurement> {
    use rand_distr::{Distribution, StandardNormal};
    meas.iter()
        .zip(covariances)
        .map(|(m, c)| {
            let l = crate::linalg::psd_sqrt(c);
            let z = DVector::from_fn(GEOMETRIC_LEN, |_, _| StandardNormal.sample(rng));
            let e = l * z;
            let mut out = *m;
            let v: Vec<f64> = m.values().iter().zip(e.iter()).map(|(a, b)| a + b).collect();
            out.set_values(&v);
            out
        })
        .collect()
}
