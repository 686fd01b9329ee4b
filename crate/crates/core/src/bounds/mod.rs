//! Fisher information in the channel and state domains.
//!
//! Channel parameters come in blocks of `[tau, aoa az, aoa el, aod az, aod el,
//! (nu), Re alpha, Im alpha]`, one per uncontrolled path followed by one for
//! the RIS route, whose angle slots hold the arrival at the user and the
//! departure at the RIS (the Tx-side angles are known). Gains are nuisance
//! parameters and are profiled out before mapping to the state.
//!
//! The state is `[p (3), orientation increment (3, multi-antenna user),
//! clock bias as c*B (1, more than one subcarrier), velocity (3, with Doppler),
//! incidence points (3 each)]`. The user is the receiver.

mod mismatch;
mod table1;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

pub use mismatch::{mismatch_bias_probe, MismatchProbe, ProbeGrid};
pub use table1::{
    evaluate_config, random_links, table1_sweep, write_table1_csv, ArrayConfig, CellConfig, CellResult, Deployment, Expected, MeasurementKind,
    TABLE1_SEED,
};

use crate::channel::{steering_derivative, steering_vector, ChannelError, SignalDesign};
use crate::linalg::{pinv_psd, rank_analysis, rotate_local, schur_profile, wrap_pi, RANK_THRESHOLD};
use crate::scenario::{direction_jacobian, geometric_path_params, ris_path_params, Direction, PathKind, Scenario, ScenarioError};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("singular input: {0}")]
    SingularInput(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("links disagree: {0}")]
    InconsistentLinks(String),
    #[error("probe resolution: {0}")]
    Resolution(String),
    #[error("export: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathCoupling {
    /// Paths are resolvable: cross-path information is dropped.
    #[default]
    Resolvable,
    /// Keep every cross-path term of the observation model.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FimOptions {
    pub include_doppler: bool,
    pub coupling: PathCoupling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub paths: usize,
    pub has_ris: bool,
    pub include_doppler: bool,
}

impl ParamLayout {
    pub fn for_scenario(s: &Scenario, opts: &FimOptions) -> Self {
        Self {
            paths: s.paths.len(),
            has_ris: s.ris.is_some(),
            include_doppler: opts.include_doppler,
        }
    }

    pub fn blocks(&self) -> usize {
        self.paths + usize::from(self.has_ris)
    }

    /// Geometric parameters per block: delay, four angles, optional Doppler.
    pub fn geometric_len(&self) -> usize {
        5 + usize::from(self.include_doppler)
    }

    pub fn block_len(&self) -> usize {
        self.geometric_len() + 2
    }

    pub fn len(&self) -> usize {
        self.blocks() * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks() == 0
    }

    pub fn block_of(&self, index: usize) -> usize {
        index / self.block_len()
    }

    pub fn geometric_indices(&self) -> Vec<usize> {
        (0..self.blocks())
            .flat_map(|b| (0..self.geometric_len()).map(move |j| b * self.block_len() + j))
            .collect()
    }

    pub fn gain_indices(&self) -> Vec<usize> {
        (0..self.blocks())
            .flat_map(|b| [b * self.block_len() + self.geometric_len(), b * self.block_len() + self.geometric_len() + 1])
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for b in 0..self.blocks() {
            let tag = if b < self.paths { format!("path{b}") } else { "ris".to_string() };
            let mut names = vec!["delay", "aoa_az", "aoa_el", "aod_az", "aod_el"];
            if self.include_doppler {
                names.push("doppler");
            }
            names.extend(["gain_re", "gain_im"]);
            out.extend(names.into_iter().map(|n| format!("{tag}.{n}")));
        }
        out
    }
}

/// Parameters of one block. For the RIS block `departure` is the direction
/// of the user seen from the RIS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockParams {
    pub delay_s: f64,
    pub arrival: Direction,
    pub departure: Direction,
    pub doppler_hz: f64,
    pub gain: Complex64,
}

/// Known directions of the RIS route: the RIS seen from the Tx and the Tx
/// seen from the RIS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisContext {
    pub tx_direction: Direction,
    pub ris_arrival: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParameters {
    pub blocks: Vec<BlockParams>,
    pub ris: Option<RisContext>,
}

impl ChannelParameters {
    pub fn from_scenario(s: &Scenario) -> Result<Self, BoundsError> {
        let mut blocks = Vec::with_capacity(s.paths.len() + 1);
        for l in 0..s.paths.len() {
            let p = geometric_path_params(s, l)?;
            blocks.push(BlockParams {
                delay_s: p.delay_s,
                arrival: p.aoa,
                departure: p.aod,
                doppler_hz: p.doppler_hz,
                gain: p.gain,
            });
        }
        let ris = match &s.ris {
            Some(_) => {
                let rp = ris_path_params(s)?;
                blocks.push(BlockParams {
                    delay_s: rp.delay_s,
                    arrival: rp.aoa,
                    departure: rp.ris_departure,
                    doppler_hz: rp.doppler_hz,
                    gain: rp.gain_tx_ris * rp.gain_ris_rx,
                });
                Some(RisContext {
                    tx_direction: rp.aod,
                    ris_arrival: rp.ris_arrival,
                })
            }
            None => None,
        };
        Ok(Self { blocks, ris })
    }

    pub fn to_vector(&self, layout: &ParamLayout) -> DVector<f64> {
        let mut v = Vec::with_capacity(layout.len());
        for b in &self.blocks {
            v.extend([b.delay_s, b.arrival.azimuth, b.arrival.elevation, b.departure.azimuth, b.departure.elevation]);
            if layout.include_doppler {
                v.push(b.doppler_hz);
            }
            v.extend([b.gain.re, b.gain.im]);
        }
        DVector::from_vec(v)
    }

    pub fn with_vector(&self, layout: &ParamLayout, v: &DVector<f64>) -> Self {
        let mut out = self.clone();
        for (bi, b) in out.blocks.iter_mut().enumerate() {
            let o = bi * layout.block_len();
            b.delay_s = v[o];
            b.arrival = Direction::new(v[o + 1], v[o + 2]);
            b.departure = Direction::new(v[o + 3], v[o + 4]);
            let mut g = o + 5;
            if layout.include_doppler {
                b.doppler_hz = v[g];
                g += 1;
            }
            b.gain = Complex64::new(v[g], v[g + 1]);
        }
        out
    }

    /// Geometric part `[tau, angles, (nu)]` of every block.
    pub fn geometric_vector(&self, layout: &ParamLayout) -> DVector<f64> {
        let full = self.to_vector(layout);
        DVector::from_iterator(layout.blocks() * layout.geometric_len(), layout.geometric_indices().into_iter().map(|i| full[i]))
    }
}

fn check_far_field(s: &Scenario) -> Result<(), BoundsError> {
    if s.flags.near_field || s.flags.non_stationary {
        return Err(BoundsError::UnsupportedModel(
            "analytic information is implemented for the far-field, stationary model".into(),
        ));
    }
    Ok(())
}

/// Noiseless observation `sqrt(p_n) W^H H_{n,k}(eta) f_{n,k}` and, optionally,
/// its analytic derivative with respect to the channel parameters. Rows are
/// ordered by subcarrier, symbol, then combiner output.
pub fn mean_and_jacobian(
    s: &Scenario,
    signal: &SignalDesign,
    params: &ChannelParameters,
    layout: &ParamLayout,
    with_jacobian: bool,
) -> Result<(DVector<Complex64>, Option<DMatrix<Complex64>>), BoundsError> {
    check_far_field(s)?;
    let grid = &s.grid;
    signal.validate(grid, s.rx.num_elements(), s.tx.num_elements())?;
    if params.blocks.len() != layout.blocks() {
        return Err(BoundsError::SingularInput("parameter blocks do not match the layout".into()));
    }
    let outputs = signal.combiner.ncols();
    let kk = grid.n_symbols;
    let rows_per_i = kk * outputs;
    let cols = if with_jacobian { layout.len() } else { 0 };
    let wh = signal.combiner.adjoint();
    let j = Complex64::i();
    let pieces: Vec<(Vec<Complex64>, DMatrix<Complex64>)> = (0..grid.n_subcarriers)
        .into_par_iter()
        .map(|i| {
            let lambda = s.array_wavelength(i);
            let fi = grid.baseband_frequency(i);
            let amp = Complex64::new(signal.powers[i].sqrt(), 0.0);
            let mut mu = vec![Complex64::new(0.0, 0.0); rows_per_i];
            let mut jac = DMatrix::zeros(rows_per_i, cols);
            for (b, bp) in params.blocks.iter().enumerate() {
                let is_ris = b >= layout.paths;
                let a_r = steering_vector(&s.rx, &bp.arrival, lambda);
                let whr = &wh * &a_r;
                let whr_az = &wh * steering_derivative(&s.rx, &a_r, &bp.arrival.d_unit_d_azimuth(), lambda);
                let whr_el = &wh * steering_derivative(&s.rx, &a_r, &bp.arrival.d_unit_d_elevation(), lambda);
                // Tx response, and the RIS reflection factor with its departure derivatives.
                let (a_t, da_t_az, da_t_el, ris_parts) = if is_ris {
                    let ctx = params.ris.as_ref().expect("RIS block without context");
                    let panel = s.ris.as_ref().expect("RIS block without panel");
                    let a_t = steering_vector(&s.tx, &ctx.tx_direction, lambda);
                    let a_dep = steering_vector(&panel.geometry, &bp.departure, lambda);
                    let d_az = steering_derivative(&panel.geometry, &a_dep, &bp.departure.d_unit_d_azimuth(), lambda);
                    let d_el = steering_derivative(&panel.geometry, &a_dep, &bp.departure.d_unit_d_elevation(), lambda);
                    let a_arr = steering_vector(&panel.geometry, &ctx.ris_arrival, lambda);
                    let factors: Vec<(Complex64, Complex64, Complex64)> = (0..kk)
                        .map(|k| {
                            let w = &panel.profiles[k];
                            let sum = |d: &DVector<Complex64>| d.iter().zip(w).zip(a_arr.iter()).map(|((x, y), z)| x * y * z).sum::<Complex64>();
                            (sum(&a_dep), sum(&d_az), sum(&d_el))
                        })
                        .collect();
                    let zero = DVector::zeros(s.tx.num_elements());
                    (a_t, zero.clone(), zero, Some(factors))
                } else {
                    let a_t = steering_vector(&s.tx, &bp.departure, lambda);
                    let d_az = steering_derivative(&s.tx, &a_t, &bp.departure.d_unit_d_azimuth(), lambda);
                    let d_el = steering_derivative(&s.tx, &a_t, &bp.departure.d_unit_d_elevation(), lambda);
                    (a_t, d_az, d_el, None)
                };
                let o = b * layout.block_len();
                for k in 0..kk {
                    let f = signal.precoder(grid, i, k);
                    let t = a_t.dot(f);
                    let phase = Complex64::from_polar(1.0, -2.0 * PI * fi * bp.delay_s + 2.0 * PI * k as f64 * grid.symbol_duration_s * bp.doppler_hz);
                    // Scalar multiplying W^H a_r, and the gain-free part of it.
                    let (unit, coeff, dep_az, dep_el) = match &ris_parts {
                        Some(factors) => {
                            let (bk, dbaz, dbel) = factors[k];
                            let unit = amp * phase * t * bk;
                            (unit, unit * bp.gain, amp * phase * t * dbaz * bp.gain, amp * phase * t * dbel * bp.gain)
                        }
                        None => {
                            let unit = amp * phase * t;
                            let base = amp * phase * bp.gain;
                            (unit, unit * bp.gain, base * da_t_az.dot(f), base * da_t_el.dot(f))
                        }
                    };
                    for out in 0..outputs {
                        let r = k * outputs + out;
                        let m = coeff * whr[out];
                        mu[r] += m;
                        if with_jacobian {
                            jac[(r, o)] = m * (-2.0 * PI * fi) * j;
                            jac[(r, o + 1)] = coeff * whr_az[out];
                            jac[(r, o + 2)] = coeff * whr_el[out];
                            jac[(r, o + 3)] = dep_az * whr[out];
                            jac[(r, o + 4)] = dep_el * whr[out];
                            let mut g = o + 5;
                            if layout.include_doppler {
                                jac[(r, g)] = m * (2.0 * PI * k as f64 * grid.symbol_duration_s) * j;
                                g += 1;
                            }
                            jac[(r, g)] = unit * whr[out];
                            jac[(r, g + 1)] = unit * whr[out] * j;
                        }
                    }
                }
            }
            (mu, jac)
        })
        .collect();
    let rows = grid.n_subcarriers * rows_per_i;
    let mut mu = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, cols);
    for (i, (m, jm)) in pieces.into_iter().enumerate() {
        for (r, v) in m.into_iter().enumerate() {
            mu[i * rows_per_i + r] = v;
        }
        if with_jacobian {
            jac.rows_mut(i * rows_per_i, rows_per_i).copy_from(&jm);
        }
    }
    Ok((mu, with_jacobian.then_some(jac)))
}

/// Central finite-difference derivative of the noiseless observation.
pub fn finite_difference_jacobian(
    s: &Scenario,
    signal: &SignalDesign,
    params: &ChannelParameters,
    layout: &ParamLayout,
) -> Result<DMatrix<Complex64>, BoundsError> {
    let base = params.to_vector(layout);
    let mut cols = Vec::with_capacity(layout.len());
    for c in 0..layout.len() {
        let h = finite_step(c, layout, &base, &s.grid);
        let eval = |sign: f64| -> Result<DVector<Complex64>, BoundsError> {
            let mut v = base.clone();
            v[c] += sign * h;
            Ok(mean_and_jacobian(s, signal, &params.with_vector(layout, &v), layout, false)?.0)
        };
        cols.push((eval(1.0)? - eval(-1.0)?) / Complex64::new(2.0 * h, 0.0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Steps giving phase changes of about 1e-4 rad.
fn finite_step(c: usize, layout: &ParamLayout, base: &DVector<f64>, grid: &crate::scenario::SpectralGrid) -> f64 {
    let j = c % layout.block_len();
    match j {
        0 => 1e-4 / (2.0 * PI * grid.bandwidth() / 2.0),
        1..=4 => 1e-6,
        _ if layout.include_doppler && j == 5 => 1e-4 / (2.0 * PI * grid.n_symbols.max(2) as f64 * grid.symbol_duration_s),
        _ => 1e-6 * base[c].abs().max(1e-12),
    }
}

/// Channel-domain information.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFim {
    pub layout: ParamLayout,
    pub params: ChannelParameters,
    /// Information over every channel parameter, gains included.
    pub full: DMatrix<f64>,
    /// Information over the geometric parameters with the gains profiled out.
    pub geometric: DMatrix<f64>,
    pub noise_variance: f64,
}

/// `(2 / sigma^2) sum Re{(d mu / d eta)^H (d mu / d eta)}` over all samples.
pub fn channel_fim(s: &Scenario, signal: &SignalDesign, noise_psd: f64, opts: &FimOptions) -> Result<ChannelFim, BoundsError> {
    s.validate()?;
    if !(noise_psd.is_finite() && noise_psd > 0.0) {
        return Err(BoundsError::SingularInput(format!("noise PSD {noise_psd} gives no finite SNR")));
    }
    if signal.total_power() <= 0.0 {
        return Err(BoundsError::SingularInput("zero signal power".into()));
    }
    let layout = ParamLayout::for_scenario(s, opts);
    let params = ChannelParameters::from_scenario(s)?;
    let (_, jac) = mean_and_jacobian(s, signal, &params, &layout, true)?;
    let jac = jac.expect("requested");
    let variance = noise_psd * s.grid.subcarrier_spacing_hz;
    let mut full = (jac.adjoint() * &jac).map(|c| c.re * 2.0 / variance);
    full = crate::linalg::symmetrize(&full);
    if opts.coupling == PathCoupling::Resolvable {
        for r in 0..layout.len() {
            for c in 0..layout.len() {
                if layout.block_of(r) != layout.block_of(c) {
                    full[(r, c)] = 0.0;
                }
            }
        }
    }
    let geometric = schur_profile(&full, &layout.geometric_indices(), &layout.gain_indices());
    Ok(ChannelFim {
        layout,
        params,
        full,
        geometric,
        noise_variance: variance,
    })
}

/// Index map of the state vector for a set of links sharing one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    pub orientation: bool,
    pub clock: bool,
    pub velocity: bool,
    /// Number of incidence points per link.
    pub ips: Vec<usize>,
}

impl StateLayout {
    pub fn for_links(links: &[&Scenario], opts: &FimOptions) -> Self {
        Self {
            orientation: links.first().is_some_and(|s| s.rx.num_elements() > 1),
            clock: links.iter().any(|s| s.grid.n_subcarriers > 1),
            velocity: opts.include_doppler,
            ips: links.iter().map(|s| s.paths.iter().filter(|p| !p.is_los()).count()).collect(),
        }
    }

    pub fn orientation_start(&self) -> Option<usize> {
        self.orientation.then_some(3)
    }

    pub fn clock_index(&self) -> Option<usize> {
        self.clock.then_some(3 + 3 * usize::from(self.orientation))
    }

    pub fn velocity_start(&self) -> Option<usize> {
        self.velocity
            .then_some(3 + 3 * usize::from(self.orientation) + usize::from(self.clock))
    }

    fn ip_base(&self) -> usize {
        3 + 3 * usize::from(self.orientation) + usize::from(self.clock) + 3 * usize::from(self.velocity)
    }

    /// First index of incidence point `j` of link `link`.
    pub fn ip_start(&self, link: usize, j: usize) -> usize {
        self.ip_base() + 3 * (self.ips[..link].iter().sum::<usize>() + j)
    }

    pub fn len(&self) -> usize {
        self.ip_base() + 3 * self.ips.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position and orientation indices.
    pub fn user_indices(&self) -> Vec<usize> {
        (0..3 + 3 * usize::from(self.orientation)).collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        if self.orientation {
            out.extend(["rot_x", "rot_y", "rot_z"].iter().map(|s| s.to_string()));
        }
        if self.clock {
            out.push("clock_bias_m".into());
        }
        if self.velocity {
            out.extend(["vx", "vy", "vz"].iter().map(|s| s.to_string()));
        }
        for (link, n) in self.ips.iter().enumerate() {
            for j in 0..*n {
                out.extend(["x", "y", "z"].iter().map(|c| format!("ip{link}.{j}.{c}")));
            }
        }
        out
    }
}

/// Current value of the state. The orientation entries are increments about
/// the current attitude and are therefore zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub ue_position: Vector3<f64>,
    pub ue_orientation: Option<nalgebra::Rotation3<f64>>,
    pub clock_bias_m: Option<f64>,
    pub ue_velocity: Option<Vector3<f64>>,
    pub ip_positions: Vec<Vec<Vector3<f64>>>,
}

impl StateVector {
    pub fn from_links(links: &[&Scenario], layout: &StateLayout) -> Self {
        let s = links[0];
        Self {
            ue_position: s.rx.center,
            ue_orientation: layout.orientation.then_some(s.rx.orientation),
            clock_bias_m: layout.clock.then_some(s.clock.bias_s * SPEED_OF_LIGHT),
            ue_velocity: layout.velocity.then_some(s.rx_velocity),
            ip_positions: links.iter().map(|l| l.paths.iter().filter_map(|p| p.incidence_point()).collect()).collect(),
        }
    }
}

/// Applies a state increment to every link.
pub fn apply_state_delta(links: &[Scenario], layout: &StateLayout, delta: &DVector<f64>) -> Vec<Scenario> {
    links
        .iter()
        .enumerate()
        .map(|(link, s)| {
            let mut t = s.clone();
            t.rx.center += Vector3::new(delta[0], delta[1], delta[2]);
            if let Some(o) = layout.orientation_start() {
                t.rx.orientation = rotate_local(&s.rx.orientation, &Vector3::new(delta[o], delta[o + 1], delta[o + 2]));
            }
            if let Some(c) = layout.clock_index() {
                t.clock.bias_s += delta[c] / SPEED_OF_LIGHT;
            }
            if let Some(v) = layout.velocity_start() {
                t.rx_velocity += Vector3::new(delta[v], delta[v + 1], delta[v + 2]);
            }
            let mut j = 0;
            for p in &mut t.paths {
                if let PathKind::SingleBounce { incidence_point } = &mut p.kind {
                    let q = layout.ip_start(link, j);
                    *incidence_point += Vector3::new(delta[q], delta[q + 1], delta[q + 2]);
                    j += 1;
                }
            }
            t
        })
        .collect()
}

fn put_row3(m: &mut DMatrix<f64>, row: usize, col: usize, v: &Vector3<f64>) {
    for c in 0..3 {
        m[(row, col + c)] += v[c];
    }
}

fn put_angles(m: &mut DMatrix<f64>, row: usize, col: usize, d: &nalgebra::Matrix2x3<f64>) {
    for r in 0..2 {
        for c in 0..3 {
            m[(row + r, col + c)] += d[(r, c)];
        }
    }
}

/// Analytic derivative of the geometric channel parameters of one link with
/// respect to the joint state.
pub fn link_jacobian(s: &Scenario, layout: &ParamLayout, state: &StateLayout, link: usize) -> DMatrix<f64> {
    let g = layout.geometric_len();
    let mut jm = DMatrix::zeros(layout.blocks() * g, state.len());
    let p = s.rx.center;
    let rot = s.rx.orientation;
    let x_tx = s.tx.center;
    let kd = s.grid.carrier_hz / SPEED_OF_LIGHT;
    let doppler_rows = |jm: &mut DMatrix<f64>, row: usize, source: &Vector3<f64>, ip_col: Option<usize>| {
        let d = source - p;
        let dist = d.norm();
        let u = d / dist;
        let proj = (Matrix3::identity() - u * u.transpose()) * s.rx_velocity * (kd / dist);
        put_row3(jm, row, 0, &(-proj));
        if let Some(c) = ip_col {
            put_row3(jm, row, c, &proj);
        }
        if let Some(v) = state.velocity_start() {
            put_row3(jm, row, v, &(u * kd));
        }
    };
    let mut ip_j = 0;
    for (l, path) in s.paths.iter().enumerate() {
        let row = l * g;
        let (source, ip_col) = match path.kind {
            PathKind::LineOfSight => (x_tx, None),
            PathKind::SingleBounce { incidence_point } => {
                let c = state.ip_start(link, ip_j);
                ip_j += 1;
                (incidence_point, Some(c))
            }
        };
        put_row3(&mut jm, row, 0, &((p - source).normalize() / SPEED_OF_LIGHT));
        if let Some(c) = ip_col {
            let grad = (source - x_tx).normalize() + (source - p).normalize();
            put_row3(&mut jm, row, c, &(grad / SPEED_OF_LIGHT));
        }
        let aoa = direction_jacobian(&p, &rot, &source);
        put_angles(&mut jm, row + 1, 0, &aoa.d_origin);
        if let Some(c) = ip_col {
            put_angles(&mut jm, row + 1, c, &aoa.d_target);
        }
        if let Some(o) = state.orientation_start() {
            put_angles(&mut jm, row + 1, o, &aoa.d_orientation);
        }
        let aod = direction_jacobian(&x_tx, &s.tx.orientation, &match ip_col {
            Some(_) => source,
            None => p,
        });
        match ip_col {
            Some(c) => put_angles(&mut jm, row + 3, c, &aod.d_target),
            None => put_angles(&mut jm, row + 3, 0, &aod.d_target),
        }
        if layout.include_doppler {
            doppler_rows(&mut jm, row + 5, &source, ip_col);
        }
        if let Some(c) = state.clock_index() {
            jm[(row, c)] = 1.0 / SPEED_OF_LIGHT;
        }
    }
    if let Some(ris) = &s.ris {
        let row = s.paths.len() * g;
        let x_ris = ris.geometry.center;
        put_row3(&mut jm, row, 0, &((p - x_ris).normalize() / SPEED_OF_LIGHT));
        let aoa = direction_jacobian(&p, &rot, &x_ris);
        put_angles(&mut jm, row + 1, 0, &aoa.d_origin);
        if let Some(o) = state.orientation_start() {
            put_angles(&mut jm, row + 1, o, &aoa.d_orientation);
        }
        let dep = direction_jacobian(&x_ris, &ris.geometry.orientation, &p);
        put_angles(&mut jm, row + 3, 0, &dep.d_target);
        if layout.include_doppler {
            doppler_rows(&mut jm, row + 5, &x_ris, None);
        }
        if let Some(c) = state.clock_index() {
            jm[(row, c)] = 1.0 / SPEED_OF_LIGHT;
        }
    }
    jm
}

/// Finite-difference counterpart of [`link_jacobian`].
pub fn link_jacobian_fd(s: &Scenario, layout: &ParamLayout, state: &StateLayout, link: usize, links: &[Scenario]) -> Result<DMatrix<f64>, BoundsError> {
    let base = ChannelParameters::from_scenario(s)?.geometric_vector(layout);
    let n = state.len();
    let mut cols = Vec::with_capacity(n);
    for c in 0..n {
        let h = 1e-6;
        let eval = |sign: f64| -> Result<DVector<f64>, BoundsError> {
            let mut d = DVector::zeros(n);
            d[c] = sign * h;
            let moved = apply_state_delta(links, state, &d);
            Ok(ChannelParameters::from_scenario(&moved[link])?.geometric_vector(layout))
        };
        let (plus, minus) = (eval(1.0)?, eval(-1.0)?);
        let mut col = DVector::zeros(base.len());
        for r in 0..base.len() {
            let is_angle = (1..=4).contains(&(r % layout.geometric_len()));
            let diff = if is_angle { wrap_pi(plus[r] - minus[r]) } else { plus[r] - minus[r] };
            col[r] = diff / (2.0 * h);
        }
        cols.push(col);
    }
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identifiable,
    NotIdentifiable,
    NotApplicable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Identifiable => "identifiable",
            Verdict::NotIdentifiable => "not identifiable",
            Verdict::NotApplicable => "not applicable",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FimReport {
    /// Block-diagonal geometric channel information of all links.
    pub fim_channel: DMatrix<f64>,
    /// Stacked derivative of the geometric parameters with respect to the state.
    pub jacobian: DMatrix<f64>,
    pub fim_state: DMatrix<f64>,
    pub state: StateLayout,
    pub peb: f64,
    pub oeb: Option<f64>,
    pub identifiable: bool,
    /// The state information is identically zero: nothing is measured.
    pub applicable: bool,
    pub null_space_dim: usize,
    pub normalized_eigenvalues: Vec<f64>,
}

impl FimReport {
    pub fn verdict(&self) -> Verdict {
        if !self.applicable {
            Verdict::NotApplicable
        } else if self.identifiable {
            Verdict::Identifiable
        } else {
            Verdict::NotIdentifiable
        }
    }
}

/// Largest user-coordinate component of a unit null vector that still counts as zero.
const USER_NULL_TOLERANCE: f64 = 1e-4;

/// State-domain report for one link.
pub fn state_fim(s: &Scenario, fim: &ChannelFim) -> Result<FimReport, BoundsError> {
    joint_state_fim(&[(s.clone(), fim.clone())])
}

/// State-domain report for several links observed by one user (one receiver
/// position, attitude and clock). Incidence points belong to their link.
pub fn joint_state_fim(links: &[(Scenario, ChannelFim)]) -> Result<FimReport, BoundsError> {
    let first = &links.first().ok_or_else(|| BoundsError::SingularInput("no links".into()))?.0;
    for (s, _) in links {
        let attitude = (s.rx.orientation.matrix() - first.rx.orientation.matrix()).norm();
        if (s.rx.center - first.rx.center).norm() > 1e-9 || attitude > 1e-9 {
            return Err(BoundsError::InconsistentLinks("links must share the user pose".into()));
        }
        if s.rx.num_elements() != first.rx.num_elements() {
            return Err(BoundsError::InconsistentLinks("links must share the user array".into()));
        }
    }
    let doppler = links.iter().any(|(_, f)| f.layout.include_doppler);
    let opts = FimOptions {
        include_doppler: doppler,
        coupling: PathCoupling::Resolvable,
    };
    let scenarios: Vec<&Scenario> = links.iter().map(|(s, _)| s).collect();
    let state = StateLayout::for_links(&scenarios, &opts);
    let n = state.len();
    let mut fim_state = DMatrix::zeros(n, n);
    let mut balanced = DMatrix::zeros(n, n);
    let mut jac_blocks = Vec::new();
    let mut chan_blocks = Vec::new();
    for (link, (s, fim)) in links.iter().enumerate() {
        let jl = link_jacobian(s, &fim.layout, &state, link);
        fim_state += jl.transpose() * &fim.geometric * &jl;
        for term in contributions(&jl, &fim.geometric, fim.layout.geometric_len()) {
            let tr = term.trace();
            if tr > 0.0 {
                balanced += term / tr;
            }
        }
        jac_blocks.push(jl);
        chan_blocks.push(fim.geometric.clone());
    }
    let fim_state = crate::linalg::symmetrize(&fim_state);
    let rows: usize = jac_blocks.iter().map(|j| j.nrows()).sum();
    let mut jacobian = DMatrix::zeros(rows, n);
    let mut fim_channel = DMatrix::zeros(rows, rows);
    let mut r0 = 0;
    for (jl, gl) in jac_blocks.iter().zip(&chan_blocks) {
        jacobian.rows_mut(r0, jl.nrows()).copy_from(jl);
        fim_channel.view_mut((r0, r0), (gl.nrows(), gl.ncols())).copy_from(gl);
        r0 += jl.nrows();
    }
    Ok(analyze(fim_channel, jacobian, fim_state, &crate::linalg::symmetrize(&balanced), state))
}

/// Splits a link's state information into independent per-path terms when
/// the paths are decoupled, or returns the whole link otherwise.
fn contributions(jl: &DMatrix<f64>, geometric: &DMatrix<f64>, len: usize) -> Vec<DMatrix<f64>> {
    let blocks = geometric.nrows() / len;
    let coupled = (0..blocks).any(|a| {
        (0..blocks).any(|b| a != b && geometric.view((a * len, b * len), (len, len)).iter().any(|v| *v != 0.0))
    });
    if coupled || blocks <= 1 {
        return vec![jl.transpose() * geometric * jl];
    }
    (0..blocks)
        .map(|b| {
            let j = jl.rows(b * len, len);
            j.transpose() * geometric.view((b * len, b * len), (len, len)) * j
        })
        .collect()
}

/// Whether the null space of `fim` leaves the user position and orientation
/// untouched, together with the rank analysis it was decided on.
pub fn user_identifiability(fim: &DMatrix<f64>, state: &StateLayout) -> (bool, crate::linalg::RankAnalysis) {
    let ra = rank_analysis(fim, RANK_THRESHOLD);
    let user = state.user_indices();
    let leak = if ra.null_dim() == 0 {
        0.0
    } else {
        ra.null_basis.select_rows(&user).singular_values().iter().cloned().fold(0.0, f64::max)
    };
    (leak < USER_NULL_TOLERANCE, ra)
}

/// `balanced` has the same range as `fim_state` but with every independent
/// contribution scaled to unit trace, so weak links are not lost to rounding
/// in the rank test.
fn analyze(fim_channel: DMatrix<f64>, jacobian: DMatrix<f64>, fim_state: DMatrix<f64>, balanced: &DMatrix<f64>, state: StateLayout) -> FimReport {
    let applicable = fim_state.diagonal().iter().any(|d| *d > 0.0);
    let (user_ok, ra) = user_identifiability(balanced, &state);
    let identifiable = applicable && user_ok;
    let (peb, oeb) = if identifiable {
        let cov = crate::linalg::pinv_with_null(&fim_state, &ra.null_basis).unwrap_or_else(|| pinv_psd(&fim_state, RANK_THRESHOLD));
        let peb = (0..3).map(|i| cov[(i, i)]).sum::<f64>().max(0.0).sqrt();
        let oeb = state
            .orientation_start()
            .map(|o| (o..o + 3).map(|i| cov[(i, i)]).sum::<f64>().max(0.0).sqrt());
        (peb, oeb)
    } else {
        (f64::INFINITY, state.orientation.then_some(f64::INFINITY))
    };
    FimReport {
        fim_channel,
        jacobian,
        fim_state,
        state,
        peb,
        oeb,
        identifiable,
        applicable,
        null_space_dim: ra.null_dim(),
        normalized_eigenvalues: ra.normalized_eigenvalues,
    }
}

/// Channel information followed by the state report, for one link.
pub fn scenario_report(s: &Scenario, signal: &SignalDesign, noise_psd: f64, opts: &FimOptions) -> Result<FimReport, BoundsError> {
    let fim = channel_fim(s, signal, noise_psd, opts)?;
    state_fim(s, &fim)
}
