//! OFDM power allocation for ranging.
//!
//! A range profile is the correlation `|sum_n p_n exp(j 2 pi n df lag)|^2`
//! of the pilots against a delay hypothesis. Spreading power toward the band
//! edges narrows its main lobe and lowers the delay bound, but raises
//! sidelobes that can be mistaken for the true peak. [`optimize_allocation`]
//! trades the two off inside a prior delay region.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::linalg::golden_max;
use crate::scenario::{ScenarioError, SpectralGrid};
use crate::{to_db, SPEED_OF_LIGHT};

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("invalid prior region: {0}")]
    InvalidPrior(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no allocation keeps sidelobes {margin_db} dB down; the uniform allocation already has one at {level_db:.2} dB, {lag_m:.3} m from the peak")]
    Infeasible { margin_db: f64, level_db: f64, lag_m: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("export: {0}")]
    Export(String),
}

/// Profile samples per resolution cell `c / W` in the sidelobe scan.
pub const SCAN_OVERSAMPLE: usize = 32;

/// Per-subcarrier transmit powers [W] under a total budget [W].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub powers: Vec<f64>,
    pub budget: f64,
}

impl PowerAllocation {
    pub fn new(powers: Vec<f64>, budget: f64) -> Result<Self, DesignError> {
        let p = Self { powers, budget };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(DesignError::InvalidAllocation(format!("budget {} must be positive", self.budget)));
        }
        if self.powers.is_empty() {
            return Err(DesignError::InvalidAllocation("no subcarriers".into()));
        }
        if let Some((i, p)) = self.powers.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(DesignError::InvalidAllocation(format!("power {p} on subcarrier {i}")));
        }
        let total = self.total();
        if total > self.budget * (1.0 + 1e-9) {
            return Err(DesignError::InvalidAllocation(format!("total {total} exceeds budget {}", self.budget)));
        }
        Ok(())
    }

    pub fn uniform(n: usize, budget: f64) -> Self {
        Self {
            powers: vec![budget / n as f64; n],
            budget,
        }
    }

    /// Whole budget on position `i`.
    pub fn single_tone(n: usize, i: usize, budget: f64) -> Self {
        let mut powers = vec![0.0; n];
        powers[i] = budget;
        Self { powers, budget }
    }

    /// Half the budget on each of the two outermost subcarriers.
    pub fn edge_pair(n: usize, budget: f64) -> Result<Self, DesignError> {
        Self::edge_weighted(n, budget, 1, 1.0)
    }

    /// `1 - a` of the budget spread evenly over the band and `a` spread over
    /// `m` subcarriers at each edge.
    pub fn edge_weighted(n: usize, budget: f64, m: usize, a: f64) -> Result<Self, DesignError> {
        if m == 0 || 2 * m > n {
            return Err(DesignError::InvalidAllocation(format!("edge width {m} on {n} subcarriers")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(DesignError::InvalidAllocation(format!("edge fraction {a}")));
        }
        let mut powers = vec![(1.0 - a) * budget / n as f64; n];
        for i in (0..m).chain(n - m..n) {
            powers[i] += a * budget / (2 * m) as f64;
        }
        // Renormalize away rounding so the budget is met exactly.
        let total: f64 = powers.iter().sum();
        powers.iter_mut().for_each(|p| *p *= budget / total);
        Self::new(powers, budget)
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    /// Allocation with the subcarrier order reversed.
    pub fn mirrored(&self) -> Self {
        Self {
            powers: self.powers.iter().rev().copied().collect(),
            budget: self.budget,
        }
    }

    fn check_grid(&self, grid: &SpectralGrid) -> Result<(), DesignError> {
        self.validate()?;
        grid.validate()?;
        if self.powers.len() != grid.n_subcarriers {
            return Err(DesignError::InvalidAllocation(format!(
                "{} powers for {} subcarriers",
                self.powers.len(),
                grid.n_subcarriers
            )));
        }
        Ok(())
    }
}

/// What the optimizer may vary: the width of the edge groups and the number
/// of levels of the edge fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSpace {
    /// Largest edge-group width; 0 means a quarter of the band.
    pub max_edge_width: usize,
    /// Edge fractions tried, evenly spaced on `[0, 1]`.
    pub mix_levels: usize,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self {
            max_edge_width: 0,
            mix_levels: 1001,
        }
    }
}

/// Delay interval the user may be in, plus the design space searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRegion {
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub design: DesignSpace,
}

impl PriorRegion {
    pub fn new(delay_min_s: f64, delay_max_s: f64) -> Result<Self, DesignError> {
        let p = Self {
            delay_min_s,
            delay_max_s,
            design: DesignSpace::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_distances(min_m: f64, max_m: f64) -> Result<Self, DesignError> {
        Self::new(min_m / SPEED_OF_LIGHT, max_m / SPEED_OF_LIGHT)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if !(self.delay_min_s.is_finite() && self.delay_max_s.is_finite()) {
            return Err(DesignError::InvalidPrior("delay bounds must be finite".into()));
        }
        if self.delay_max_s <= self.delay_min_s {
            return Err(DesignError::InvalidPrior(format!("empty interval [{}, {}]", self.delay_min_s, self.delay_max_s)));
        }
        if self.design.mix_levels < 2 {
            return Err(DesignError::InvalidPrior("at least two edge-fraction levels".into()));
        }
        Ok(())
    }

    pub fn width_s(&self) -> f64 {
        self.delay_max_s - self.delay_min_s
    }

    /// Largest delay difference between two hypotheses in the region, capped
    /// one resolution cell short of the profile period so the periodic
    /// replica of the main peak stays outside.
    fn max_lag_s(&self, grid: &SpectralGrid) -> f64 {
        let period = 1.0 / grid.subcarrier_spacing_hz;
        self.width_s().min(period * (1.0 - 1.0 / grid.n_subcarriers as f64))
    }
}

fn normalized_weights(p: &PowerAllocation) -> Vec<f64> {
    let total = p.total();
    p.powers.iter().map(|x| x / total).collect()
}

fn frequencies(grid: &SpectralGrid) -> Vec<f64> {
    (0..grid.n_subcarriers).map(|i| grid.baseband_frequency(i)).collect()
}

fn amplitude(weights: &[f64], freqs: &[f64], lag_s: f64) -> Complex64 {
    weights
        .iter()
        .zip(freqs)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, f)| Complex64::from_polar(*w, 2.0 * PI * f * lag_s))
        .sum()
}

/// Range profile at `lag_s` relative to its peak (1 at zero lag).
pub fn profile_gain(p: &PowerAllocation, grid: &SpectralGrid, lag_s: f64) -> Result<f64, DesignError> {
    p.check_grid(grid)?;
    if p.total() == 0.0 {
        return Err(DesignError::InvalidAllocation("no transmitted power".into()));
    }
    Ok(amplitude(&normalized_weights(p), &frequencies(grid), lag_s).norm_sqr())
}

/// Range profile on a distance axis centred on the true distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeProfile {
    pub distances_m: Vec<f64>,
    /// Relative to the peak.
    pub db: Vec<f64>,
    pub true_distance_m: f64,
}

impl RangeProfile {
    pub fn peak_index(&self) -> usize {
        self.db
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
            .0
    }
}

/// Profile over one unambiguous period `c / df`, sampled `oversample` times
/// finer than the resolution cell `c / W`.
pub fn range_profile(p: &PowerAllocation, grid: &SpectralGrid, true_delay_s: f64, oversample: usize) -> Result<RangeProfile, DesignError> {
    if oversample == 0 {
        return Err(DesignError::InvalidInput("oversample must be at least 1".into()));
    }
    p.check_grid(grid)?;
    if p.total() == 0.0 {
        return Err(DesignError::InvalidAllocation("no transmitted power".into()));
    }
    let w = normalized_weights(p);
    let f = frequencies(grid);
    let m = grid.n_subcarriers * oversample;
    let step = 1.0 / (m as f64 * grid.subcarrier_spacing_hz);
    let lags: Vec<f64> = (0..m).map(|j| (j as f64 - (m / 2) as f64) * step).collect();
    let db = lags
        .par_iter()
        .map(|lag| if *lag == 0.0 { 0.0 } else { to_db(amplitude(&w, &f, *lag).norm_sqr().max(1e-30)) })
        .collect();
    Ok(RangeProfile {
        distances_m: lags.iter().map(|l| SPEED_OF_LIGHT * (true_delay_s + l)).collect(),
        db,
        true_distance_m: SPEED_OF_LIGHT * true_delay_s,
    })
}

/// `sum p w^2 - (sum p w)^2 / sum p` with `w = 2 pi n df`: delay information
/// per unit SNR once the unknown complex gain is accounted for.
fn delay_information(weights: &[f64], freqs: &[f64]) -> f64 {
    let s0: f64 = weights.iter().sum();
    let s1: f64 = weights.iter().zip(freqs).map(|(w, f)| w * 2.0 * PI * f).sum();
    let s2: f64 = weights.iter().zip(freqs).map(|(w, f)| w * (2.0 * PI * f).powi(2)).sum();
    s2 - s1 * s1 / s0
}

fn peb_from_information(info: f64, scale: f64) -> f64 {
    // Below this the allocation has no usable bandwidth.
    if info <= 1e-12 * scale {
        f64::INFINITY
    } else {
        SPEED_OF_LIGHT / info.sqrt()
    }
}

/// Ranging error bound [m] for a single path; `snr` is the received SNR per
/// watt of transmit power on one subcarrier. Returns infinity when the
/// allocation has no effective bandwidth.
pub fn delay_peb(p: &PowerAllocation, grid: &SpectralGrid, snr: f64) -> Result<f64, DesignError> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(DesignError::InvalidInput(format!("snr {snr} must be positive")));
    }
    p.check_grid(grid)?;
    let total = p.total();
    if total == 0.0 {
        return Ok(f64::INFINITY);
    }
    let f = frequencies(grid);
    let info = 2.0 * snr * delay_information(&p.powers, &f);
    let wmax = f.iter().fold(0.0f64, |m, x| m.max((2.0 * PI * x).abs()));
    Ok(peb_from_information(info, 2.0 * snr * total * wmax * wmax))
}

/// Main-lobe width and first sidelobe of a range profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileMetrics {
    pub null_to_null_m: f64,
    pub first_sidelobe_db: f64,
    pub first_sidelobe_lag_m: f64,
}

/// Walks outward from zero lag to the first null and the next peak on each
/// side, refining both by golden-section search.
pub fn profile_metrics(p: &PowerAllocation, grid: &SpectralGrid) -> Result<ProfileMetrics, DesignError> {
    p.check_grid(grid)?;
    if p.total() == 0.0 {
        return Err(DesignError::InvalidAllocation("no transmitted power".into()));
    }
    let w = normalized_weights(p);
    let f = frequencies(grid);
    if delay_information(&w, &f) <= 1e-12 * (PI * grid.bandwidth()).powi(2) {
        return Err(DesignError::InvalidInput("the allocation has no bandwidth, so the profile is flat".into()));
    }
    let g = |lag: f64| amplitude(&w, &f, lag).norm_sqr();
    let step = 1.0 / (SCAN_OVERSAMPLE as f64 * grid.bandwidth());
    let half_period = 0.5 / grid.subcarrier_spacing_hz;
    let side = |sign: f64| -> Result<(f64, f64, f64), DesignError> {
        let at = |k: usize| g(sign * k as f64 * step);
        let limit = (half_period / step) as usize;
        let mut k = 0;
        while k < limit && at(k + 1) <= at(k) {
            k += 1;
        }
        if k == limit {
            return Err(DesignError::InvalidInput("the profile has no main-lobe null".into()));
        }
        let null = golden_max(|x| -g(sign * x), (k.max(1) - 1) as f64 * step, (k + 1) as f64 * step, step * 1e-9);
        let mut j = k;
        while j < limit && at(j + 1) >= at(j) {
            j += 1;
        }
        let peak = golden_max(|x| g(sign * x), (j - 1) as f64 * step, (j + 1) as f64 * step, step * 1e-9);
        Ok((null, peak, g(sign * peak)))
    };
    let (right_null, right_peak, right_level) = side(1.0)?;
    let (left_null, left_peak, left_level) = side(-1.0)?;
    let (lag, level) = if right_level >= left_level { (right_peak, right_level) } else { (-left_peak, left_level) };
    Ok(ProfileMetrics {
        null_to_null_m: SPEED_OF_LIGHT * (right_null + left_null),
        first_sidelobe_db: to_db(level),
        first_sidelobe_lag_m: SPEED_OF_LIGHT * lag,
    })
}

/// Highest profile local maximum outside the main lobe within the prior region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SidelobeCheck {
    /// Relative to the peak; `-inf` when there is no sidelobe in the region.
    pub worst_db: f64,
    /// Lag of that sidelobe [m]; NaN when there is none.
    pub lag_m: f64,
}

impl SidelobeCheck {
    pub fn satisfies(&self, margin_db: f64) -> bool {
        self.worst_db <= -margin_db
    }
}

/// Lags `j * step` for `j = -J..=J` covering the prior region.
fn scan_lags(grid: &SpectralGrid, prior: &PriorRegion) -> (Vec<f64>, f64) {
    let step = 1.0 / (SCAN_OVERSAMPLE as f64 * grid.bandwidth());
    let j = (prior.max_lag_s(grid) / step).floor() as i64;
    ((-j..=j).map(|k| k as f64 * step).collect(), step)
}

/// Finds the worst sidelobe from profile samples on `lags`, refining the
/// strongest few candidates with the continuous profile `g`.
fn worst_sidelobe<G: Fn(f64) -> f64>(samples: &[f64], lags: &[f64], step: f64, g: G) -> SidelobeCheck {
    let n = samples.len();
    let c = n / 2;
    let mut right = c;
    while right + 1 < n && samples[right + 1] <= samples[right] {
        right += 1;
    }
    let mut left = c;
    while left > 0 && samples[left - 1] <= samples[left] {
        left -= 1;
    }
    let mut candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| (i > right || i < left) && samples[i] > samples[i - 1] && samples[i] >= samples[i + 1])
        .collect();
    candidates.sort_by(|a, b| samples[*b].total_cmp(&samples[*a]).then(a.cmp(b)));
    let (lo, hi) = (lags[0], lags[n - 1]);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &i in candidates.iter().take(3) {
        let a = (lags[i] - step).max(lo);
        let b = (lags[i] + step).min(hi);
        let x = golden_max(&g, a, b, step * 1e-6);
        let v = g(x).max(samples[i]);
        if v > best.0 {
            best = (v, if g(x) >= samples[i] { x } else { lags[i] });
        }
    }
    SidelobeCheck {
        worst_db: if best.0 > 0.0 { to_db(best.0) } else { f64::NEG_INFINITY },
        lag_m: SPEED_OF_LIGHT * best.1,
    }
}

/// Worst sidelobe of `p` inside the prior region.
pub fn sidelobe_check(p: &PowerAllocation, grid: &SpectralGrid, prior: &PriorRegion) -> Result<SidelobeCheck, DesignError> {
    p.check_grid(grid)?;
    prior.validate()?;
    if p.total() == 0.0 {
        return Err(DesignError::InvalidAllocation("no transmitted power".into()));
    }
    let w = normalized_weights(p);
    let f = frequencies(grid);
    let g = |lag: f64| amplitude(&w, &f, lag).norm_sqr();
    let (lags, step) = scan_lags(grid, prior);
    let samples: Vec<f64> = lags.iter().map(|l| g(*l)).collect();
    Ok(worst_sidelobe(&samples, &lags, step, g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizedAllocation {
    pub allocation: PowerAllocation,
    pub peb_m: f64,
    pub uniform_peb_m: f64,
    /// Subcarriers in each edge group.
    pub edge_width: usize,
    /// Share of the budget placed on the edge groups.
    pub edge_fraction: f64,
    pub sidelobe: SidelobeCheck,
}

impl OptimizedAllocation {
    /// `1 - PEB / PEB_uniform`.
    pub fn peb_reduction(&self) -> f64 {
        1.0 - self.peb_m / self.uniform_peb_m
    }
}

struct Candidate {
    peb: f64,
    width: usize,
    level: usize,
    check: SidelobeCheck,
}

/// Lowest delay bound over uniform-plus-edge allocations whose sidelobes in
/// the prior region stay `margin_db` below the peak. A margin of 0 dB or
/// less removes the constraint.
pub fn optimize_allocation(grid: &SpectralGrid, snr: f64, budget: f64, prior: &PriorRegion, margin_db: f64) -> Result<OptimizedAllocation, DesignError> {
    grid.validate()?;
    prior.validate()?;
    if !(snr.is_finite() && snr > 0.0) {
        return Err(DesignError::InvalidInput(format!("snr {snr} must be positive")));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(DesignError::InvalidInput(format!("budget {budget} must be positive")));
    }
    if !margin_db.is_finite() {
        return Err(DesignError::InvalidInput("margin must be finite".into()));
    }
    let n = grid.n_subcarriers;
    let uniform = PowerAllocation::uniform(n, budget);
    let uniform_peb = delay_peb(&uniform, grid, snr)?;
    let max_width = match prior.design.max_edge_width {
        0 => (n / 4).max(1),
        m => m,
    }
    .min(n / 2);
    let f = frequencies(grid);
    let (lags, step) = scan_lags(grid, prior);
    let u_w = vec![1.0 / n as f64; n];
    let u_amp: Vec<Complex64> = lags.iter().map(|l| amplitude(&u_w, &f, *l)).collect();
    let levels = prior.design.mix_levels;
    let wmax = f.iter().fold(0.0f64, |m, x| m.max((2.0 * PI * x).abs()));

    // One independent start per edge width.
    let best_per_width: Vec<Option<Candidate>> = (1..=max_width)
        .into_par_iter()
        .map(|m| {
            let mut e_w = vec![0.0; n];
            for i in (0..m).chain(n - m..n) {
                e_w[i] = 1.0 / (2 * m) as f64;
            }
            let e_amp: Vec<Complex64> = lags.iter().map(|l| amplitude(&e_w, &f, *l)).collect();
            let weights = |a: f64| -> Vec<f64> { u_w.iter().zip(&e_w).map(|(u, e)| (1.0 - a) * u + a * e).collect() };
            let mut order: Vec<(f64, usize)> = (0..levels)
                .map(|k| {
                    let a = k as f64 / (levels - 1) as f64;
                    let info = 2.0 * snr * budget * delay_information(&weights(a), &f);
                    (peb_from_information(info, 2.0 * snr * budget * wmax * wmax), k)
                })
                .collect();
            order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            for (peb, k) in order {
                let a = k as f64 / (levels - 1) as f64;
                let samples: Vec<f64> = u_amp.iter().zip(&e_amp).map(|(u, e)| (u * (1.0 - a) + e * a).norm_sqr()).collect();
                let w = weights(a);
                let check = worst_sidelobe(&samples, &lags, step, |lag| amplitude(&w, &f, lag).norm_sqr());
                if margin_db <= 0.0 || check.satisfies(margin_db) {
                    return Some(Candidate { peb, width: m, level: k, check });
                }
            }
            None
        })
        .collect();
    let best = best_per_width
        .into_iter()
        .flatten()
        .min_by(|x, y| x.peb.total_cmp(&y.peb).then(x.width.cmp(&y.width)).then(x.level.cmp(&y.level)));
    let Some(best) = best else {
        let check = sidelobe_check(&uniform, grid, prior)?;
        return Err(DesignError::Infeasible {
            margin_db,
            level_db: check.worst_db,
            lag_m: check.lag_m,
        });
    };
    let a = best.level as f64 / (levels - 1) as f64;
    let allocation = if n >= 2 {
        PowerAllocation::edge_weighted(n, budget, best.width, a)?
    } else {
        uniform.clone()
    };
    Ok(OptimizedAllocation {
        peb_m: delay_peb(&allocation, grid, snr)?,
        allocation,
        uniform_peb_m: uniform_peb,
        edge_width: best.width,
        edge_fraction: a,
        sidelobe: best.check,
    })
}

/// Ranging study with a user around 10 m on a 132 MHz, 64-subcarrier band.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingSetup {
    pub grid: SpectralGrid,
    pub true_distance_m: f64,
    pub prior: PriorRegion,
    pub margin_db: f64,
    pub snr: f64,
    pub budget: f64,
}

impl RangingSetup {
    pub fn standard() -> Self {
        Self {
            grid: SpectralGrid::with_bandwidth(28e9, 132e6, 64, 1).expect("valid grid"),
            true_distance_m: 10.0,
            prior: PriorRegion::from_distances(9.0, 11.0).expect("valid prior"),
            margin_db: 3.0,
            snr: 100.0,
            budget: 1.0,
        }
    }
}

/// Uniform and optimized allocations side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangingStudy {
    pub uniform: PowerAllocation,
    pub uniform_peb_m: f64,
    pub uniform_metrics: ProfileMetrics,
    pub uniform_profile: RangeProfile,
    pub optimized: OptimizedAllocation,
    pub optimized_metrics: ProfileMetrics,
    pub optimized_profile: RangeProfile,
}

pub fn ranging_study(setup: &RangingSetup, oversample: usize) -> Result<RangingStudy, DesignError> {
    let n = setup.grid.n_subcarriers;
    let tau = setup.true_distance_m / SPEED_OF_LIGHT;
    let uniform = PowerAllocation::uniform(n, setup.budget);
    let optimized = optimize_allocation(&setup.grid, setup.snr, setup.budget, &setup.prior, setup.margin_db)?;
    Ok(RangingStudy {
        uniform_peb_m: delay_peb(&uniform, &setup.grid, setup.snr)?,
        uniform_metrics: profile_metrics(&uniform, &setup.grid)?,
        uniform_profile: range_profile(&uniform, &setup.grid, tau, oversample)?,
        optimized_metrics: profile_metrics(&optimized.allocation, &setup.grid)?,
        optimized_profile: range_profile(&optimized.allocation, &setup.grid, tau, oversample)?,
        uniform,
        optimized,
    })
}

fn export(e: impl std::fmt::Display) -> DesignError {
    DesignError::Export(e.to_string())
}

/// Columns `subcarrier, frequency_hz` and one power column [W] per allocation.
pub fn write_allocations_csv<W: Write>(grid: &SpectralGrid, allocations: &[(&str, &PowerAllocation)], w: W) -> Result<(), DesignError> {
    if allocations.iter().any(|(_, p)| p.powers.len() != grid.n_subcarriers) {
        return Err(DesignError::InvalidAllocation("allocation length differs from the grid".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subcarrier".to_string(), "frequency_hz".to_string()];
    header.extend(allocations.iter().map(|(l, _)| format!("{l}_w")));
    out.write_record(&header).map_err(export)?;
    for i in 0..grid.n_subcarriers {
        let mut row = vec![grid.subcarrier_index(i).to_string(), format!("{}", grid.carrier_hz + grid.baseband_frequency(i))];
        row.extend(allocations.iter().map(|(_, p)| format!("{:e}", p.powers[i])));
        out.write_record(&row).map_err(export)?;
    }
    out.flush().map_err(export)
}

/// Columns `distance_m` and one dB column per profile; the profiles must
/// share their distance axis.
pub fn write_profiles_csv<W: Write>(profiles: &[(&str, &RangeProfile)], w: W) -> Result<(), DesignError> {
    let Some((_, first)) = profiles.first() else {
        return Err(DesignError::InvalidInput("no profiles".into()));
    };
    if profiles.iter().any(|(_, p)| p.distances_m != first.distances_m) {
        return Err(DesignError::InvalidInput("profiles use different distance axes".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["distance_m".to_string()];
    header.extend(profiles.iter().map(|(l, _)| format!("{l}_db")));
    out.write_record(&header).map_err(export)?;
    for (j, d) in first.distances_m.iter().enumerate() {
        let mut row = vec![format!("{d:.6}")];
        row.extend(profiles.iter().map(|(_, p)| format!("{:.4}", p.db[j])));
        out.write_record(&row).map_err(export)?;
    }
    out.flush().map_err(export)
}
