use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use super::{compass_max, EstimationError};
use crate::channel::{near_field_response, steering_vector};
use crate::design::PowerAllocation;
use crate::linalg::golden_max;
use crate::scenario::{ArrayGeometry, Direction, SpectralGrid};

/// Peak quality below which a delay estimate is flagged.
pub const LOW_QUALITY: f64 = 0.2;

/// Relative level at which a second direction counts as a tie.
const TIE_LEVEL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// Delay in `[0, 1/df)`.
    pub delay_s: f64,
    /// Complex gain at the estimated delay.
    pub gain: Complex64,
    /// `|c(tau)|^2 / (sum |y|^2 sum p)`, in `[0, 1]`.
    pub quality: f64,
    pub low_confidence: bool,
}

/// Correlator of one or more subcarrier rows against a delay hypothesis.
pub(crate) struct DelayCorrelator<'a> {
    rows: &'a [Vec<Complex64>],
    amps: Vec<f64>,
    freqs: Vec<f64>,
}

impl<'a> DelayCorrelator<'a> {
    pub(crate) fn new(rows: &'a [Vec<Complex64>], amps: Vec<f64>, grid: &SpectralGrid) -> Self {
        let freqs = (0..grid.n_subcarriers).map(|i| grid.baseband_frequency(i)).collect();
        Self { rows, amps, freqs }
    }

    /// Matched-filter weights for one delay, shared by every row.
    pub(crate) fn kernel(&self, tau: f64) -> Vec<Complex64> {
        self.amps.iter().zip(&self.freqs).map(|(a, f)| Complex64::from_polar(*a, 2.0 * PI * f * tau)).collect()
    }

    pub(crate) fn correlate(&self, row: &[Complex64], tau: f64) -> Complex64 {
        apply(row, &self.kernel(tau))
    }

    /// Correlation of every row at one delay.
    pub(crate) fn correlate_all(&self, tau: f64) -> Vec<Complex64> {
        let w = self.kernel(tau);
        self.rows.iter().map(|r| apply(r, &w)).collect()
    }

    pub(crate) fn metric(&self, tau: f64) -> f64 {
        self.correlate_all(tau).iter().map(|c| c.norm_sqr()).sum()
    }

    /// Derivative of the metric, `2 Re sum conj(c) dc/dtau`.
    fn slope(&self, tau: f64) -> f64 {
        let w = self.kernel(tau);
        self.rows
            .iter()
            .map(|row| {
                let (mut c, mut dc) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                for ((y, k), f) in row.iter().zip(&w).zip(&self.freqs) {
                    let t = y * k;
                    c += t;
                    dc += t * Complex64::new(0.0, 2.0 * PI * f);
                }
                2.0 * (c.conj() * dc).re
            })
            .sum()
    }

    /// Bisects the metric's slope around `tau` when it changes sign within
    /// `+/- half`; the slope resolves the peak far below the flat top that
    /// limits a value-based search.
    fn polish(&self, tau: f64, half: f64) -> f64 {
        let (mut a, mut b) = (tau - half, tau + half);
        if !(self.slope(a) > 0.0 && self.slope(b) < 0.0) {
            return tau;
        }
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if self.slope(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// Maximizer of the summed correlation power over one delay period.
    pub(crate) fn search(&self, grid: &SpectralGrid, oversample: usize) -> f64 {
        let n = grid.n_subcarriers;
        let m = n * oversample.max(1);
        let period = 1.0 / grid.subcarrier_spacing_hz;
        let step = period / m as f64;
        let twiddle: Vec<Complex64> = (0..m).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64)).collect();
        let idx: Vec<i64> = (0..n).map(|i| grid.subcarrier_index(i)).collect();
        let values: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|j| {
                self.rows
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&self.amps)
                            .zip(&idx)
                            .map(|((y, a), nn)| y * twiddle[(nn * j as i64).rem_euclid(m as i64) as usize] * *a)
                            .sum::<Complex64>()
                            .norm_sqr()
                    })
                    .sum()
            })
            .collect();
        let best = (0..m).fold(0, |b, j| if values[j] > values[b] { j } else { b });
        let (l, c, r) = (values[(best + m - 1) % m], values[best], values[(best + 1) % m]);
        let denom = l - 2.0 * c + r;
        let offset = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        let centre = (best as f64 + offset) * step;
        let tau = golden_max(|t| self.metric(t), centre - step, centre + step, step * 1e-10);
        self.polish(tau, step * 1e-4).rem_euclid(period)
    }
}

fn apply(row: &[Complex64], kernel: &[Complex64]) -> Complex64 {
    row.iter().zip(kernel).map(|(y, k)| y * k).sum()
}

fn amplitudes(p: &PowerAllocation, grid: &SpectralGrid) -> Result<Vec<f64>, EstimationError> {
    p.validate()?;
    if p.powers.len() != grid.n_subcarriers {
        return Err(EstimationError::InvalidInput(format!(
            "{} powers for {} subcarriers",
            p.powers.len(),
            grid.n_subcarriers
        )));
    }
    Ok(p.powers.iter().map(|x| x.sqrt()).collect())
}

/// Single-path ML delay from per-subcarrier samples
/// `y_n = sqrt(p_n) alpha exp(-j 2 pi n df tau) + noise`.
pub fn estimate_delay(y: &[Complex64], p: &PowerAllocation, grid: &SpectralGrid, oversample: usize) -> Result<DelayEstimate, EstimationError> {
    grid.validate()?;
    if y.len() != grid.n_subcarriers {
        return Err(EstimationError::InvalidInput(format!("{} samples for {} subcarriers", y.len(), grid.n_subcarriers)));
    }
    if oversample == 0 {
        return Err(EstimationError::InvalidInput("oversampling factor must be positive".into()));
    }
    let amps = amplitudes(p, grid)?;
    let rows = [y.to_vec()];
    let corr = DelayCorrelator::new(&rows, amps, grid);
    let tau = corr.search(grid, oversample);
    let c = corr.correlate(y, tau);
    let energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let total = p.total();
    let quality = if energy > 0.0 { (c.norm_sqr() / (energy * total)).min(1.0) } else { 0.0 };
    Ok(DelayEstimate {
        delay_s: tau,
        gain: c / total,
        quality,
        low_confidence: quality < LOW_QUALITY,
    })
}

/// Direction search grid in the array's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
}

impl AngleGrid {
    /// Front half-space, with about 32 points per element along each axis
    /// the array spans, capped at 0.25 degree azimuth and 1 degree
    /// elevation steps.
    pub fn for_array(arr: &ArrayGeometry) -> Self {
        let distinct = |c: usize| {
            let mut v: Vec<f64> = arr.element_offsets.iter().map(|o| o[c]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            v.len()
        };
        let lin = |n: usize, h: f64| (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect::<Vec<_>>();
        let axis = |c: usize, cap: usize| match distinct(c) {
            1 => vec![0.0],
            n => lin((32 * n + 1).min(cap), PI / 2.0),
        };
        Self {
            azimuths: axis(1, 721),
            elevations: axis(2, 181),
        }
    }

    fn direction(&self, a: usize, e: usize) -> Direction {
        Direction::new(self.azimuths[a], self.elevations[e])
    }

    fn steps(&self) -> [f64; 2] {
        let step = |v: &[f64]| if v.len() > 1 { (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64 } else { 0.0 };
        [step(&self.azimuths), step(&self.elevations)]
    }

    fn validate(&self) -> Result<(), EstimationError> {
        if self.azimuths.is_empty() || self.elevations.is_empty() {
            return Err(EstimationError::InvalidInput("empty angle grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub direction: Direction,
    /// Share of the snapshot energy captured by the estimated direction.
    pub quality: f64,
    /// Another direction fits equally well (grating lobe); the returned one
    /// is the candidate closest to the prior, if any.
    pub ambiguous: bool,
}

/// Values of `metric` on the grid, azimuth-major.
pub(crate) fn scan<F: Fn(&Direction) -> f64 + Sync>(grid: &AngleGrid, metric: &F) -> Vec<f64> {
    let ne = grid.elevations.len();
    (0..grid.azimuths.len() * ne)
        .into_par_iter()
        .map(|i| metric(&grid.direction(i / ne, i % ne)))
        .collect()
}

/// Grid local maxima (8-neighbourhood), strongest first.
fn local_maxima(values: &[f64], grid: &AngleGrid) -> Vec<(usize, f64)> {
    let (na, ne) = (grid.azimuths.len() as i64, grid.elevations.len() as i64);
    let mut out: Vec<(usize, f64)> = (0..values.len())
        .filter(|&i| {
            let (a, e) = (i as i64 / ne, i as i64 % ne);
            let v = values[i];
            (-1..=1).all(|da| {
                (-1..=1).all(|de| {
                    let (a2, e2) = (a + da, e + de);
                    if (da, de) == (0, 0) || a2 < 0 || e2 < 0 || a2 >= na || e2 >= ne {
                        return true;
                    }
                    let j = (a2 * ne + e2) as usize;
                    values[j] < v || (values[j] == v && j > i)
                })
            })
        })
        .map(|i| (i, values[i]))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

pub(crate) fn refine_direction<F: Fn(&Direction) -> f64>(metric: &F, start: Direction, grid: &AngleGrid) -> (Direction, f64) {
    let [sa, se] = grid.steps();
    let free: Vec<(usize, f64)> = [(0, sa), (1, se)].into_iter().filter(|(_, s)| *s > 0.0).collect();
    if free.is_empty() {
        return (start, metric(&start));
    }
    let to_dir = |x: &[f64]| {
        let mut d = start;
        for ((c, _), v) in free.iter().zip(x) {
            if *c == 0 {
                d.azimuth = *v;
            } else {
                d.elevation = *v;
            }
        }
        d
    };
    let x0: Vec<f64> = free.iter().map(|(c, _)| if *c == 0 { start.azimuth } else { start.elevation }).collect();
    let steps: Vec<f64> = free.iter().map(|(_, s)| *s).collect();
    let (x, v) = compass_max(|x| metric(&to_dir(x)), &x0, &steps, 1e-10);
    (to_dir(&x), v)
}

/// Grid search plus refinement of `metric`, flagging near-equal distinct
/// maxima and breaking such ties toward `prior`.
pub(crate) fn search_directions<F: Fn(&Direction) -> f64 + Sync>(
    grid: &AngleGrid,
    metric: &F,
    prior: Option<Direction>,
) -> Result<(Direction, f64, bool), EstimationError> {
    grid.validate()?;
    let values = scan(grid, metric);
    let maxima = local_maxima(&values, grid);
    let top = maxima.first().map_or(0.0, |m| m.1);
    let [sa, se] = grid.steps();
    let resolution = 2.0 * sa.max(se);
    let mut candidates: Vec<(Direction, f64)> = Vec::new();
    for &(i, v) in maxima.iter().take(8) {
        if v < (1.0 - 10.0 * TIE_LEVEL) * top {
            break;
        }
        let ne = grid.elevations.len();
        let refined = refine_direction(metric, grid.direction(i / ne, i % ne), grid);
        let distinct = candidates
            .iter()
            .all(|(d, _)| d.unit_vector().angle(&refined.0.unit_vector()) > resolution);
        if distinct {
            candidates.push(refined);
        }
    }
    if candidates.is_empty() {
        let ne = grid.elevations.len();
        let i = maxima.first().map_or(0, |m| m.0);
        candidates.push(refine_direction(metric, grid.direction(i / ne, i % ne), grid));
    }
    let best = candidates.iter().map(|c| c.1).fold(f64::MIN, f64::max);
    let tied: Vec<(Direction, f64)> = candidates.into_iter().filter(|c| c.1 >= (1.0 - TIE_LEVEL) * best).collect();
    let ambiguous = tied.len() > 1;
    let chosen = match prior {
        Some(p) if ambiguous => *tied
            .iter()
            .min_by(|a, b| {
                let da = a.0.unit_vector().angle(&p.unit_vector());
                let db = b.0.unit_vector().angle(&p.unit_vector());
                da.total_cmp(&db)
            })
            .unwrap(),
        _ => *tied.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap(),
    };
    Ok((chosen.0, chosen.1, ambiguous))
}

fn check_snapshots(snapshots: &[DVector<Complex64>], arr: &ArrayGeometry) -> Result<f64, EstimationError> {
    if snapshots.is_empty() {
        return Err(EstimationError::InvalidInput("no snapshots".into()));
    }
    if let Some(s) = snapshots.iter().find(|s| s.len() != arr.num_elements()) {
        return Err(EstimationError::InvalidInput(format!("snapshot of length {} for {} elements", s.len(), arr.num_elements())));
    }
    Ok(snapshots.iter().map(|s| s.norm_squared()).sum())
}

/// Far-field ML direction: maximizes `sum_s |a^H y_s|^2 / ||a||^2`.
pub fn estimate_angles(
    snapshots: &[DVector<Complex64>],
    arr: &ArrayGeometry,
    wavelength: f64,
    grid: &AngleGrid,
    prior: Option<Direction>,
) -> Result<AngleEstimate, EstimationError> {
    let energy = check_snapshots(snapshots, arr)?;
    let m = arr.num_elements() as f64;
    let metric = |d: &Direction| {
        let a = steering_vector(arr, d, wavelength);
        snapshots.iter().map(|y| a.dotc(y).norm_sqr()).sum::<f64>() / m
    };
    let (direction, value, ambiguous) = search_directions(grid, &metric, prior)?;
    Ok(AngleEstimate {
        direction,
        quality: if energy > 0.0 { (value / energy).min(1.0) } else { 0.0 },
        ambiguous,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearFieldEstimate {
    pub direction: Direction,
    pub distance_m: f64,
    pub quality: f64,
}

/// Joint direction and range of a source from spherical-wavefront responses.
pub fn estimate_angle_range(
    snapshots: &[DVector<Complex64>],
    arr: &ArrayGeometry,
    wavelength: f64,
    grid: &AngleGrid,
    distances: &[f64],
) -> Result<NearFieldEstimate, EstimationError> {
    let energy = check_snapshots(snapshots, arr)?;
    grid.validate()?;
    if distances.is_empty() || distances.iter().any(|d| !(d.is_finite() && *d > arr.bounding_radius())) {
        return Err(EstimationError::InvalidInput("distances must lie outside the array's bounding sphere".into()));
    }
    let m = arr.num_elements() as f64;
    let metric = |d: &Direction, r: f64| -> f64 {
        match near_field_response(arr, &arr.point_along(d, r), wavelength) {
            Ok(b) => snapshots.iter().map(|y| b.response.dotc(y).norm_sqr()).sum::<f64>() / m,
            Err(_) => 0.0,
        }
    };
    let ne = grid.elevations.len();
    let cells = grid.azimuths.len() * ne;
    let values: Vec<f64> = (0..cells * distances.len())
        .into_par_iter()
        .map(|i| metric(&grid.direction((i % cells) / ne, i % ne), distances[i / cells]))
        .collect();
    let best = (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    let start = grid.direction((best % cells) / ne, best % ne);
    let d0 = distances[best / cells];
    let [sa, se] = grid.steps();
    let ln_step = if distances.len() > 1 {
        (distances[distances.len() - 1] / distances[0]).ln().abs() / (distances.len() - 1) as f64
    } else {
        0.1
    };
    let mut x0 = vec![start.azimuth, d0.ln()];
    let mut steps = vec![sa.max(1e-3), ln_step];
    if se > 0.0 {
        x0.push(start.elevation);
        steps.push(se);
    }
    let unpack = |x: &[f64]| (Direction::new(x[0], if x.len() > 2 { x[2] } else { start.elevation }), x[1].exp());
    let (x, v) = compass_max(
        |x| {
            let (d, r) = unpack(x);
            if r <= arr.bounding_radius() {
                return 0.0;
            }
            metric(&d, r)
        },
        &x0,
        &steps,
        1e-10,
    );
    let (direction, distance_m) = unpack(&x);
    Ok(NearFieldEstimate {
        direction,
        distance_m,
        quality: if energy > 0.0 { (v / energy).min(1.0) } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precoding::logspace;
    use crate::SPEED_OF_LIGHT;
    use nalgebra::{Rotation3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid() -> SpectralGrid {
        SpectralGrid::with_bandwidth(28e9, 400e6, 64, 1).unwrap()
    }

    fn tones(grid: &SpectralGrid, p: &PowerAllocation, tau: f64, alpha: Complex64) -> Vec<Complex64> {
        (0..grid.n_subcarriers)
            .map(|i| alpha * Complex64::from_polar(p.powers[i].sqrt(), -2.0 * PI * grid.baseband_frequency(i) * tau))
            .collect()
    }

    fn noise(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
        let s = (variance / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    }

    #[test]
    fn on_grid_delay_is_exact() {
        let g = grid();
        let p = PowerAllocation::uniform(64, 1.0);
        let cell = 1.0 / g.bandwidth();
        let tau = 7.0 * cell;
        let est = estimate_delay(&tones(&g, &p, tau, Complex64::new(0.3, -0.2)), &p, &g, 1).unwrap();
        assert!((est.delay_s - tau).abs() < 1e-9 * cell);
        assert!((est.quality - 1.0).abs() < 1e-12);
        assert!((est.gain - Complex64::new(0.3, -0.2)).norm() < 1e-9);
    }

    #[test]
    fn off_grid_delay_with_oversampling() {
        let g = grid();
        let p = PowerAllocation::uniform(64, 1.0);
        let cell = 1.0 / g.bandwidth();
        for frac in [0.013, 0.37, 0.5, 0.91] {
            let tau = (11.0 + frac) * cell;
            let est = estimate_delay(&tones(&g, &p, tau, Complex64::new(1.0, 0.0)), &p, &g, 32).unwrap();
            assert!((est.delay_s - tau).abs() < 1e-6 * cell, "frac {frac}: {}", (est.delay_s - tau) / cell);
            assert!(!est.low_confidence);
        }
    }

    #[test]
    fn noise_only_is_flagged() {
        let g = grid();
        let p = PowerAllocation::uniform(64, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<Complex64> = (0..64).map(|_| noise(&mut rng, 1.0)).collect();
        let est = estimate_delay(&y, &p, &g, 8).unwrap();
        assert!(est.low_confidence);
        assert!((0.0..=1.0).contains(&est.quality));
    }

    #[test]
    fn delay_rejects_bad_input() {
        let g = grid();
        let p = PowerAllocation::uniform(64, 1.0);
        assert!(estimate_delay(&[Complex64::new(1.0, 0.0); 3], &p, &g, 4).is_err());
        assert!(estimate_delay(&[Complex64::new(1.0, 0.0); 64], &p, &g, 0).is_err());
        assert!(estimate_delay(&[Complex64::new(1.0, 0.0); 64], &PowerAllocation::uniform(32, 1.0), &g, 4).is_err());
    }

    #[test]
    fn delay_rmse_tracks_bound() {
        let g = grid();
        let p = PowerAllocation::uniform(64, 1.0);
        let snr = crate::from_db(30.0);
        let peb = crate::design::delay_peb(&p, &g, snr).unwrap() / SPEED_OF_LIGHT;
        let tau = 20.3 / g.bandwidth();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 200;
        let mut se = 0.0;
        for _ in 0..trials {
            let y: Vec<Complex64> = tones(&g, &p, tau, Complex64::new(1.0, 0.0))
                .into_iter()
                .map(|v| v + noise(&mut rng, 1.0 / snr))
                .collect();
            se += (estimate_delay(&y, &p, &g, 8).unwrap().delay_s - tau).powi(2);
        }
        let ratio = (se / trials as f64).sqrt() / peb;
        assert!((0.8..1.25).contains(&ratio), "{ratio}");
    }

    fn ula(n: usize, spacing: f64) -> ArrayGeometry {
        ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), n, spacing)
    }

    #[test]
    fn on_grid_angle_is_exact() {
        let lambda = 0.01;
        let arr = ula(16, lambda / 2.0);
        let grid = AngleGrid::for_array(&arr);
        let d = Direction::azimuth_only(grid.azimuths[480]);
        let y = steering_vector(&arr, &d, lambda) * Complex64::new(0.0, 2.0);
        let est = estimate_angles(&[y], &arr, lambda, &grid, None).unwrap();
        assert!((est.direction.azimuth - d.azimuth).abs() < 1e-9);
        assert!((est.quality - 1.0).abs() < 1e-9);
        assert!(!est.ambiguous);
    }

    #[test]
    fn planar_array_recovers_both_angles() {
        let lambda = 0.01;
        let arr = ArrayGeometry::upa(Vector3::zeros(), Rotation3::identity(), 6, 6, lambda / 2.0);
        let grid = AngleGrid::for_array(&arr);
        let d = Direction::new(0.4123, -0.2345);
        let y = steering_vector(&arr, &d, lambda);
        let est = estimate_angles(&[y], &arr, lambda, &grid, None).unwrap();
        assert!((est.direction.azimuth - d.azimuth).abs() < 1e-7);
        assert!((est.direction.elevation - d.elevation).abs() < 1e-7);
    }

    #[test]
    fn grating_lobe_tie_breaks_toward_prior() {
        let lambda = 0.01;
        let arr = ula(8, lambda);
        let grid = AngleGrid::for_array(&arr);
        let d = Direction::azimuth_only((0.5f64).asin());
        let y = steering_vector(&arr, &d, lambda);
        let toward = estimate_angles(&[y.clone()], &arr, lambda, &grid, Some(Direction::azimuth_only(0.6))).unwrap();
        assert!(toward.ambiguous);
        assert!((toward.direction.azimuth - d.azimuth).abs() < 1e-7);
        let away = estimate_angles(&[y], &arr, lambda, &grid, Some(Direction::azimuth_only(-0.6))).unwrap();
        assert!(away.ambiguous);
        assert!((away.direction.azimuth + d.azimuth).abs() < 1e-7);
    }

    #[test]
    fn near_field_source_range_recovered() {
        let lambda = SPEED_OF_LIGHT / 28e9;
        let arr = ula(64, lambda / 2.0);
        let grid = AngleGrid::for_array(&arr);
        let truth = Direction::azimuth_only(0.3);
        let source = arr.point_along(&truth, 2.8);
        let clean = near_field_response(&arr, &source, lambda).unwrap().response;
        let distances = logspace(0.5, 50.0, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let variance = 1.0 / crate::from_db(20.0);
        for _ in 0..5 {
            let y = clean.map(|v| v + noise(&mut rng, variance));
            let est = estimate_angle_range(&[y], &arr, lambda, &grid, &distances).unwrap();
            assert!((est.distance_m - 2.8).abs() / 2.8 < 0.1, "{}", est.distance_m);
            assert!((est.direction.azimuth - truth.azimuth).abs() < 0.01);
        }
        let exact = estimate_angle_range(&[clean], &arr, lambda, &grid, &distances).unwrap();
        assert!((exact.distance_m - 2.8).abs() < 1e-6);
    }
}
