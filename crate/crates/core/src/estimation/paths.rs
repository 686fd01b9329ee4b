use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use super::ml::{refine_direction, search_directions, AngleGrid, DelayCorrelator};
use super::{compass_max, EstimationError};
use crate::channel::{steering_vector, Observations, SignalDesign};
use crate::scenario::{ArrayGeometry, Direction, SpectralGrid};

/// Rounds of re-estimating each path against the others' reconstruction.
const CYCLIC_ROUNDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub delay_s: f64,
    /// `None` for a single-element receiver.
    pub aoa: Option<Direction>,
    /// `None` when the transmit side offers no spatial diversity.
    pub aod: Option<Direction>,
    pub gain: Complex64,
    /// Share of the residual energy explained by this path, in `[0, 1]`.
    pub quality: f64,
}

/// Random unit-norm beams that change every symbol and are shared by all
/// subcarriers, so departure angles can be resolved across symbols.
pub fn symbol_sweep(tx_elements: usize, rx_elements: usize, grid: &SpectralGrid, total_power: f64, seed: u64) -> SignalDesign {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (tx_elements as f64).sqrt();
    let beams: Vec<DVector<Complex64>> = (0..grid.n_symbols)
        .map(|_| DVector::from_fn(tx_elements, |_, _| Complex64::from_polar(scale, rng.random_range(0.0..2.0 * PI))))
        .collect();
    let precoders = (0..grid.n_subcarriers).flat_map(|_| beams.iter().cloned()).collect();
    SignalDesign::uniform(precoders, grid, rx_elements, total_power)
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    delay_s: f64,
    aoa: Direction,
    aod: Direction,
}

struct Model<'a> {
    grid: &'a SpectralGrid,
    tx: &'a ArrayGeometry,
    rx: &'a ArrayGeometry,
    wavelength: f64,
    amps: Vec<f64>,
    /// Per-symbol beams.
    beams: Vec<DVector<Complex64>>,
    combiner_h: nalgebra::DMatrix<Complex64>,
    outputs: usize,
    with_aoa: bool,
    with_aod: bool,
    aoa_grid: AngleGrid,
    aod_grid: AngleGrid,
}

impl Model<'_> {
    fn rx_response(&self, d: &Direction) -> DVector<Complex64> {
        &self.combiner_h * steering_vector(self.rx, d, self.wavelength)
    }

    fn tx_response(&self, d: &Direction) -> DVector<Complex64> {
        let a = steering_vector(self.tx, d, self.wavelength);
        DVector::from_iterator(self.beams.len(), self.beams.iter().map(|f| a.transpose() * f).map(|m| m[(0, 0)]))
    }

    /// Rows are indexed `k * outputs + m` and run over subcarriers.
    fn correlations(&self, rows: &[Vec<Complex64>], tau: f64) -> Vec<Complex64> {
        DelayCorrelator::new(rows, self.amps.clone(), self.grid).correlate_all(tau)
    }

    /// `(inner, norm^2)` of the unit-gain path model against the rows.
    fn fit(&self, rows: &[Vec<Complex64>], h: &Hypothesis) -> (Complex64, f64) {
        let c = self.correlations(rows, h.delay_s);
        let g = self.rx_response(&h.aoa);
        let b = self.tx_response(&h.aod);
        let mut inner = Complex64::new(0.0, 0.0);
        for k in 0..b.len() {
            for m in 0..self.outputs {
                inner += (g[m] * b[k]).conj() * c[k * self.outputs + m];
            }
        }
        let p: f64 = self.amps.iter().map(|a| a * a).sum();
        (inner, p * g.norm_squared() * b.norm_squared())
    }

    fn metric(&self, rows: &[Vec<Complex64>], h: &Hypothesis) -> f64 {
        let (inner, norm) = self.fit(rows, h);
        if norm > 0.0 {
            inner.norm_sqr() / norm
        } else {
            0.0
        }
    }

    fn subtract(&self, rows: &mut [Vec<Complex64>], h: &Hypothesis, gain: Complex64, sign: f64) {
        let g = self.rx_response(&h.aoa);
        let b = self.tx_response(&h.aod);
        let tones: Vec<Complex64> = (0..self.grid.n_subcarriers)
            .map(|i| Complex64::from_polar(self.amps[i], -2.0 * PI * self.grid.baseband_frequency(i) * h.delay_s))
            .collect();
        for k in 0..b.len() {
            for m in 0..self.outputs {
                let scale = gain * g[m] * b[k] * sign;
                for (v, t) in rows[k * self.outputs + m].iter_mut().zip(&tones) {
                    *v -= scale * t;
                }
            }
        }
    }

    fn pack(&self, h: &Hypothesis) -> Vec<f64> {
        let mut x = vec![h.delay_s];
        if self.with_aoa {
            x.extend([h.aoa.azimuth, h.aoa.elevation]);
        }
        if self.with_aod {
            x.extend([h.aod.azimuth, h.aod.elevation]);
        }
        x
    }

    fn unpack(&self, x: &[f64], base: &Hypothesis) -> Hypothesis {
        let mut h = *base;
        h.delay_s = x[0];
        let mut i = 1;
        if self.with_aoa {
            h.aoa = Direction::new(x[i], x[i + 1]);
            i += 2;
        }
        if self.with_aod {
            h.aod = Direction::new(x[i], x[i + 1]);
        }
        h
    }

    fn steps(&self) -> Vec<f64> {
        let angle = |g: &AngleGrid| {
            let s = |v: &[f64]| if v.len() > 1 { (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64 } else { 0.0 };
            [s(&g.azimuths), s(&g.elevations)]
        };
        let mut steps = vec![0.25 / self.grid.bandwidth()];
        if self.with_aoa {
            steps.extend(angle(&self.aoa_grid));
        }
        if self.with_aod {
            steps.extend(angle(&self.aod_grid));
        }
        steps
    }

    /// Joint local refinement; dimensions with a zero step stay fixed.
    fn refine(&self, rows: &[Vec<Complex64>], start: &Hypothesis) -> Hypothesis {
        let x0 = self.pack(start);
        let steps = self.steps();
        let free: Vec<usize> = (0..x0.len()).filter(|&i| steps[i] > 0.0).collect();
        let sub0: Vec<f64> = free.iter().map(|&i| x0[i]).collect();
        let sub_steps: Vec<f64> = free.iter().map(|&i| steps[i]).collect();
        let expand = |s: &[f64]| {
            let mut x = x0.clone();
            for (j, &i) in free.iter().enumerate() {
                x[i] = s[j];
            }
            x
        };
        let (best, _) = compass_max(|s| self.metric(rows, &self.unpack(&expand(s), start)), &sub0, &sub_steps, 1e-9);
        self.unpack(&expand(&best), start)
    }

    fn acquire(&self, rows: &[Vec<Complex64>], oversample: usize) -> Result<Hypothesis, EstimationError> {
        let tau = DelayCorrelator::new(rows, self.amps.clone(), self.grid).search(self.grid, oversample);
        let c = self.correlations(rows, tau);
        let k_count = self.beams.len();
        let z: Vec<DVector<Complex64>> = (0..k_count)
            .map(|k| DVector::from_iterator(self.outputs, (0..self.outputs).map(|m| c[k * self.outputs + m])))
            .collect();
        let zero = Direction::new(0.0, 0.0);
        let aoa = if self.with_aoa {
            let metric = |d: &Direction| {
                let g = self.rx_response(d);
                let n = g.norm_squared();
                if n == 0.0 {
                    return 0.0;
                }
                z.iter().map(|zk| g.dotc(zk).norm_sqr()).sum::<f64>() / n
            };
            search_directions(&self.aoa_grid, &metric, None)?.0
        } else {
            zero
        };
        let g = self.rx_response(&aoa);
        let w = DVector::from_iterator(k_count, z.iter().map(|zk| g.dotc(zk)));
        let aod = if self.with_aod {
            let metric = |d: &Direction| {
                let b = self.tx_response(d);
                let n = b.norm_squared();
                if n == 0.0 {
                    return 0.0;
                }
                b.dotc(&w).norm_sqr() / n
            };
            search_directions(&self.aod_grid, &metric, None)?.0
        } else {
            zero
        };
        let start = Hypothesis { delay_s: tau, aoa, aod };
        let refined = self.refine(rows, &start);
        let tx_only = Hypothesis { aoa, ..refined };
        Ok(if self.with_aoa {
            let metric = |d: &Direction| self.metric(rows, &Hypothesis { aoa: *d, ..tx_only });
            let (d, _) = refine_direction(&metric, refined.aoa, &self.aoa_grid);
            Hypothesis { aoa: d, ..refined }
        } else {
            refined
        })
    }
}

fn energy(rows: &[Vec<Complex64>]) -> f64 {
    rows.iter().flatten().map(|v| v.norm_sqr()).sum()
}

/// Sequential single-path estimation with successive cancellation followed
/// by cyclic re-estimation of each path against the others. Precoders must
/// be constant across subcarriers; Doppler is taken as zero.
pub fn estimate_paths(
    obs: &Observations,
    design: &SignalDesign,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    wavelength: f64,
    n_paths: usize,
    oversample: usize,
) -> Result<Vec<PathEstimate>, EstimationError> {
    let grid = &obs.grid;
    grid.validate()?;
    design.validate(grid, rx.num_elements(), tx.num_elements())?;
    if !(1..=3).contains(&n_paths) {
        return Err(EstimationError::InvalidInput(format!("{n_paths} paths requested; 1 to 3 are supported")));
    }
    if oversample == 0 {
        return Err(EstimationError::InvalidInput("oversampling factor must be positive".into()));
    }
    let k_count = grid.n_symbols;
    for k in 0..k_count {
        let f0 = design.precoder(grid, 0, k);
        if (1..grid.n_subcarriers).any(|i| design.precoder(grid, i, k) != f0) {
            return Err(EstimationError::InvalidInput("precoders must not vary across subcarriers".into()));
        }
    }
    let beams: Vec<DVector<Complex64>> = (0..k_count).map(|k| design.precoder(grid, 0, k).clone()).collect();
    let distinct_beams = beams.iter().any(|b| (b - &beams[0]).norm() > 1e-12);
    let outputs = obs.outputs();
    let model = Model {
        grid,
        tx,
        rx,
        wavelength,
        amps: design.powers.iter().map(|p| p.sqrt()).collect(),
        beams,
        combiner_h: design.combiner.adjoint(),
        outputs,
        with_aoa: rx.num_elements() > 1,
        with_aod: tx.num_elements() > 1 && distinct_beams,
        aoa_grid: AngleGrid::for_array(rx),
        aod_grid: AngleGrid::for_array(tx),
    };
    let original: Vec<Vec<Complex64>> = (0..k_count * outputs)
        .map(|r| (0..grid.n_subcarriers).map(|i| obs.get(i, r / outputs)[r % outputs]).collect())
        .collect();

    let mut residual = original.clone();
    let mut found: Vec<(Hypothesis, Complex64)> = Vec::new();
    for _ in 0..n_paths {
        let h = model.acquire(&residual, oversample)?;
        let (inner, norm) = model.fit(&residual, &h);
        let gain = if norm > 0.0 { inner / norm } else { Complex64::new(0.0, 0.0) };
        model.subtract(&mut residual, &h, gain, 1.0);
        found.push((h, gain));
    }
    let mut qualities = vec![0.0; found.len()];
    if found.len() > 1 {
        for _ in 0..CYCLIC_ROUNDS {
            for l in 0..found.len() {
                let mut own = residual.clone();
                model.subtract(&mut own, &found[l].0, found[l].1, -1.0);
                let h = model.refine(&own, &found[l].0);
                let (inner, norm) = model.fit(&own, &h);
                let gain = if norm > 0.0 { inner / norm } else { Complex64::new(0.0, 0.0) };
                residual = own;
                model.subtract(&mut residual, &h, gain, 1.0);
                found[l] = (h, gain);
            }
        }
    }
    for (l, (h, _)) in found.iter().enumerate() {
        let mut own = residual.clone();
        model.subtract(&mut own, h, found[l].1, -1.0);
        let e = energy(&own);
        qualities[l] = if e > 0.0 { (model.metric(&own, h) / e).min(1.0) } else { 0.0 };
    }
    Ok(found
        .into_iter()
        .zip(qualities)
        .map(|((h, gain), quality)| PathEstimate {
            delay_s: h.delay_s,
            aoa: model.with_aoa.then_some(h.aoa),
            aod: model.with_aod.then_some(h.aod),
            gain,
            quality,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{observe, synthesize};
    use crate::scenario::{geometric_path_params, PathGeometry, Scenario};
    use nalgebra::{Rotation3, Vector3};

    fn two_path(n_symbols: usize) -> Scenario {
        let grid = SpectralGrid::with_bandwidth(28e9, 400e6, 64, n_symbols).unwrap();
        let lambda = grid.wavelength();
        let tx = ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), 8, lambda / 2.0);
        let rx = ArrayGeometry::ula(
            Vector3::new(12.0, 3.0, 0.0),
            Rotation3::from_axis_angle(&Vector3::z_axis(), PI),
            4,
            lambda / 2.0,
        );
        let mut s = Scenario::los(tx, rx, grid);
        s.paths.push(PathGeometry::single_bounce(Vector3::new(6.0, -4.0, 0.0)));
        s.clock.bias_s = 2e-9;
        s
    }

    #[test]
    fn noiseless_two_paths_recovered() {
        let s = two_path(16);
        let h = synthesize(&s).unwrap();
        let design = symbol_sweep(8, 4, &s.grid, 1.0, 3);
        let obs = observe(&h, &design, 0.0, 0).unwrap();
        let est = estimate_paths(&obs, &design, &s.tx, &s.rx, s.wavelength(), 2, 16).unwrap();
        let cell = 1.0 / s.grid.bandwidth();
        for (l, e) in est.iter().enumerate() {
            let truth = geometric_path_params(&s, l).unwrap();
            assert!((e.delay_s - truth.delay_s).abs() < 1e-6 * cell, "path {l}: {}", (e.delay_s - truth.delay_s) / cell);
            assert!((e.aoa.unwrap().azimuth - truth.aoa.azimuth).abs() < 1e-6);
            assert!((e.aod.unwrap().azimuth - truth.aod.azimuth).abs() < 1e-6);
            assert!((e.gain - truth.gain).norm() < 1e-6 * truth.gain.norm());
            assert!(e.quality > 0.999);
        }
    }

    #[test]
    fn single_beam_leaves_departure_unresolved() {
        let s = two_path(4);
        let h = synthesize(&s).unwrap();
        let design = SignalDesign::uniform(vec![DVector::from_element(8, Complex64::new(1.0 / 8f64.sqrt(), 0.0))], &s.grid, 4, 1.0);
        let obs = observe(&h, &design, 0.0, 0).unwrap();
        let est = estimate_paths(&obs, &design, &s.tx, &s.rx, s.wavelength(), 1, 8).unwrap();
        assert!(est[0].aod.is_none());
        assert!(est[0].aoa.is_some());
    }

    #[test]
    fn rejects_frequency_selective_beams() {
        let s = two_path(2);
        let h = synthesize(&s).unwrap();
        let design = SignalDesign::random_beams(8, 4, &s.grid, 1.0, 1);
        let obs = observe(&h, &design, 0.0, 0).unwrap();
        assert!(estimate_paths(&obs, &design, &s.tx, &s.rx, s.wavelength(), 1, 8).is_err());
        let sweep = symbol_sweep(8, 4, &s.grid, 1.0, 1);
        assert!(estimate_paths(&obs, &sweep, &s.tx, &s.rx, s.wavelength(), 4, 8).is_err());
    }
}
