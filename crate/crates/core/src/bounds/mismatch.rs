//! Pseudo-true parameters of a far-field fit to responses from another model.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{mean_and_jacobian, BoundsError, ChannelParameters, FimOptions, ParamLayout};
use crate::channel::{observe, synthesize, SignalDesign};
use crate::scenario::{ArrayGeometry, Scenario};

/// Search grid centred on the true parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGrid {
    /// Half-width of the delay axis [s].
    pub delay_half_width: f64,
    /// Half-width of each angle axis [rad].
    pub angle_half_width: f64,
    /// Points per axis (odd, so the truth lies on the grid).
    pub points: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            delay_half_width: 1e-9,
            angle_half_width: 0.02,
            points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MismatchProbe {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub pseudo_true: Vec<f64>,
    pub bias: Vec<f64>,
    /// Residual energy of the best fit relative to the response energy.
    pub relative_residual: f64,
}

const MAX_FREE: usize = 3;

fn has_extent(arr: &ArrayGeometry, axis: usize) -> bool {
    arr.element_offsets.iter().any(|o| o[axis].abs() > 1e-12)
}

/// Indices (into the full parameter vector) of the parameters the probe adjusts.
fn free_parameters(s: &Scenario, layout: &ParamLayout) -> Vec<usize> {
    let mut out = Vec::new();
    for b in 0..layout.blocks() {
        let o = b * layout.block_len();
        if s.grid.n_subcarriers > 1 {
            out.push(o);
        }
        if s.rx.num_elements() > 1 {
            out.push(o + 1);
            if has_extent(&s.rx, 2) {
                out.push(o + 2);
            }
        }
        let dep = if b < layout.paths { Some(&s.tx) } else { s.ris.as_ref().map(|r| &r.geometry) };
        if let Some(arr) = dep.filter(|a| a.num_elements() > 1) {
            out.push(o + 3);
            if has_extent(arr, 2) {
                out.push(o + 4);
            }
        }
    }
    out
}

struct Fit<'a> {
    scenario: &'a Scenario,
    signal: &'a SignalDesign,
    layout: ParamLayout,
    base: ChannelParameters,
    target: DVector<Complex64>,
    free: Vec<usize>,
}

impl Fit<'_> {
    /// Residual after the least-squares fit of the complex gains.
    fn residual(&self, x: &[f64]) -> Result<f64, BoundsError> {
        let mut v = self.base.to_vector(&self.layout);
        for (i, idx) in self.free.iter().enumerate() {
            v[*idx] = x[i];
        }
        let p = self.base.with_vector(&self.layout, &v);
        let blocks = self.layout.blocks();
        let mut cols = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let mut q = p.clone();
            for (j, blk) in q.blocks.iter_mut().enumerate() {
                blk.gain = if j == b { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            }
            cols.push(mean_and_jacobian(self.scenario, self.signal, &q, &self.layout, false)?.0);
        }
        let m = DMatrix::from_columns(&cols);
        let gram = m.adjoint() * &m;
        let rhs = m.adjoint() * &self.target;
        let gains = gram.lu().solve(&rhs).ok_or_else(|| BoundsError::SingularInput("fit model has no response".into()))?;
        Ok((&self.target - m * gains).norm_squared())
    }
}

/// Fits the far-field model of `fit` to the noiseless response of `truth`
/// and reports the pseudo-true parameters and their bias.
pub fn mismatch_bias_probe(truth: &Scenario, fit: &Scenario, signal: &SignalDesign, grid: &ProbeGrid) -> Result<MismatchProbe, BoundsError> {
    truth.validate()?;
    fit.validate()?;
    if truth.paths.len() != fit.paths.len() || truth.ris.is_some() != fit.ris.is_some() {
        return Err(BoundsError::InconsistentLinks("truth and fit models differ in structure".into()));
    }
    if grid.points < 3 || grid.points % 2 == 0 {
        return Err(BoundsError::Resolution("the probe grid needs an odd number of at least 3 points".into()));
    }
    let layout = ParamLayout::for_scenario(fit, &FimOptions::default());
    let base = ChannelParameters::from_scenario(fit)?;
    let truth_params = ChannelParameters::from_scenario(truth)?;
    let target = if truth.flags == Default::default() {
        mean_and_jacobian(truth, signal, &truth_params, &layout, false)?.0
    } else {
        let obs = observe(&synthesize(truth)?, signal, 0.0, 0)?;
        DVector::from_iterator(obs.samples().len() * obs.outputs(), obs.samples().iter().flat_map(|v| v.iter().copied()))
    };
    let energy = target.norm_squared();
    if energy == 0.0 {
        return Err(BoundsError::SingularInput("truth response is zero".into()));
    }
    let free = free_parameters(fit, &layout);
    if free.is_empty() || free.len() > MAX_FREE {
        return Err(BoundsError::UnsupportedModel(format!("{} free parameters; the probe handles 1 to {MAX_FREE}", free.len())));
    }
    let truth_vec = truth_params.to_vector(&layout);
    let centre: Vec<f64> = free.iter().map(|i| truth_vec[*i]).collect();
    let half: Vec<f64> = free
        .iter()
        .map(|i| if i % layout.block_len() == 0 { grid.delay_half_width } else { grid.angle_half_width })
        .collect();
    let fitter = Fit {
        scenario: fit,
        signal,
        layout,
        base: ChannelParameters {
            blocks: base.blocks.clone(),
            ris: base.ris,
        },
        target,
        free: free.clone(),
    };
    let steps: Vec<f64> = half.iter().map(|h| 2.0 * h / (grid.points - 1) as f64).collect();
    let axis = |d: usize, j: usize| centre[d] - half[d] + steps[d] * j as f64;
    // Exhaustive search over the product grid.
    let dims = free.len();
    let total = grid.points.pow(dims as u32);
    let mid = (grid.points - 1) / 2;
    let mut best = (fitter.residual(&centre)?, vec![mid; dims]);
    let margin = 1e-12 * energy;
    for flat in 0..total {
        let mut idx = vec![0usize; dims];
        let mut rem = flat;
        for d in 0..dims {
            idx[d] = rem % grid.points;
            rem /= grid.points;
        }
        let x: Vec<f64> = idx.iter().enumerate().map(|(d, j)| if *j == (grid.points - 1) / 2 { centre[d] } else { axis(d, *j) }).collect();
        let r = fitter.residual(&x)?;
        if r < best.0 - margin {
            best = (r, idx);
        }
    }
    if let Some(d) = best.1.iter().position(|j| *j == 0 || *j == grid.points - 1) {
        return Err(BoundsError::Resolution(format!(
            "best fit on the boundary of axis {} ({}); widen the grid",
            d,
            layout.names()[free[d]]
        )));
    }
    let mut x: Vec<f64> = best.1.iter().enumerate().map(|(d, j)| if *j == (grid.points - 1) / 2 { centre[d] } else { axis(d, *j) }).collect();
    let mut value = best.0;
    // Compass search below the grid spacing.
    let exact = 1e-24 * energy;
    let mut step: Vec<f64> = steps.iter().map(|s| s / 2.0).collect();
    while value > exact && step.iter().zip(&steps).any(|(s, g)| *s > g * 1e-7) {
        let mut improved = false;
        for d in 0..dims {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] += sign * step[d];
                let r = fitter.residual(&y)?;
                if r < value - 1e-15 * energy {
                    x = y;
                    value = r;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s /= 2.0;
            }
        }
    }
    let names = free.iter().map(|i| layout.names()[*i].clone()).collect();
    let bias = x.iter().zip(&centre).map(|(a, b)| a - b).collect();
    Ok(MismatchProbe {
        names,
        truth: centre,
        pseudo_true: x,
        bias,
        relative_residual: value / energy,
    })
}
