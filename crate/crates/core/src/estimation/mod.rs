//! Channel-parameter estimators, geometric position solvers and
//! carrier-phase ranging.

mod carrier;
mod io;
mod ml;
mod paths;
mod ris;
mod solver;

pub use carrier::{carrier_phase_range, CarrierRange};
pub use io::{read_measurements_csv, write_measurements_csv};
pub use ml::{estimate_angle_range, estimate_angles, estimate_delay, AngleEstimate, AngleGrid, DelayEstimate, NearFieldEstimate};
pub use paths::{estimate_paths, symbol_sweep, PathEstimate};
pub use ris::{ris_fix, RisFix, RisFixOptions};
pub use solver::{measurements_from_scenario, multipath_fix, multipath_fix_weighted, perturb_measurements, FixOptions, FixResult, PathMeasurement, PathType};

use crate::bounds::{BoundsError, Verdict};
use crate::channel::ChannelError;
use crate::design::DesignError;
use crate::scenario::ScenarioError;

#[derive(Debug, thiserror::Error)]
pub enum EstimationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("the measurements do not determine the user state ({verdict}, null space of dimension {null_dim})")]
    NotIdentifiable { verdict: Verdict, null_dim: usize },
    #[error("cannot separate the RIS path: {0}")]
    SeparationImpossible(String),
    #[error("the coarse range window spans {candidates} wavelengths (limit 100)")]
    AmbiguityTooWide { candidates: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("measurement file: {0}")]
    Io(String),
}

/// Coordinate-wise pattern search for a maximum. Steps halve when no move
/// improves; stops once every step is below `steps * min_ratio`.
pub(crate) fn compass_max<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], steps: &[f64], min_ratio: f64) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut best = f(&x);
    let mut step = steps.to_vec();
    let mut evals = 0usize;
    while step.iter().zip(steps).any(|(s, s0)| *s > s0 * min_ratio) && evals < 200_000 {
        let mut improved = false;
        for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] += sign * step[d];
                let v = f(&y);
                evals += 1;
                if v > best {
                    best = v;
                    x = y;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s /= 2.0);
        }
    }
    (x, best)
}
