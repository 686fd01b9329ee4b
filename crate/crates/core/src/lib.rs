//! Geometric mmWave localization toolbox.
//!
//! The crate is organised around the life cycle of a localization study:
//!
//! - [`scenario`]: domain types (arrays, paths, RIS panels, spectral grid) and
//!   the structured-text configuration loader.
//! - [`channel`]: synthesis of the per-subcarrier, per-symbol MIMO channel,
//!   including near-field, non-stationary, wideband and RIS terms, hardware
//!   impairments and noisy observations.
//! - [`precoding`]: phase, true-time-delay and near-field focusing beams and
//!   array response maps.
//! - [`bounds`]: Fisher information in the channel and state domains, position
//!   and orientation error bounds, identifiability and a model-mismatch probe.
//! - [`design`]: OFDM power allocation for ranging under an ambiguity constraint.
//! - [`estimation`]: delay/angle ML estimators, geometric position solvers and
//!   carrier-phase ranging.
//! - [`tracking`]: extended Kalman filter for a moving user.

pub mod bounds;
pub mod channel;
pub mod design;
pub mod estimation;
pub mod linalg;
pub mod precoding;
pub mod scenario;
pub mod tracking;

pub use num_complex::Complex64;

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Power ratio to decibels. Zero maps to `-inf`.
pub fn to_db(power_ratio: f64) -> f64 {
    10.0 * power_ratio.log10()
}

/// Decibels to power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Umbrella error for front-ends that drive several modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("scenario: {0}")]
    Scenario(#[from] scenario::ScenarioError),
    #[error("channel: {0}")]
    Channel(#[from] channel::ChannelError),
    #[error("precoding: {0}")]
    Precoding(#[from] precoding::PrecodingError),
    #[error("bounds: {0}")]
    Bounds(#[from] bounds::BoundsError),
    #[error("design: {0}")]
    Design(#[from] design::DesignError),
    #[error("estimation: {0}")]
    Estimation(#[from] estimation::EstimationError),
    #[error("tracking: {0}")]
    Tracking(#[from] tracking::TrackingError),
}
