//! TOML scenario documents.
//!
//! ```toml
//! schema_version = 1
//!
//! [grid]
//! carrier_hz = 28e9
//! bandwidth_hz = 400e6          # or subcarrier_spacing_hz
//! n_subcarriers = 64
//! n_symbols = 1                 # default 1
//! # symbol_duration_s defaults to 1 / subcarrier spacing
//!
//! [tx]
//! position = [0.0, 0.0, 0.0]
//! orientation = [0.0, 0.0, 0.0] # roll, pitch, yaw [rad] or a 3x3 matrix
//! array = { kind = "single" }
//!
//! [rx]
//! position = [2.0, 2.0, 0.0]
//! velocity = [0.0, 0.0, 0.0]
//! array = { kind = "ula", count = 64, spacing_wavelengths = 0.5 }
//!
//! [[paths]]
//! kind = "los"
//!
//! [[paths]]
//! kind = "single_bounce"
//! incidence_point = [3.0, -1.0, 0.5]
//!
//! [clock]
//! bias_s = 0.0
//!
//! [noise]
//! psd_w_per_hz = 4e-21
//!
//! [flags]
//! near_field = true
//! ```
//!
//! Unknown keys anywhere in the document are rejected.

use nalgebra::{Matrix3, Rotation3, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    ArrayGeometry, ClockModel, GainPattern, ModelFlags, PathGeometry, PathKind, ProfileSet, RisPanel, Scenario, ScenarioError,
    SpectralGrid, DEFAULT_REFLECTION_LOSS,
};
use crate::SPEED_OF_LIGHT;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub grid: GridSection,
    pub tx: NodeSection,
    pub rx: NodeSection,
    #[serde(default)]
    pub paths: Vec<PathSection>,
    pub ris: Option<RisSection>,
    #[serde(default)]
    pub clock: ClockSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub flags: ModelFlags,
    pub impairments: Option<ImpairmentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: Option<f64>,
    pub bandwidth_hz: Option<f64>,
    pub n_subcarriers: usize,
    pub symbol_duration_s: Option<f64>,
    #[serde(default = "one")]
    pub n_symbols: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OrientationSpec {
    /// Roll, pitch, yaw [rad].
    Euler([f64; 3]),
    /// Rows of a local-to-global rotation matrix.
    Matrix([[f64; 3]; 3]),
}

impl Default for OrientationSpec {
    fn default() -> Self {
        OrientationSpec::Euler([0.0; 3])
    }
}

impl OrientationSpec {
    fn matrix(&self) -> Matrix3<f64> {
        match self {
            OrientationSpec::Euler([r, p, y]) => Rotation3::from_euler_angles(*r, *p, *y).into_inner(),
            OrientationSpec::Matrix(m) => Matrix3::from_fn(|i, j| m[i][j]),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArraySpec {
    Single,
    Ula {
        count: usize,
        spacing: Option<f64>,
        spacing_wavelengths: Option<f64>,
    },
    Upa {
        ny: usize,
        nz: usize,
        spacing: Option<f64>,
        spacing_wavelengths: Option<f64>,
    },
    Custom {
        offsets: Vec<[f64; 3]>,
    },
}

impl Default for ArraySpec {
    fn default() -> Self {
        ArraySpec::Single
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub position: [f64; 3],
    #[serde(default)]
    pub orientation: OrientationSpec,
    #[serde(default)]
    pub array: ArraySpec,
    #[serde(default)]
    pub pattern: GainPattern,
    pub velocity: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSection {
    Los,
    SingleBounce {
        incidence_point: [f64; 3],
        #[serde(default)]
        reflection_phase: f64,
        #[serde(default = "default_loss")]
        reflection_loss: f64,
    },
}

fn default_loss() -> f64 {
    DEFAULT_REFLECTION_LOSS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RisCodeSpec {
    /// Random-phase base profiles, each sent as a `+/-` pair.
    RandomPm { seed: u64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisSection {
    pub position: [f64; 3],
    #[serde(default)]
    pub orientation: OrientationSpec,
    pub array: ArraySpec,
    #[serde(default)]
    pub profile_set: ProfileSet,
    /// `profiles[k][m] = [re, im]`.
    pub profiles: Option<Vec<Vec<[f64; 2]>>>,
    pub code: Option<RisCodeSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    pub bias_s: f64,
    pub cfo_hz: f64,
    pub phase_noise_variance: f64,
    pub tx_chain_phase: f64,
    pub rx_chain_phase: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub psd_w_per_hz: f64,
}

/// Optional hardware-impairment block, consumed by the channel module.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSection {
    pub element_displacement_sigma: f64,
    pub phase_noise: f64,
    pub cfo: f64,
    pub timing_offset: f64,
    pub seed: u64,
}

fn field(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn spacing(name: &str, spacing: Option<f64>, in_wavelengths: Option<f64>, wavelength: f64) -> Result<f64, ScenarioError> {
    match (spacing, in_wavelengths) {
        (Some(s), None) => Ok(s),
        (None, Some(w)) => Ok(w * wavelength),
        (None, None) => Ok(0.5 * wavelength),
        (Some(_), Some(_)) => Err(field(name, "give either spacing or spacing_wavelengths, not both")),
    }
}

fn build_array(
    name: &str,
    position: &[f64; 3],
    orientation: &OrientationSpec,
    spec: &ArraySpec,
    pattern: GainPattern,
    wavelength: f64,
) -> Result<ArrayGeometry, ScenarioError> {
    let center = vec3(position);
    let rot = orientation.matrix();
    let offsets = match spec {
        ArraySpec::Single => vec![Vector3::zeros()],
        ArraySpec::Ula {
            count,
            spacing: s,
            spacing_wavelengths,
        } => {
            let d = spacing(&format!("{name}.array"), *s, *spacing_wavelengths, wavelength)?;
            ArrayGeometry::ula(center, Rotation3::identity(), *count, d).element_offsets
        }
        ArraySpec::Upa {
            ny,
            nz,
            spacing: s,
            spacing_wavelengths,
        } => {
            let d = spacing(&format!("{name}.array"), *s, *spacing_wavelengths, wavelength)?;
            ArrayGeometry::upa(center, Rotation3::identity(), *ny, *nz, d).element_offsets
        }
        ArraySpec::Custom { offsets } => offsets.iter().map(vec3).collect(),
    };
    ArrayGeometry::new(center, rot, offsets, pattern)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<SpectralGrid, ScenarioError> {
        let g = &self.grid;
        let df = match (g.subcarrier_spacing_hz, g.bandwidth_hz) {
            (Some(df), None) => df,
            (None, Some(w)) => w / g.n_subcarriers.max(1) as f64,
            _ => return Err(field("grid", "give exactly one of subcarrier_spacing_hz or bandwidth_hz")),
        };
        SpectralGrid::new(g.carrier_hz, df, g.n_subcarriers, g.symbol_duration_s.unwrap_or(1.0 / df), g.n_symbols)
    }

    pub fn to_scenario(&self) -> Result<Scenario, ScenarioError> {
        let grid = self.grid()?;
        let lambda = SPEED_OF_LIGHT / grid.carrier_hz;
        let tx = build_array("tx", &self.tx.position, &self.tx.orientation, &self.tx.array, self.tx.pattern, lambda)?;
        let rx = build_array("rx", &self.rx.position, &self.rx.orientation, &self.rx.array, self.rx.pattern, lambda)?;
        if self.tx.velocity.is_some() {
            return Err(field("tx.velocity", "only the receiver may move"));
        }
        let paths = self
            .paths
            .iter()
            .map(|p| match p {
                PathSection::Los => PathGeometry::los(),
                PathSection::SingleBounce {
                    incidence_point,
                    reflection_phase,
                    reflection_loss,
                } => PathGeometry {
                    kind: PathKind::SingleBounce {
                        incidence_point: vec3(incidence_point),
                    },
                    reflection_phase: *reflection_phase,
                    reflection_loss: *reflection_loss,
                },
            })
            .collect();
        let ris = match &self.ris {
            None => None,
            Some(r) => {
                let geometry = build_array("ris", &r.position, &r.orientation, &r.array, GainPattern::Isotropic, lambda)?;
                Some(match (&r.profiles, &r.code) {
                    (Some(p), None) => RisPanel {
                        geometry,
                        profile_set: r.profile_set,
                        profiles: p
                            .iter()
                            .map(|row| row.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
                            .collect(),
                    },
                    (None, Some(RisCodeSpec::RandomPm { seed })) => {
                        if grid.n_symbols % 2 != 0 {
                            return Err(field("ris.code", "a +/- code needs an even number of symbols"));
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        RisPanel::random_pm_code(geometry, grid.n_symbols, &mut rng)
                    }
                    _ => return Err(field("ris", "give exactly one of profiles or code")),
                })
            }
        };
        let c = &self.clock;
        let scenario = Scenario {
            tx,
            rx,
            paths,
            ris,
            grid,
            clock: ClockModel {
                bias_s: c.bias_s,
                cfo_hz: c.cfo_hz,
                phase_noise_variance: c.phase_noise_variance,
                tx_chain_phase: c.tx_chain_phase,
                rx_chain_phase: c.rx_chain_phase,
            },
            rx_velocity: self.rx.velocity.as_ref().map(vec3).unwrap_or_else(Vector3::zeros),
            noise_psd: self.noise.psd_w_per_hz,
            flags: self.flags,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    ScenarioConfig::parse(text)?.to_scenario()
}
