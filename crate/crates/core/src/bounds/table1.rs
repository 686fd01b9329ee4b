//! Minimal-configuration sweep over deployments and measurement types.
//!
//! Every cell is checked on random generic geometries: the stated minimal
//! configuration must be identifiable and every smaller configuration along
//! the cell's increment axis must not be.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;

use super::{channel_fim, joint_state_fim, BoundsError, FimOptions, FimReport, Verdict};
use crate::channel::SignalDesign;
use crate::scenario::{ArrayGeometry, PathGeometry, ProfileSet, RisPanel, Scenario, SpectralGrid};
use crate::SPEED_OF_LIGHT;
use num_complex::Complex64;

pub const TABLE1_SEED: u64 = 0x7AB1E1;

const CARRIER_HZ: f64 = 28e9;
const BANDWIDTH_HZ: f64 = 400e6;
const SUBCARRIERS: usize = 16;
const SYMBOLS: usize = 16;
const MAX_ELEVATION: f64 = 80.0 * PI / 180.0;
/// Largest angle between a seen direction and a panel normal.
const MAX_OFF_BROADSIDE: f64 = 80.0 * PI / 180.0;
const MIN_SEPARATION_M: f64 = 1.0;
const NOISE_PSD: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MeasurementKind {
    AngleOnly,
    AngleDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArrayConfig {
    Siso,
    Mimo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Deployment {
    BsOnly,
    BsMultipath,
    BsMultipathNoLos,
    BsRis,
}

impl Deployment {
    pub const ALL: [Deployment; 4] = [Deployment::BsOnly, Deployment::BsMultipath, Deployment::BsMultipathNoLos, Deployment::BsRis];

    pub fn label(&self) -> &'static str {
        match self {
            Deployment::BsOnly => "BS only",
            Deployment::BsMultipath => "BS + multipath",
            Deployment::BsMultipathNoLos => "BS + multipath, no LOS",
            Deployment::BsRis => "BS + RIS",
        }
    }

    fn los(&self) -> bool {
        *self != Deployment::BsMultipathNoLos
    }
}

pub const COLUMNS: [(MeasurementKind, ArrayConfig); 4] = [
    (MeasurementKind::AngleOnly, ArrayConfig::Siso),
    (MeasurementKind::AngleOnly, ArrayConfig::Mimo),
    (MeasurementKind::AngleDelay, ArrayConfig::Siso),
    (MeasurementKind::AngleDelay, ArrayConfig::Mimo),
];

pub fn column_label(m: MeasurementKind, a: ArrayConfig) -> &'static str {
    match (m, a) {
        (MeasurementKind::AngleOnly, ArrayConfig::Siso) => "Angle-only SISO",
        (MeasurementKind::AngleOnly, ArrayConfig::Mimo) => "Angle-only MIMO",
        (MeasurementKind::AngleDelay, ArrayConfig::Siso) => "Angle & delay SISO",
        (MeasurementKind::AngleDelay, ArrayConfig::Mimo) => "Angle & delay MIMO",
    }
}

/// Number of base stations, incidence points per base station and RIS panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellConfig {
    pub n_bs: usize,
    pub ips_per_bs: usize,
    pub n_ris: usize,
    pub los: bool,
}

impl std::fmt::Display for CellConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} BS", self.n_bs)?;
        if self.ips_per_bs > 0 {
            if self.n_bs == 1 {
                write!(f, ", {} IP", self.ips_per_bs)?;
            } else {
                write!(f, " ({} IP each)", self.ips_per_bs)?;
            }
        }
        if self.n_ris > 0 {
            write!(f, ", {} RIS", self.n_ris)?;
        }
        if !self.los {
            write!(f, ", no LOS")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Expected {
    NotApplicable,
    NotIdentifiable,
    Minimal(CellConfig),
}

impl std::fmt::Display for Expected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expected::NotApplicable => f.write_str("not applicable"),
            Expected::NotIdentifiable => f.write_str("not identifiable"),
            Expected::Minimal(c) => write!(f, "{c}"),
        }
    }
}

fn cfg(n_bs: usize, ips_per_bs: usize, n_ris: usize, los: bool) -> CellConfig {
    CellConfig { n_bs, ips_per_bs, n_ris, los }
}

/// Reference verdict of each cell.
pub fn expected_cell(row: Deployment, m: MeasurementKind, a: ArrayConfig) -> Expected {
    use ArrayConfig::*;
    use Deployment::*;
    use MeasurementKind::*;
    match (row, m, a) {
        (BsOnly | BsMultipath | BsMultipathNoLos, AngleOnly, Siso) => Expected::NotApplicable,
        (BsOnly, AngleOnly, Mimo) => Expected::Minimal(cfg(2, 0, 0, true)),
        (BsOnly, AngleDelay, Siso) => Expected::Minimal(cfg(4, 0, 0, true)),
        (BsOnly, AngleDelay, Mimo) => Expected::Minimal(cfg(2, 0, 0, true)),
        (BsMultipath, AngleOnly, Mimo) => Expected::Minimal(cfg(2, 1, 0, true)),
        (BsMultipath, AngleDelay, Siso) => Expected::Minimal(cfg(4, 1, 0, true)),
        (BsMultipath, AngleDelay, Mimo) => Expected::Minimal(cfg(1, 1, 0, true)),
        (BsMultipathNoLos, AngleOnly, Mimo) | (BsMultipathNoLos, AngleDelay, Siso) => Expected::NotIdentifiable,
        (BsMultipathNoLos, AngleDelay, Mimo) => Expected::Minimal(cfg(1, 4, 0, false)),
        (BsRis, AngleOnly, Siso) => Expected::Minimal(cfg(1, 0, 2, true)),
        (BsRis, _, _) => Expected::Minimal(cfg(1, 0, 1, true)),
    }
}

/// Configurations evaluated for a cell, smallest first.
pub fn increment_sequence(row: Deployment, expected: &Expected) -> Vec<CellConfig> {
    let los = row.los();
    match expected {
        Expected::NotApplicable => {
            let ips = usize::from(row != Deployment::BsOnly);
            (1..=4).map(|b| cfg(b, ips, 0, los)).collect()
        }
        Expected::NotIdentifiable => (1..=8).map(|k| cfg(1, k, 0, los)).collect(),
        Expected::Minimal(c) if c.n_ris > 0 => (0..=c.n_ris).map(|r| cfg(1, 0, r, los)).collect(),
        Expected::Minimal(c) if c.n_bs > 1 => (1..=c.n_bs).map(|b| cfg(b, c.ips_per_bs, 0, los)).collect(),
        Expected::Minimal(c) => {
            let start = usize::from(!los);
            (start..=c.ips_per_bs).map(|k| cfg(1, k, 0, los)).collect()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub deployment: Deployment,
    pub measurement: MeasurementKind,
    pub array: ArrayConfig,
    pub expected: Expected,
    /// Verdicts per evaluated configuration, one per draw.
    pub evaluations: Vec<(CellConfig, Vec<Verdict>)>,
    /// First identifiable configuration along the increment axis when all draws agree.
    pub minimal_found: Option<CellConfig>,
    pub disagreements: Vec<String>,
}

impl CellResult {
    pub fn agrees(&self) -> bool {
        self.disagreements.is_empty()
    }

    pub fn row_label(&self) -> &'static str {
        self.deployment.label()
    }

    pub fn column_label(&self) -> &'static str {
        column_label(self.measurement, self.array)
    }
}

fn random_rotation_facing<R: Rng>(from: &Vector3<f64>, to: &Vector3<f64>, jitter: f64, rng: &mut R) -> Rotation3<f64> {
    let d = to - from;
    let yaw = d.y.atan2(d.x) + rng.random_range(-jitter..jitter);
    let pitch = -(d.z.atan2(d.x.hypot(d.y))) + rng.random_range(-jitter..jitter) * 0.5;
    let roll = rng.random_range(-jitter..jitter) * 0.3;
    Rotation3::from_euler_angles(roll, pitch, yaw)
}

fn upa(center: Vector3<f64>, orientation: Rotation3<f64>) -> ArrayGeometry {
    ArrayGeometry::upa(center, orientation, 4, 4, SPEED_OF_LIGHT / CARRIER_HZ / 2.0)
}

fn generic<R: Rng>(rng: &mut R, lo: [f64; 3], hi: [f64; 3]) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1]), rng.random_range(lo[2]..hi[2]))
}

/// Draws one generic geometry for a configuration; one link per base station
/// and one extra link per RIS panel (served by the first base station).
pub fn random_links<R: Rng>(config: &CellConfig, m: MeasurementKind, a: ArrayConfig, rng: &mut R) -> Vec<Scenario> {
    let n = if m == MeasurementKind::AngleDelay { SUBCARRIERS } else { 1 };
    let grid = SpectralGrid::with_bandwidth(CARRIER_HZ, BANDWIDTH_HZ, n, SYMBOLS).expect("valid grid");
    loop {
        let ue = generic(rng, [-5.0, -5.0, 1.0], [5.0, 5.0, 2.0]);
        let ue_rot = Rotation3::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-PI..PI));
        let rx = match a {
            ArrayConfig::Siso => ArrayGeometry::single(ue),
            ArrayConfig::Mimo => upa(ue, ue_rot),
        };
        let mut points = vec![ue];
        let mut links = Vec::new();
        for _ in 0..config.n_bs {
            let r = rng.random_range(10.0..30.0);
            let phi = rng.random_range(-PI..PI);
            let bs = Vector3::new(ue.x + r * phi.cos(), ue.y + r * phi.sin(), rng.random_range(5.0..10.0));
            let rot = random_rotation_facing(&bs, &ue, 0.4, rng);
            let tx = match a {
                ArrayConfig::Siso => ArrayGeometry::single(bs),
                ArrayConfig::Mimo => upa(bs, rot),
            };
            let mut s = Scenario::los(tx, rx.clone(), grid.clone());
            if !config.los {
                s.paths.clear();
            }
            for _ in 0..config.ips_per_bs {
                let ip = generic(rng, [-20.0, -20.0, 0.5], [20.0, 20.0, 8.0]);
                points.push(ip);
                s.paths.push(PathGeometry::single_bounce(ip));
            }
            points.push(bs);
            links.push(s);
        }
        for _ in 0..config.n_ris {
            let r = rng.random_range(5.0..15.0);
            let phi = rng.random_range(-PI..PI);
            let pos = Vector3::new(ue.x + r * phi.cos(), ue.y + r * phi.sin(), rng.random_range(2.0..4.0));
            let rot = random_rotation_facing(&pos, &ue, 0.4, rng);
            let geom = upa(pos, rot);
            let m = geom.num_elements();
            let profiles: Vec<Vec<Complex64>> = (0..SYMBOLS)
                .map(|_| (0..m).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))).collect())
                .collect();
            let mut s = Scenario::los(links[0].tx.clone(), rx.clone(), grid.clone());
            s.paths.clear();
            s.ris = Some(RisPanel {
                geometry: geom,
                profile_set: ProfileSet::Continuous,
                profiles,
            });
            points.push(pos);
            links.push(s);
        }
        if is_generic(&links, &points) {
            return links;
        }
    }
}

fn is_generic(links: &[Scenario], points: &[Vector3<f64>]) -> bool {
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if (a - b).norm() < MIN_SEPARATION_M {
                return false;
            }
        }
    }
    // Multi-element panels only see their front half-space, away from endfire.
    let ok = |arr: &ArrayGeometry, target: &Vector3<f64>| {
        arr.direction_toward(target).elevation.abs() <= MAX_ELEVATION
            && (arr.num_elements() == 1 || arr.local_unit_toward(target).x >= MAX_OFF_BROADSIDE.cos())
    };
    for s in links {
        for p in &s.paths {
            let (src, dst) = match p.incidence_point() {
                Some(ip) => (ip, ip),
                None => (s.tx.center, s.rx.center),
            };
            if !ok(&s.rx, &src) || !ok(&s.tx, &dst) {
                return false;
            }
        }
        if let Some(ris) = &s.ris {
            if !ok(&s.rx, &ris.geometry.center) || !ok(&ris.geometry, &s.rx.center) || !ok(&ris.geometry, &s.tx.center) {
                return false;
            }
        }
    }
    true
}

/// State report for a set of links with random beams on every link.
pub fn evaluate_config(links: &[Scenario], seed: u64) -> Result<FimReport, BoundsError> {
    let mut with_fim = Vec::with_capacity(links.len());
    for (j, s) in links.iter().enumerate() {
        let signal = SignalDesign::random_beams(s.tx.num_elements(), s.rx.num_elements(), &s.grid, 1.0, seed.wrapping_add(j as u64));
        let fim = channel_fim(s, &signal, NOISE_PSD, &FimOptions::default())?;
        with_fim.push((s.clone(), fim));
    }
    joint_state_fim(&with_fim)
}

fn describe(links: &[Scenario]) -> String {
    let ue = links[0].rx.center;
    let bs: Vec<String> = links.iter().map(|s| format!("{:.2?}", s.tx.center.as_slice())).collect();
    let ips: Vec<String> = links
        .iter()
        .flat_map(|s| s.paths.iter().filter_map(|p| p.incidence_point()))
        .map(|p| format!("{:.2?}", p.as_slice()))
        .collect();
    let ris: Vec<String> = links
        .iter()
        .filter_map(|s| s.ris.as_ref())
        .map(|r| format!("{:.2?}", r.geometry.center.as_slice()))
        .collect();
    format!("ue={:.2?} tx={:?} ip={:?} ris={:?}", ue.as_slice(), bs, ips, ris)
}

fn run_cell(row: Deployment, m: MeasurementKind, a: ArrayConfig, draws: usize, seed: u64) -> Result<CellResult, BoundsError> {
    let expected = expected_cell(row, m, a);
    let sequence = increment_sequence(row, &expected);
    let mut evaluations: Vec<(CellConfig, Vec<Verdict>)> = sequence.iter().map(|c| (*c, Vec::with_capacity(draws))).collect();
    let mut disagreements = Vec::new();
    let mut minima = Vec::with_capacity(draws);
    for draw in 0..draws {
        let mut first_identifiable = None;
        for (ci, config) in sequence.iter().enumerate() {
            let cell_seed = seed ^ ((row as u64) << 40) ^ ((m as u64) << 36) ^ ((a as u64) << 32) ^ ((ci as u64) << 16) ^ draw as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
            let links = random_links(config, m, a, &mut rng);
            let verdict = evaluate_config(&links, cell_seed)?.verdict();
            evaluations[ci].1.push(verdict);
            if verdict == Verdict::Identifiable && first_identifiable.is_none() {
                first_identifiable = Some(*config);
            }
            let want = match expected {
                Expected::NotApplicable => Verdict::NotApplicable,
                Expected::NotIdentifiable => Verdict::NotIdentifiable,
                Expected::Minimal(c) if *config == c => Verdict::Identifiable,
                Expected::Minimal(_) => Verdict::NotIdentifiable,
            };
            // Below the minimal configuration a model without information on
            // the user state also counts as not identifiable.
            let agrees = verdict == want || (want == Verdict::NotIdentifiable && verdict == Verdict::NotApplicable && matches!(expected, Expected::Minimal(_)));
            if !agrees {
                disagreements.push(format!(
                    "{} / {}: {config} draw {draw} gave {verdict}, expected {want}; {}",
                    row.label(),
                    column_label(m, a),
                    describe(&links)
                ));
            }
        }
        minima.push(first_identifiable);
    }
    let minimal_found = match minima.first() {
        Some(first) if minima.iter().all(|x| x == first) => *first,
        _ => None,
    };
    Ok(CellResult {
        deployment: row,
        measurement: m,
        array: a,
        expected,
        evaluations,
        minimal_found,
        disagreements,
    })
}

/// Evaluates every cell on `draws` random geometries.
pub fn table1_sweep(draws: usize, seed: u64) -> Result<Vec<CellResult>, BoundsError> {
    let cells: Vec<(Deployment, MeasurementKind, ArrayConfig)> = Deployment::ALL
        .iter()
        .flat_map(|r| COLUMNS.iter().map(move |(m, a)| (*r, *m, *a)))
        .collect();
    cells.par_iter().map(|(r, m, a)| run_cell(*r, *m, *a, draws, seed)).collect()
}

/// One row per cell with the reference verdict, the observed verdict at the
/// stated configuration, the minimal configuration found and the number of
/// disagreements.
pub fn write_table1_csv<W: Write>(results: &[CellResult], w: W) -> Result<(), BoundsError> {
    let err = |e: csv::Error| BoundsError::Export(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "column", "expected", "observed", "minimal_found", "draws", "disagreements"])
        .map_err(err)?;
    for c in results {
        let observed = match c.expected {
            Expected::Minimal(cfg) => c
                .evaluations
                .iter()
                .find(|(x, _)| *x == cfg)
                .map(|(_, v)| summarize(v))
                .unwrap_or_default(),
            _ => {
                let all: Vec<Verdict> = c.evaluations.iter().flat_map(|(_, v)| v.iter().copied()).collect();
                summarize(&all)
            }
        };
        let draws = c.evaluations.first().map_or(0, |(_, v)| v.len());
        out.write_record([
            c.row_label().to_string(),
            c.column_label().to_string(),
            c.expected.to_string(),
            observed,
            c.minimal_found.map_or("none".to_string(), |m| m.to_string()),
            draws.to_string(),
            c.disagreements.len().to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| BoundsError::Export(e.to_string()))
}

fn summarize(v: &[Verdict]) -> String {
    match v.first() {
        Some(first) if v.iter().all(|x| x == first) => first.to_string(),
        Some(_) => "mixed".to_string(),
        None => String::new(),
    }
}
