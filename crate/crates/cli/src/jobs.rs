//! Config-driven subcommands. Each job file is TOML; jobs that need a
//! geometry embed a full scenario document under `[scenario]`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mmloc::bounds::{channel_fim, state_fim, table1_sweep, write_table1_csv, FimOptions, TABLE1_SEED};
use mmloc::channel::{io as chio, observe, synthesize, synthesize_impaired, ImpairmentSpec, Observations, SignalDesign};
use mmloc::design::{
    profile_metrics, range_profile, ranging_study, write_allocations_csv, write_profiles_csv, DesignSpace, PowerAllocation, PriorRegion,
    RangingSetup,
};
use mmloc::estimation::{
    estimate_paths, multipath_fix, read_measurements_csv, ris_fix, symbol_sweep, write_measurements_csv, FixOptions, PathMeasurement,
    PathType, RisFixOptions,
};
use mmloc::precoding::{linspace, logspace, make_precoder, response_map, BeamTarget, PrecoderKind, ResponseGrid};
use mmloc::scenario::{Direction, Scenario, ScenarioConfig, SpectralGrid};
use mmloc::tracking::{tracking_run, tracking_study, write_trajectory_csv, MotionModel, TrackingSetup};
use mmloc::{from_db, SPEED_OF_LIGHT};

use crate::manifest::{sha256_hex, InputFile, OutputSet};
use crate::{fail, Failure};

fn parse<T: DeserializeOwned>(text: &str) -> Result<T, Failure> {
    toml::from_str(text).map_err(|e| Failure::config(format!("config: {e}")))
}

fn load(table: &toml::Table) -> Result<(ScenarioConfig, Scenario), Failure> {
    let text = toml::to_string(table).map_err(|e| Failure::config(format!("config: {e}")))?;
    let cfg = ScenarioConfig::parse(&text).map_err(fail)?;
    let s = cfg.to_scenario().map_err(fail)?;
    Ok((cfg, s))
}

fn csv_bytes<E: Into<mmloc::Error>>(f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(fail)?;
    Ok(buf)
}

fn write_observations(obs: &Observations, grid: &SpectralGrid) -> Result<Vec<u8>, Failure> {
    let err = |e: csv::Error| Failure::numerical(format!("observation export: {e}"));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["subcarrier", "symbol", "output", "re", "im"]).map_err(err)?;
    for i in 0..grid.n_subcarriers {
        for k in 0..grid.n_symbols {
            for (o, v) in obs.get(i, k).iter().enumerate() {
                w.write_record([
                    grid.subcarrier_index(i).to_string(),
                    k.to_string(),
                    o.to_string(),
                    format!("{:e}", v.re),
                    format!("{:e}", v.im),
                ])
                .map_err(err)?;
            }
        }
    }
    w.into_inner().map_err(|e| Failure::numerical(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthJob {
    scenario: toml::Table,
    observe: Option<ObserveSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObserveSection {
    total_power_w: f64,
}

pub fn synth(text: &str, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: SynthJob = parse(text)?;
    let (cfg, s) = load(&job.scenario)?;
    let seed = seed.unwrap_or(0);
    let h = match &cfg.impairments {
        Some(i) => {
            let spec = ImpairmentSpec {
                element_displacement_sigma: i.element_displacement_sigma,
                phase_noise: i.phase_noise,
                cfo: i.cfo,
                timing_offset: i.timing_offset,
                seed: i.seed,
            };
            synthesize_impaired(&s, &spec).map_err(fail)?
        }
        None => synthesize(&s).map_err(fail)?,
    };
    let mut bin = Vec::new();
    chio::write_binary(&h, &mut bin).map_err(fail)?;
    out.add("channel.bin", bin);
    out.add("channel.csv", csv_bytes(|b| chio::write_csv(&h, b))?);
    if let Some(o) = job.observe {
        let design = SignalDesign::random_beams(s.tx.num_elements(), s.rx.num_elements(), &s.grid, o.total_power_w, seed);
        let obs = observe(&h, &design, s.noise_psd, seed).map_err(fail)?;
        out.add("observations.csv", write_observations(&obs, &s.grid)?);
    }
    Ok(seed)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeamSection {
    kind: PrecoderKind,
    azimuth_rad: f64,
    #[serde(default)]
    elevation_rad: f64,
    focus_distance_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SubcarrierSelection {
    #[default]
    Center,
    Edges,
    All,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AxesSection {
    n_azimuths: usize,
    distance_min_m: f64,
    distance_max_m: f64,
    n_distances: usize,
    subcarriers: SubcarrierSelection,
}

impl Default for AxesSection {
    fn default() -> Self {
        Self {
            n_azimuths: 721,
            distance_min_m: 0.5,
            distance_max_m: 100.0,
            n_distances: 200,
            subcarriers: SubcarrierSelection::Center,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapJob {
    scenario: toml::Table,
    beam: BeamSection,
    #[serde(default)]
    axes: AxesSection,
}

pub fn response_map_job(text: &str, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: MapJob = parse(text)?;
    let (_, s) = load(&job.scenario)?;
    let direction = Direction::new(job.beam.azimuth_rad, job.beam.elevation_rad);
    let target = match job.beam.focus_distance_m {
        Some(d) => BeamTarget::focused(direction, d),
        None => BeamTarget::toward(direction),
    };
    let p = make_precoder(&s.tx, job.beam.kind, target, &s.grid).map_err(fail)?;
    let n = s.grid.n_subcarriers;
    let a = &job.axes;
    if a.n_azimuths == 0 || a.n_distances == 0 || !(a.distance_min_m > 0.0 && a.distance_max_m >= a.distance_min_m) {
        return Err(Failure::config("axes: need at least one azimuth and distance, with 0 < distance_min_m <= distance_max_m"));
    }
    let rg = ResponseGrid {
        azimuths: linspace(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, a.n_azimuths),
        elevation: job.beam.elevation_rad,
        distances: logspace(a.distance_min_m, a.distance_max_m, a.n_distances),
        subcarriers: match a.subcarriers {
            SubcarrierSelection::Center => vec![n / 2],
            SubcarrierSelection::Edges => vec![0, n / 2, n - 1],
            SubcarrierSelection::All => (0..n).collect(),
        },
    };
    let m = response_map(&s.tx, &p, &rg, &s.grid, &s.flags).map_err(fail)?;
    out.add("response_map.csv", csv_bytes(|b| m.write_csv(b, &s.grid))?);
    Ok(0)
}


#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SignalSection {
    total_power_w: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self { total_power_w: 1.0 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FimJob {
    scenario: toml::Table,
    signal: SignalSection,
    doppler: bool,
}

#[derive(Serialize)]
struct FimSummary {
    verdict: String,
    peb_m: Option<f64>,
    oeb_rad: Option<f64>,
    null_space_dim: usize,
    state_names: Vec<String>,
    normalized_eigenvalues: Vec<f64>,
    fim_state: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn fim(text: &str, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: FimJob = parse(text)?;
    let (_, s) = load(&job.scenario)?;
    let seed = seed.unwrap_or(0);
    let design = SignalDesign::random_beams(s.tx.num_elements(), s.rx.num_elements(), &s.grid, job.signal.total_power_w, seed);
    let opts = FimOptions {
        include_doppler: job.doppler,
        ..Default::default()
    };
    let chan = channel_fim(&s, &design, s.noise_psd, &opts).map_err(fail)?;
    let report = state_fim(&s, &chan).map_err(fail)?;
    out.add_json(
        "fim.json",
        &FimSummary {
            verdict: report.verdict().to_string(),
            peb_m: finite(report.peb),
            oeb_rad: report.oeb.and_then(finite),
            null_space_dim: report.null_space_dim,
            state_names: report.state.names(),
            normalized_eigenvalues: report.normalized_eigenvalues.clone(),
            fim_state: rows(&report.fim_state),
        },
    )?;
    Ok(seed)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Table1Job {
    draws: usize,
}

impl Default for Table1Job {
    fn default() -> Self {
        Self { draws: 10 }
    }
}

pub fn table1(text: Option<&str>, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: Table1Job = match text {
        Some(t) => parse(t)?,
        None => Table1Job::default(),
    };
    table1_outputs(job.draws, seed.unwrap_or(TABLE1_SEED), out)
}

pub fn table1_outputs(draws: usize, seed: u64, out: &mut OutputSet) -> Result<u64, Failure> {
    if draws == 0 {
        return Err(Failure::config("draws must be at least 1"));
    }
    let results = table1_sweep(draws, seed).map_err(fail)?;
    out.add("table1.csv", csv_bytes(|b| write_table1_csv(&results, b))?);
    out.add_json("table1.json", &results)?;
    let disagreements: Vec<String> = results.iter().flat_map(|c| c.disagreements.iter().cloned()).collect();
    if !disagreements.is_empty() {
        out.verdict_failure = Some(format!("bounds: {} table cells disagree:\n{}", disagreements.len(), disagreements.join("\n")));
    }
    Ok(seed)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DesignJob {
    carrier_hz: f64,
    bandwidth_hz: f64,
    n_subcarriers: usize,
    snr_db: f64,
    budget_w: f64,
    prior_m: [f64; 2],
    margin_db: f64,
    true_distance_m: f64,
    oversample: usize,
    space: DesignSpace,
}

impl Default for DesignJob {
    fn default() -> Self {
        let s = RangingSetup::standard();
        Self {
            carrier_hz: s.grid.carrier_hz,
            bandwidth_hz: s.grid.bandwidth(),
            n_subcarriers: s.grid.n_subcarriers,
            snr_db: mmloc::to_db(s.snr),
            budget_w: s.budget,
            prior_m: [9.0, 11.0],
            margin_db: s.margin_db,
            true_distance_m: s.true_distance_m,
            oversample: 16,
            space: DesignSpace::default(),
        }
    }
}

#[derive(Serialize)]
struct DesignSummary<'a> {
    uniform_peb_m: f64,
    optimized_peb_m: f64,
    peb_reduction: f64,
    edge_width: usize,
    edge_fraction: f64,
    worst_sidelobe_db: f64,
    uniform_metrics: &'a mmloc::design::ProfileMetrics,
    optimized_metrics: &'a mmloc::design::ProfileMetrics,
}

pub fn design_outputs(setup: &RangingSetup, oversample: usize, out: &mut OutputSet, profile_files: &[&str; 2]) -> Result<(), Failure> {
    let study = ranging_study(setup, oversample).map_err(fail)?;
    out.add(
        "allocation.csv",
        csv_bytes(|b| write_allocations_csv(&setup.grid, &[("uniform", &study.uniform), ("optimized", &study.optimized.allocation)], b))?,
    );
    if profile_files[0] == profile_files[1] {
        out.add(
            profile_files[0],
            csv_bytes(|b| write_profiles_csv(&[("uniform", &study.uniform_profile), ("optimized", &study.optimized_profile)], b))?,
        );
    } else {
        out.add(profile_files[0], csv_bytes(|b| write_profiles_csv(&[("uniform", &study.uniform_profile)], b))?);
        out.add(profile_files[1], csv_bytes(|b| write_profiles_csv(&[("optimized", &study.optimized_profile)], b))?);
    }
    out.add_json(
        "design.json",
        &DesignSummary {
            uniform_peb_m: study.uniform_peb_m,
            optimized_peb_m: study.optimized.peb_m,
            peb_reduction: study.optimized.peb_reduction(),
            edge_width: study.optimized.edge_width,
            edge_fraction: study.optimized.edge_fraction,
            worst_sidelobe_db: study.optimized.sidelobe.worst_db,
            uniform_metrics: &study.uniform_metrics,
            optimized_metrics: &study.optimized_metrics,
        },
    )
}

pub fn design(text: &str, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: DesignJob = parse(text)?;
    let grid = SpectralGrid::with_bandwidth(job.carrier_hz, job.bandwidth_hz, job.n_subcarriers, 1).map_err(fail)?;
    let mut prior = PriorRegion::from_distances(job.prior_m[0], job.prior_m[1]).map_err(fail)?;
    prior.design = job.space;
    let setup = RangingSetup {
        grid,
        true_distance_m: job.true_distance_m,
        prior,
        margin_db: job.margin_db,
        snr: from_db(job.snr_db),
        budget: job.budget_w,
    };
    design_outputs(&setup, job.oversample, out, &["profiles.csv", "profiles.csv"])?;
    Ok(0)
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum AllocationSpec {
    #[default]
    Uniform,
    EdgePair,
    EdgeWeighted {
        width: usize,
        fraction: f64,
    },
    Custom {
        powers: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProfileJob {
    carrier_hz: f64,
    bandwidth_hz: f64,
    n_subcarriers: usize,
    true_distance_m: f64,
    oversample: usize,
    budget_w: f64,
    allocation: AllocationSpec,
}

impl Default for ProfileJob {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            bandwidth_hz: 132e6,
            n_subcarriers: 64,
            true_distance_m: 10.0,
            oversample: 16,
            budget_w: 1.0,
            allocation: AllocationSpec::Uniform,
        }
    }
}

pub fn profile(text: &str, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: ProfileJob = parse(text)?;
    let grid = SpectralGrid::with_bandwidth(job.carrier_hz, job.bandwidth_hz, job.n_subcarriers, 1).map_err(fail)?;
    let n = grid.n_subcarriers;
    let p = match job.allocation {
        AllocationSpec::Uniform => PowerAllocation::uniform(n, job.budget_w),
        AllocationSpec::EdgePair => PowerAllocation::edge_pair(n, job.budget_w).map_err(fail)?,
        AllocationSpec::EdgeWeighted { width, fraction } => PowerAllocation::edge_weighted(n, job.budget_w, width, fraction).map_err(fail)?,
        AllocationSpec::Custom { powers } => PowerAllocation::new(powers, job.budget_w).map_err(fail)?,
    };
    let prof = range_profile(&p, &grid, job.true_distance_m / SPEED_OF_LIGHT, job.oversample).map_err(fail)?;
    let metrics = profile_metrics(&p, &grid).map_err(fail)?;
    out.add("profile.csv", csv_bytes(|b| write_profiles_csv(&[("profile", &prof)], b))?);
    out.add_json("metrics.json", &metrics)?;
    Ok(0)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateJob {
    scenario: toml::Table,
    n_paths: usize,
    oversample: usize,
    total_power_w: f64,
    /// Label the earliest path as line of sight.
    los: bool,
    delay_sigma_s: f64,
    angle_sigma_rad: f64,
}

impl Default for EstimateJob {
    fn default() -> Self {
        Self {
            scenario: toml::Table::new(),
            n_paths: 1,
            oversample: 16,
            total_power_w: 1.0,
            los: true,
            delay_sigma_s: 1e-10,
            angle_sigma_rad: 1e-2,
        }
    }
}

#[derive(Serialize)]
struct PathRecord {
    delay_s: f64,
    aoa: Option<Direction>,
    aod: Option<Direction>,
    gain_re: f64,
    gain_im: f64,
    quality: f64,
}

pub fn estimate(text: &str, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: EstimateJob = parse(text)?;
    let (_, s) = load(&job.scenario)?;
    let seed = seed.unwrap_or(0);
    let h = synthesize(&s).map_err(fail)?;
    if s.ris.is_some() {
        let design = SignalDesign::uniform(
            vec![nalgebra::DVector::from_element(s.tx.num_elements(), mmloc::Complex64::new(1.0, 0.0))],
            &s.grid,
            s.rx.num_elements(),
            job.total_power_w,
        );
        let obs = observe(&h, &design, s.noise_psd, seed).map_err(fail)?;
        let opts = RisFixOptions {
            oversample: job.oversample,
            delay_sigma_s: job.delay_sigma_s,
            angle_sigma_rad: job.angle_sigma_rad,
            fix: FixOptions { seed, ..Default::default() },
        };
        let r = ris_fix(&obs, &s, &design, &opts).map_err(fail)?;
        #[derive(Serialize)]
        struct RisSummary<'a> {
            fix: &'a mmloc::estimation::FixResult,
            los_delay_s: f64,
            ris_delay_s: f64,
            ris_departure: Direction,
            ris_gain_re: f64,
            ris_gain_im: f64,
        }
        out.add_json(
            "ris_fix.json",
            &RisSummary {
                fix: &r.fix,
                los_delay_s: r.los_delay_s,
                ris_delay_s: r.ris_delay_s,
                ris_departure: r.ris_departure,
                ris_gain_re: r.ris_gain.re,
                ris_gain_im: r.ris_gain.im,
            },
        )?;
        return Ok(seed);
    }
    let design = symbol_sweep(s.tx.num_elements(), s.rx.num_elements(), &s.grid, job.total_power_w, seed);
    let obs = observe(&h, &design, s.noise_psd, seed).map_err(fail)?;
    let mut paths = estimate_paths(&obs, &design, &s.tx, &s.rx, s.wavelength(), job.n_paths, job.oversample).map_err(fail)?;
    paths.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
    let vd = job.delay_sigma_s.powi(2);
    let va = job.angle_sigma_rad.powi(2);
    let meas: Vec<PathMeasurement> = paths
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let aoa = p.aoa.unwrap_or_default();
            let aod = p.aod.unwrap_or_default();
            let var = |present: bool| if present { va } else { f64::INFINITY };
            PathMeasurement {
                kind: if job.los && l == 0 { PathType::Los } else { PathType::Nlos },
                tau_s: p.delay_s,
                aoa_az: aoa.azimuth,
                aoa_el: aoa.elevation,
                aod_az: aod.azimuth,
                aod_el: aod.elevation,
                var_tau: vd,
                var_aoa_az: var(p.aoa.is_some()),
                var_aoa_el: var(p.aoa.is_some() && s.rx.element_offsets.iter().any(|o| o.z != 0.0)),
                var_aod_az: var(p.aod.is_some()),
                var_aod_el: var(p.aod.is_some() && s.tx.element_offsets.iter().any(|o| o.z != 0.0)),
            }
        })
        .collect();
    let records: Vec<PathRecord> = paths
        .iter()
        .map(|p| PathRecord {
            delay_s: p.delay_s,
            aoa: p.aoa,
            aod: p.aod,
            gain_re: p.gain.re,
            gain_im: p.gain.im,
            quality: p.quality,
        })
        .collect();
    out.add_json("paths.json", &records)?;
    out.add("measurements.csv", csv_bytes(|b| write_measurements_csv(&meas, b))?);
    Ok(seed)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolverSection {
    max_iterations: usize,
    gradient_tolerance: f64,
    starts: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = FixOptions::default();
        Self {
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
            starts: d.starts,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FixJob {
    scenario: toml::Table,
    /// Measurement CSV, relative to the job file.
    measurements: String,
    solver: SolverSection,
}

pub fn fix(text: &str, base: &Path, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: FixJob = parse(text)?;
    let (_, s) = load(&job.scenario)?;
    if job.measurements.is_empty() {
        return Err(Failure::config("config: `measurements` must name a CSV file"));
    }
    let path = base.join(&job.measurements);
    let bytes = std::fs::read(&path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    out.inputs.push(InputFile {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    });
    let meas = read_measurements_csv(bytes.as_slice()).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let seed = seed.unwrap_or(0);
    let opts = FixOptions {
        max_iterations: job.solver.max_iterations,
        gradient_tolerance: job.solver.gradient_tolerance,
        starts: job.solver.starts,
        seed,
    };
    let result = multipath_fix(&meas, &s.tx, &opts).map_err(fail)?;
    out.add_json("fix.json", &result)?;
    Ok(seed)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrackJob {
    scenario: toml::Table,
    runs: usize,
    dt_s: f64,
    steps: usize,
    fix_sigma_m: f64,
    process_noise_psd: f64,
    clock_drift_variance: f64,
    initial_position_sigma_m: f64,
    initial_velocity_sigma: f64,
    initial_clock_sigma_m: f64,
}

impl Default for TrackJob {
    fn default() -> Self {
        let s = TrackingSetup::standard();
        Self {
            scenario: toml::Table::new(),
            runs: 50,
            dt_s: s.dt,
            steps: s.steps,
            fix_sigma_m: s.fix_sigma_m,
            process_noise_psd: s.model.process_noise_psd,
            clock_drift_variance: s.model.clock_drift_variance,
            initial_position_sigma_m: s.initial_position_sigma_m,
            initial_velocity_sigma: s.initial_velocity_sigma,
            initial_clock_sigma_m: s.initial_clock_sigma_m,
        }
    }
}

#[derive(Serialize)]
struct TrackSummary {
    runs: usize,
    filter_rmse_m: f64,
    fix_rmse_m: f64,
    mean_nees: f64,
    state_dim: usize,
}

pub fn track(text: &str, seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    let job: TrackJob = parse(text)?;
    let (_, s) = load(&job.scenario)?;
    if job.runs == 0 || job.steps == 0 {
        return Err(Failure::config("runs and steps must be at least 1"));
    }
    let setup = TrackingSetup {
        model: MotionModel {
            process_noise_psd: job.process_noise_psd,
            clock_drift_variance: job.clock_drift_variance,
        },
        dt: job.dt_s,
        steps: job.steps,
        fix_sigma_m: job.fix_sigma_m,
        initial_position_sigma_m: job.initial_position_sigma_m,
        initial_velocity_sigma: job.initial_velocity_sigma,
        initial_clock_sigma_m: job.initial_clock_sigma_m,
    };
    let seed = seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = tracking_run(&setup, &s, &mut rng).map_err(fail)?;
    out.add("trajectory.csv", csv_bytes(|b| write_trajectory_csv(&first.truth, &first.records, b))?);
    let study = tracking_study(&setup, &s, job.runs, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(fail)?;
    out.add_json(
        "track.json",
        &TrackSummary {
            runs: study.runs,
            filter_rmse_m: study.filter_rmse_m,
            fix_rmse_m: study.fix_rmse_m,
            mean_nees: study.mean_nees,
            state_dim: mmloc::tracking::STATE_DIM,
        },
    )?;
    Ok(seed)
}
