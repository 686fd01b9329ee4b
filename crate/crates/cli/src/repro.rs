//! Pinned presets.

use std::f64::consts::FRAC_PI_2;

use mmloc::bounds::TABLE1_SEED;
use mmloc::design::RangingSetup;
use mmloc::precoding::{beam_study, linspace, make_precoder, response_map, BeamTarget, PrecoderKind, ResponseGrid, WidebandUlaSetup};
use mmloc::scenario::ModelFlags;

use crate::jobs::{design_outputs, table1_outputs};
use crate::manifest::OutputSet;
use crate::{fail, Failure};

fn map_csv(setup: &WidebandUlaSetup, kind: PrecoderKind, target: BeamTarget, rg: &ResponseGrid, flags: &ModelFlags) -> Result<Vec<u8>, Failure> {
    let p = make_precoder(&setup.array, kind, target, &setup.grid).map_err(fail)?;
    let m = response_map(&setup.array, &p, rg, &setup.grid, flags).map_err(fail)?;
    let mut buf = Vec::new();
    m.write_csv(&mut buf, &setup.grid).map_err(fail)?;
    Ok(buf)
}

/// Wideband squint maps over all subcarriers and near-field angle-distance
/// maps at the centre subcarrier.
pub fn fig3(out: &mut OutputSet) -> Result<u64, Failure> {
    let s = WidebandUlaSetup::standard();
    let n = s.grid.n_subcarriers;
    let wide = ModelFlags {
        beam_squint: true,
        ..Default::default()
    };
    let band = ResponseGrid {
        azimuths: linspace(-FRAC_PI_2, FRAC_PI_2, 721),
        elevation: 0.0,
        distances: vec![100.0],
        subcarriers: (0..n).collect(),
    };
    let far = BeamTarget::toward(s.target);
    out.add("fig3a_phase.csv", map_csv(&s, PrecoderKind::Phase, far, &band, &wide)?);
    out.add("fig3a_time_delay.csv", map_csv(&s, PrecoderKind::TimeDelay, far, &band, &wide)?);
    let near = ModelFlags {
        near_field: true,
        ..Default::default()
    };
    let plane = ResponseGrid {
        azimuths: linspace(0.0, FRAC_PI_2, 181),
        elevation: 0.0,
        distances: WidebandUlaSetup::distance_axis(),
        subcarriers: vec![n / 2],
    };
    out.add("fig3b_far_field.csv", map_csv(&s, PrecoderKind::Phase, far, &plane, &near)?);
    let focus = BeamTarget::focused(s.target, s.focus_distance);
    out.add("fig3b_near_field.csv", map_csv(&s, PrecoderKind::NearFieldFocus, focus, &plane, &near)?);
    out.add_json("fig3.json", &beam_study(&s).map_err(fail)?)?;
    Ok(0)
}

/// Uniform against optimized allocation on the 132 MHz ranging preset.
pub fn fig4(out: &mut OutputSet) -> Result<u64, Failure> {
    design_outputs(&RangingSetup::standard(), 16, out, &["profile_uniform.csv", "profile_optimized.csv"])?;
    Ok(0)
}

pub fn table1(seed: Option<u64>, out: &mut OutputSet) -> Result<u64, Failure> {
    table1_outputs(10, seed.unwrap_or(TABLE1_SEED), out)
}
