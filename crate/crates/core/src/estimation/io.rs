use std::io::{Read, Write};

use super::{EstimationError, PathMeasurement};

/// One row per path: `type,tau_s,aoa_az,aoa_el,aod_az,aod_el,var_tau,...`.
/// Unmeasured quantities carry `inf` variances.
pub fn write_measurements_csv<W: Write>(meas: &[PathMeasurement], w: W) -> Result<(), EstimationError> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for m in meas {
        wr.serialize(m).map_err(|e| EstimationError::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| EstimationError::Io(e.to_string()))
}

pub fn read_measurements_csv<R: Read>(r: R) -> Result<Vec<PathMeasurement>, EstimationError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| EstimationError::Io(format!("row {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::PathType;

    #[test]
    fn round_trip_with_unmeasured_columns() {
        let m = PathMeasurement {
            kind: PathType::Nlos,
            tau_s: 4.2e-8,
            aoa_az: 0.3,
            aoa_el: 0.0,
            aod_az: -0.7,
            aod_el: 0.1,
            var_tau: 1e-22,
            var_aoa_az: 1e-6,
            var_aoa_el: f64::INFINITY,
            var_aod_az: 1e-6,
            var_aod_el: 1e-6,
        };
        let mut buf = Vec::new();
        write_measurements_csv(&[m], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("type,tau_s,aoa_az"));
        assert!(text.contains("nlos"));
        assert_eq!(read_measurements_csv(buf.as_slice()).unwrap(), vec![m]);
    }

    #[test]
    fn malformed_row_reports_position() {
        let text = "type,tau_s,aoa_az,aoa_el,aod_az,aod_el,var_tau,var_aoa_az,var_aoa_el,var_aod_az,var_aod_el\nlos,x,0,0,0,0,1,1,1,1,1\n";
        let err = read_measurements_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }
}
