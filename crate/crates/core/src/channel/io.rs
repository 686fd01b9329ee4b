//! Tensor export.
//!
//! Binary layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `MMCHTNS1` |
//! | 4 x u32 | rx elements, tx elements, subcarriers, symbols |
//! | 3 x f64 | carrier [Hz], subcarrier spacing [Hz], symbol duration [s] |
//! | body  | for each subcarrier position, symbol, row, column: `re`, `im` as f64 |
//!
//! Subcarrier positions run `0..N` and map to indices `i - N/2`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::io::{Read, Write};

use super::{ChannelError, ChannelTensor};
use crate::scenario::SpectralGrid;

pub const MAGIC: &[u8; 8] = b"MMCHTNS1";

fn io_err(e: std::io::Error) -> ChannelError {
    ChannelError::Format(e.to_string())
}

pub fn write_binary<W: Write>(h: &ChannelTensor, mut w: W) -> Result<(), ChannelError> {
    let g = &h.grid;
    let mut buf = Vec::with_capacity(48 + 16 * h.rx_elements() * h.tx_elements() * g.n_subcarriers * g.n_symbols);
    buf.extend_from_slice(MAGIC);
    for d in [h.rx_elements(), h.tx_elements(), g.n_subcarriers, g.n_symbols] {
        let d = u32::try_from(d).map_err(|_| ChannelError::Format("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in [g.carrier_hz, g.subcarrier_spacing_hz, g.symbol_duration_s] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for m in h.matrices() {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                buf.extend_from_slice(&m[(r, c)].re.to_le_bytes());
                buf.extend_from_slice(&m[(r, c)].im.to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_binary<R: Read>(mut r: R) -> Result<ChannelTensor, ChannelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], ChannelError> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| ChannelError::Format("truncated tensor file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(ChannelError::Format("bad magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    }
    let mut f = [0f64; 3];
    for v in &mut f {
        *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    }
    let [nr, nt, n, k] = dims;
    let grid = SpectralGrid::new(f[0], f[1], n, f[2], k)?;
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n * k {
        let mut m = DMatrix::zeros(nr, nt);
        for row in 0..nr {
            for col in 0..nt {
                let re = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                m[(row, col)] = Complex64::new(re, im);
            }
        }
        data.push(m);
    }
    if take(1).is_ok() {
        return Err(ChannelError::Format("trailing bytes after tensor body".into()));
    }
    ChannelTensor::from_parts(grid, nr, nt, data)
}

/// One row per entry: `subcarrier,symbol,rx,tx,re,im`, with `subcarrier` the
/// signed index.
pub fn write_csv<W: Write>(h: &ChannelTensor, w: W) -> Result<(), ChannelError> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| ChannelError::Format(e.to_string());
    out.write_record(["subcarrier", "symbol", "rx", "tx", "re", "im"]).map_err(csv_err)?;
    for i in 0..h.grid.n_subcarriers {
        for k in 0..h.grid.n_symbols {
            let m = h.get(i, k);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.write_record([
                        h.grid.subcarrier_index(i).to_string(),
                        k.to_string(),
                        r.to_string(),
                        c.to_string(),
                        format!("{:e}", m[(r, c)].re),
                        format!("{:e}", m[(r, c)].im),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize;
    use crate::scenario::{ArrayGeometry, Scenario};
    use nalgebra::{Rotation3, Vector3};

    fn tensor() -> ChannelTensor {
        let s = Scenario::los(
            ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), 2, 0.005),
            ArrayGeometry::ula(Vector3::new(4.0, 1.0, 0.0), Rotation3::identity(), 3, 0.005),
            SpectralGrid::with_bandwidth(28e9, 100e6, 4, 2).unwrap(),
        );
        synthesize(&s).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let h = tensor();
        let mut buf = Vec::new();
        write_binary(&h, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 24 + 16 * 3 * 2 * 4 * 2);
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, h);
        // Row-major: the second complex value of the body is H[0][(0, 1)].
        let re = f64::from_le_bytes(buf[48 + 16..48 + 24].try_into().unwrap());
        assert_eq!(re, h.get(0, 0)[(0, 1)].re);
    }

    #[test]
    fn rejects_corrupt_input() {
        let h = tensor();
        let mut buf = Vec::new();
        write_binary(&h, &mut buf).unwrap();
        assert!(read_binary(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(read_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_row_per_entry() {
        let h = tensor();
        let mut buf = Vec::new();
        write_csv(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2 * 4 * 2);
        assert!(text.lines().nth(1).unwrap().starts_with("-2,0,0,0,"));
    }
}
