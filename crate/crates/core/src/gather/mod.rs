//! Core signal container and file formats shared by every other module.
//!
//! A [`Gather`] is a 2-D time×trace amplitude grid with sampling metadata.
//! It is immutable after construction and every operation on it is a pure
//! function, so gathers can be shared freely across threads.
//!
//! # File format
//!
//! Gathers are stored in a fixed little-endian binary layout:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "GRGATHER"
//!      8     4  n_t  (u32, time samples)
//!     12     4  n_x  (u32, traces)
//!     16     8  dt   (f64, seconds)
//!     24     8  dx   (f64, meters)
//!     32     -  n_t * n_x samples (f32), time-major
//! ```
//!
//! Storage precision is 32-bit; in-memory samples are `f64`. A write
//! followed by a read is bit-exact for any gather whose samples are
//! representable in `f32` — in particular for everything that came from a
//! file in the first place.

pub(crate) mod fk;
mod render;

pub use fk::{fk_inverse, fk_spectrum, FkSpectrum};
pub use render::{render_fk, render_gather};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const GATHER_MAGIC: &[u8; 8] = b"GRGATHER";
pub const HEADER_LEN: usize = 32;

/// A shot gather: `n_t × n_x` real amplitudes, time-major, with time step
/// `dt` (s) and trace interval `dx` (m).
#[derive(Debug, Clone, PartialEq)]
pub struct Gather {
    dt: f64,
    dx: f64,
    samples: Array2<f64>,
}

impl Gather {
    /// Build a gather from a `(n_t, n_x)` sample grid, validating the
    /// invariants: positive dimensions and sampling steps, finite samples.
    pub fn new(dt: f64, dx: f64, samples: Array2<f64>) -> Result<Self> {
        let (n_t, n_x) = samples.dim();
        if n_t == 0 {
            return Err(Error::invalid("n_t", "must be >= 1"));
        }
        if n_x == 0 {
            return Err(Error::invalid("n_x", "must be >= 1"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::invalid("dx", format!("must be positive, got {dx}")));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("samples", "must all be finite"));
        }
        Ok(Gather { dt, dx, samples })
    }

    /// Flat time-major sample vector variant of [`Gather::new`].
    pub fn from_vec(n_t: usize, n_x: usize, dt: f64, dx: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != n_t * n_x {
            return Err(Error::invalid(
                "samples",
                format!("expected {} values, got {}", n_t * n_x, samples.len()),
            ));
        }
        let grid = Array2::from_shape_vec((n_t, n_x), samples)
            .map_err(|e| Error::invalid("samples", e.to_string()))?;
        Gather::new(dt, dx, grid)
    }

    /// All-zero gather of the given geometry.
    pub fn zeros(n_t: usize, n_x: usize, dt: f64, dx: f64) -> Result<Self> {
        Gather::new(dt, dx, Array2::zeros((n_t, n_x)))
    }

    /// New gather with the same sampling but different samples.
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<Self> {
        if samples.dim() != self.samples.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {:?}, got {:?}",
                self.samples.dim(),
                samples.dim()
            )));
        }
        Gather::new(self.dt, self.dx, samples)
    }

    pub fn n_t(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.samples.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    /// Sample at time index `t`, trace index `x`.
    pub fn at(&self, t: usize, x: usize) -> f64 {
        self.samples[[t, x]]
    }

    /// One trace (fixed `x`) as an owned time series.
    pub fn trace(&self, x: usize) -> Vec<f64> {
        self.samples.column(x).to_vec()
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// True when both gathers share grid size and sampling steps.
    pub fn same_geometry(&self, other: &Gather) -> bool {
        self.samples.dim() == other.samples.dim() && self.dt == other.dt && self.dx == other.dx
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(field, "truncated payload"))
}

/// Read a gather from its binary file format.
pub fn read_gather(path: impl AsRef<Path>) -> Result<Gather> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact_at(&mut r, &mut magic, "magic")?;
    if &magic != GATHER_MAGIC {
        return Err(Error::format("magic", format!("expected \"GRGATHER\", got {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    read_exact_at(&mut r, &mut u32buf, "n_t")?;
    let n_t = u32::from_le_bytes(u32buf) as usize;
    read_exact_at(&mut r, &mut u32buf, "n_x")?;
    let n_x = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    read_exact_at(&mut r, &mut f64buf, "dt")?;
    let dt = f64::from_le_bytes(f64buf);
    read_exact_at(&mut r, &mut f64buf, "dx")?;
    let dx = f64::from_le_bytes(f64buf);

    if n_t == 0 {
        return Err(Error::format("n_t", "must be >= 1"));
    }
    if n_x == 0 {
        return Err(Error::format("n_x", "must be >= 1"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::format("dt", format!("must be positive, got {dt}")));
    }
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(Error::format("dx", format!("must be positive, got {dx}")));
    }

    let count = n_t
        .checked_mul(n_x)
        .ok_or_else(|| Error::format("n_t", "n_t * n_x overflows"))?;
    let mut payload = vec![0u8; count * 4];
    read_exact_at(&mut r, &mut payload, "samples")?;

    let mut samples = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format("samples", format!("non-finite sample {v}")));
        }
        samples.push(v as f64);
    }
    Gather::from_vec(n_t, n_x, dt, dx, samples)
}

/// Write a gather to its binary file format (f32 storage precision).
pub fn write_gather(gather: &Gather, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);

    let mut out: Vec<u8> = Vec::with_capacity(HEADER_LEN + gather.samples.len() * 4);
    out.extend_from_slice(GATHER_MAGIC);
    out.extend_from_slice(&(gather.n_t() as u32).to_le_bytes());
    out.extend_from_slice(&(gather.n_x() as u32).to_le_bytes());
    out.extend_from_slice(&gather.dt.to_le_bytes());
    out.extend_from_slice(&gather.dx.to_le_bytes());
    for &v in gather.samples.iter() {
        let v32 = v as f32;
        if !v32.is_finite() {
            return Err(Error::format("samples", format!("sample {v} overflows f32 storage")));
        }
        out.extend_from_slice(&v32.to_le_bytes());
    }
    w.write_all(&out)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_identity() {
        let g = Gather::from_vec(3, 2, 0.002, 10.0, vec![0.0, 1.0, -1.0, 0.5, 2.0, -2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ggr");
        write_gather(&g, &path).unwrap();
        let back = read_gather(&path).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ggr");
        std::fs::write(&path, b"NOTAGATHERFILE__________________").unwrap();
        match read_gather(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let g = Gather::zeros(4, 4, 0.002, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ggr");
        write_gather(&g, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match read_gather(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "samples"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_dt_is_format_error() {
        let g = Gather::zeros(2, 2, 0.002, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ggr");
        write_gather(&g, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[16..24].copy_from_slice(&(-1.0_f64).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_gather(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "dt"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let g = Gather::zeros(1000, 200, 0.002, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ggr");
        write_gather(&g, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 32 + 1000 * 200 * 4);
    }

    #[test]
    fn rejects_non_finite_samples() {
        let mut grid = Array2::zeros((2, 2));
        grid[[0, 0]] = f64::NAN;
        assert!(Gather::new(0.002, 10.0, grid).is_err());
    }
}
