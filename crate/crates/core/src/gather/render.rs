//! Grayscale rendering of gathers and f-k magnitudes as binary PGM (P5).
//!
//! Amplitude maps linearly onto [0, 255] after symmetric clipping at the
//! requested percentile of |amplitude|; zero lands on mid-gray. Ground-roll
//! amplitudes dwarf reflections, so the default clip of 99 keeps reflection
//! events visible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gather::{FkSpectrum, Gather};

/// Render a gather: one pixel per sample, width = traces, height = time
/// samples (time increases downward).
pub fn render_gather(g: &Gather, path: impl AsRef<Path>, clip_percentile: f64) -> Result<()> {
    let pixels = grayscale(g.samples(), clip_percentile)?;
    write_pgm(path, &pixels)
}

/// Render the magnitude of an f-k spectrum. Only the non-negative frequency
/// half is shown (f = 0 at the top row, Nyquist at the bottom); wavenumbers
/// are shifted so k = 0 sits at the horizontal center.
pub fn render_fk(spec: &FkSpectrum, path: impl AsRef<Path>, clip_percentile: f64) -> Result<()> {
    let mag = spec.magnitude();
    let (n_t, n_x) = mag.dim();
    let n_f = n_t / 2 + 1;
    let half = n_x / 2;
    let mut shown = Array2::zeros((n_f, n_x));
    for j in 0..n_f {
        for i in 0..n_x {
            // Column 0 is the most negative wavenumber, `half` is k=0.
            let src = (i + n_x - half) % n_x;
            shown[[j, i]] = mag[[j, src]];
        }
    }
    let pixels = grayscale(&shown, clip_percentile)?;
    write_pgm(path, &pixels)
}

/// Map a grid to 8-bit gray. Clipping amplitude is the `clip_percentile`-th
/// percentile (nearest-rank) of |value|; the map sends -c to 0, 0 to
/// mid-gray, +c to 255.
fn grayscale(grid: &Array2<f64>, clip_percentile: f64) -> Result<Array2<u8>> {
    if !(clip_percentile > 50.0 && clip_percentile <= 100.0) {
        return Err(Error::invalid(
            "clip_percentile",
            format!("must be in (50, 100], got {clip_percentile}"),
        ));
    }
    let mut mags: Vec<f64> = grid.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((clip_percentile / 100.0) * mags.len() as f64).ceil() as usize;
    let clip = mags[rank.clamp(1, mags.len()) - 1];

    Ok(grid.mapv(|v| {
        if clip == 0.0 {
            return 128u8;
        }
        let clamped = v.clamp(-clip, clip);
        (255.0 * (clamped + clip) / (2.0 * clip)).round() as u8
    }))
}

fn write_pgm(path: impl AsRef<Path>, pixels: &Array2<u8>) -> Result<()> {
    let path = path.as_ref();
    let (height, width) = pixels.dim();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        write!(w, "P5\n{width} {height}\n255\n")?;
        for row in pixels.rows() {
            w.write_all(row.as_slice().expect("row-major"))?;
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gather::fk_spectrum;

    #[test]
    fn zero_gather_renders_mid_gray() {
        let g = Gather::zeros(8, 4, 0.002, 10.0).unwrap();
        let px = grayscale(g.samples(), 99.0).unwrap();
        assert!(px.iter().all(|&p| p == 128));
    }

    #[test]
    fn max_positive_sample_hits_255_at_full_clip() {
        let mut grid = Array2::zeros((4, 4));
        grid[[2, 1]] = 3.5;
        let px = grayscale(&grid, 100.0).unwrap();
        assert_eq!(px[[2, 1]], 255);
        assert!(px.iter().filter(|&&p| p == 255).count() == 1);
    }

    #[test]
    fn gather_image_dimensions_follow_axis_convention() {
        let g = Gather::zeros(1000, 200, 0.002, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        render_gather(&g, &path, 99.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header: Vec<u8> = b"P5\n200 1000\n255\n".to_vec();
        assert_eq!(&bytes[..header.len()], &header[..]);
        assert_eq!(bytes.len(), header.len() + 1000 * 200);
    }

    #[test]
    fn fk_image_shows_non_negative_frequencies_only() {
        let g = Gather::zeros(64, 16, 0.002, 10.0).unwrap();
        let spec = fk_spectrum(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fk.pgm");
        render_fk(&spec, &path, 99.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n16 33\n255\n"));
    }

    #[test]
    fn rejects_out_of_range_clip() {
        let g = Gather::zeros(4, 4, 0.002, 10.0).unwrap();
        assert!(render_gather(&g, "/tmp/never-written.pgm", 50.0).is_err());
    }
}
