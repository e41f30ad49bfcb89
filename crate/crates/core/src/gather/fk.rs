//! 2-D frequency-wavenumber transform of a gather.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::gather::Gather;
use crate::par;

/// Full 2-D DFT of a gather. The grid keeps every (positive and negative)
/// frequency/wavenumber bin; `freqs_hz[j]` and `wavenumbers[i]` carry the
/// signed axis values in DFT bin order (non-negative bins first, then the
/// negative half).
#[derive(Debug, Clone)]
pub struct FkSpectrum {
    grid: Array2<Complex<f64>>,
    freqs_hz: Vec<f64>,
    wavenumbers: Vec<f64>,
    dt: f64,
    dx: f64,
}

impl FkSpectrum {
    pub fn grid(&self) -> &Array2<Complex<f64>> {
        &self.grid
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.grid.mapv(|c| c.norm())
    }
}

/// Signed DFT axis values: bin `j` of an `n`-point transform at step `d`
/// maps to `j/(n d)` for the non-negative half and `(j-n)/(n d)` beyond.
pub(crate) fn dft_axis(n: usize, d: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let j = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            j / (n as f64 * d)
        })
        .collect()
}

fn fft_rows(grid: &mut Array2<Complex<f64>>, fft: &Arc<dyn Fft<f64>>) {
    let n_cols = grid.ncols();
    let data = grid.as_slice_mut().expect("grid is contiguous");
    par::for_each_chunk_mut(data, n_cols, |_, row| {
        let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(row, &mut scratch);
    });
}

/// In-place 2-D FFT over both axes of a `(n_t, n_x)` complex grid.
pub(crate) fn fft2(grid: &mut Array2<Complex<f64>>, inverse: bool) {
    let (n_t, n_x) = grid.dim();
    let mut planner = FftPlanner::new();
    let fft_x = if inverse { planner.plan_fft_inverse(n_x) } else { planner.plan_fft_forward(n_x) };
    let fft_t = if inverse { planner.plan_fft_inverse(n_t) } else { planner.plan_fft_forward(n_t) };

    // Rows (trace axis) in place, then the time axis via transpose.
    fft_rows(grid, &fft_x);
    let mut transposed = grid.t().to_owned().as_standard_layout().into_owned();
    fft_rows(&mut transposed, &fft_t);
    *grid = transposed.t().to_owned().as_standard_layout().into_owned();
}

/// 2-D DFT of a gather with axes computed from its sampling steps.
pub fn fk_spectrum(g: &Gather) -> FkSpectrum {
    let (n_t, n_x) = g.samples().dim();
    let mut grid = g.samples().mapv(|v| Complex::new(v, 0.0));
    fft2(&mut grid, false);
    FkSpectrum {
        grid,
        freqs_hz: dft_axis(n_t, g.dt()),
        wavenumbers: dft_axis(n_x, g.dx()),
        dt: g.dt(),
        dx: g.dx(),
    }
}

/// Inverse transform back to a gather (real part; 1/(n_t·n_x) scaling).
pub fn fk_inverse(spec: &FkSpectrum) -> Result<Gather> {
    let (n_t, n_x) = spec.grid.dim();
    let mut grid = spec.grid.clone();
    fft2(&mut grid, true);
    let scale = 1.0 / (n_t as f64 * n_x as f64);
    Gather::new(spec.dt, spec.dx, grid.mapv(|c| c.re * scale))
}
