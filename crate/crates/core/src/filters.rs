//! Complementary frequency split and the two classical baselines.
//!
//! The split is a per-trace zero-phase frequency-domain low-pass with a
//! raised-cosine transition band; the high band is defined as `m − low`, so
//! `low + high` reproduces the input exactly by construction. The f-k dip
//! filter masks a fan of low apparent velocities in the 2-D spectrum.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::gather::fk::{dft_axis, fft2};
use crate::gather::Gather;
use crate::par;

/// Exact complementary low/high decomposition at a cutoff frequency.
#[derive(Debug, Clone)]
pub struct FrequencySplit {
    pub low: Gather,
    pub high: Gather,
    pub cutoff_hz: f64,
    pub taper_hz: f64,
}

fn check_cutoff(cutoff_hz: f64, taper_hz: f64, dt: f64) -> Result<()> {
    let nyquist = 1.0 / (2.0 * dt);
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::invalid(
            "cutoff_hz",
            format!("must be in (0, {nyquist}), got {cutoff_hz}"),
        ));
    }
    if !(taper_hz >= 0.0) {
        return Err(Error::invalid("taper_hz", format!("must be >= 0, got {taper_hz}")));
    }
    if cutoff_hz + taper_hz >= nyquist {
        return Err(Error::invalid(
            "taper_hz",
            format!("cutoff + taper = {} reaches Nyquist {nyquist}", cutoff_hz + taper_hz),
        ));
    }
    Ok(())
}

/// Low-pass transfer value at |f|: 1 in the passband, raised cosine from
/// `cutoff − taper` down to 0 at `cutoff + taper`.
fn lowpass_gain(f_abs: f64, cutoff: f64, taper: f64) -> f64 {
    if taper == 0.0 {
        return if f_abs <= cutoff { 1.0 } else { 0.0 };
    }
    if f_abs <= cutoff - taper {
        1.0
    } else if f_abs >= cutoff + taper {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (f_abs - (cutoff - taper)) / (2.0 * taper)).cos())
    }
}

/// Split a gather into complementary low and high bands with a per-trace
/// zero-phase frequency-domain filter.
pub fn lowpass_split(m: &Gather, cutoff_hz: f64, taper_hz: f64) -> Result<FrequencySplit> {
    check_cutoff(cutoff_hz, taper_hz, m.dt())?;
    let (n_t, n_x) = m.samples().dim();

    let gains: Vec<f64> = dft_axis(n_t, m.dt())
        .iter()
        .map(|f| lowpass_gain(f.abs(), cutoff_hz, taper_hz))
        .collect();

    let mut planner = FftPlanner::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n_t);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n_t);

    let columns = par::map_indexed(n_x, |x| {
        let mut buf: Vec<Complex<f64>> =
            m.samples().column(x).iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut buf);
        for (c, &g) in buf.iter_mut().zip(&gains) {
            *c *= g;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / n_t as f64;
        buf.iter().map(|c| c.re * scale).collect::<Vec<f64>>()
    });

    let mut low = Array2::zeros((n_t, n_x));
    for (x, col) in columns.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            low[[t, x]] = v;
        }
    }
    let high = m.samples() - &low;
    Ok(FrequencySplit {
        low: m.with_samples(low)?,
        high: m.with_samples(high)?,
        cutoff_hz,
        taper_hz,
    })
}

/// High-pass baseline: the `high` member of the complementary split.
pub fn highpass_baseline(m: &Gather, cutoff_hz: f64, taper_hz: f64) -> Result<Gather> {
    Ok(lowpass_split(m, cutoff_hz, taper_hz)?.high)
}

/// Dip-fan gain at apparent velocity `v_app`: 0 at or below `v_reject`,
/// raised cosine up to 1 at `v_reject·(1 + taper_frac)`.
fn fan_gain(v_app: f64, v_reject: f64, taper_frac: f64) -> f64 {
    if v_app <= v_reject {
        0.0
    } else if taper_frac == 0.0 || v_app >= v_reject * (1.0 + taper_frac) {
        1.0
    } else {
        0.5 * (1.0
            - (std::f64::consts::PI * (v_app - v_reject) / (v_reject * taper_frac)).cos())
    }
}

/// f-k dip filter: attenuates spectral components whose apparent velocity
/// |f/k| lies at or below `v_reject`, for |f| ≤ `f_max`, with a
/// raised-cosine taper of relative width `taper_frac` across the fan edge.
///
/// The k = 0 column has infinite apparent velocity and is never rejected,
/// except that the f = 0 row (including DC) follows the fan limit as k → 0
/// and is removed.
pub fn fk_dip_filter(
    m: &Gather,
    v_reject: f64,
    f_max: f64,
    taper_frac: f64,
) -> Result<Gather> {
    if !(v_reject > 0.0) {
        return Err(Error::invalid("v_reject", format!("must be positive, got {v_reject}")));
    }
    let nyquist = 1.0 / (2.0 * m.dt());
    if !(f_max > 0.0 && f_max <= nyquist) {
        return Err(Error::invalid("f_max", format!("must be in (0, {nyquist}], got {f_max}")));
    }
    if !(taper_frac >= 0.0) {
        return Err(Error::invalid("taper_frac", "must be >= 0"));
    }

    let (n_t, n_x) = m.samples().dim();
    let freqs = dft_axis(n_t, m.dt());
    let waves = dft_axis(n_x, m.dx());

    let mut grid = m.samples().mapv(|v| Complex::new(v, 0.0));
    fft2(&mut grid, false);
    for ((j, i), c) in grid.indexed_iter_mut() {
        let f = freqs[j];
        if f.abs() > f_max {
            continue;
        }
        let k = waves[i];
        let gain = if k == 0.0 {
            // Infinite apparent velocity, except f = 0 follows the fan.
            if f == 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            fan_gain((f / k).abs(), v_reject, taper_frac)
        };
        *c *= gain;
    }
    fft2(&mut grid, true);
    let scale = 1.0 / (n_t as f64 * n_x as f64);
    m.with_samples(grid.mapv(|c| c.re * scale))
}

/// Largest imaginary residue (relative to the real peak) left by a masked
/// inverse 2-D transform; exposed for the conjugate-symmetry property test.
#[doc(hidden)]
pub fn fk_dip_imag_residue(m: &Gather, v_reject: f64, f_max: f64, taper_frac: f64) -> f64 {
    let (n_t, n_x) = m.samples().dim();
    let freqs = dft_axis(n_t, m.dt());
    let waves = dft_axis(n_x, m.dx());
    let mut grid = m.samples().mapv(|v| Complex::new(v, 0.0));
    fft2(&mut grid, false);
    for ((j, i), c) in grid.indexed_iter_mut() {
        let f = freqs[j];
        if f.abs() > f_max {
            continue;
        }
        let k = waves[i];
        let gain = if k == 0.0 {
            if f == 0.0 { 0.0 } else { 1.0 }
        } else {
            fan_gain((f / k).abs(), v_reject, taper_frac)
        };
        *c *= gain;
    }
    fft2(&mut grid, true);
    let max_re = grid.iter().fold(0.0_f64, |a, c| a.max(c.re.abs()));
    let max_im = grid.iter().fold(0.0_f64, |a, c| a.max(c.im.abs()));
    if max_re == 0.0 {
        max_im
    } else {
        max_im / max_re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_ground_roll, synth_reflections, GroundRollParams, ReflectionParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sinusoid_gather(n_t: usize, n_x: usize, dt: f64, f_hz: f64) -> Gather {
        let grid = Array2::from_shape_fn((n_t, n_x), |(t, x)| {
            (2.0 * std::f64::consts::PI * f_hz * t as f64 * dt + 0.3 * x as f64).sin()
        });
        Gather::new(dt, 10.0, grid).unwrap()
    }

    fn random_gather(rng: &mut ChaCha8Rng, n_t: usize, n_x: usize) -> Gather {
        let grid = Array2::from_shape_fn((n_t, n_x), |_| rng.gen_range(-1.0..1.0));
        Gather::new(0.002, 10.0, grid).unwrap()
    }

    #[test]
    fn passband_sinusoid_passes_untouched() {
        // 5 Hz on the DFT grid: 400 samples at 2 ms -> df = 1.25 Hz.
        let g = sinusoid_gather(400, 8, 0.002, 5.0);
        let split = lowpass_split(&g, 25.0, 5.0).unwrap();
        assert!(split.high.energy() / g.energy() < 1e-12);
    }

    #[test]
    fn stopband_sinusoid_is_removed() {
        let g = sinusoid_gather(400, 8, 0.002, 50.0);
        let split = lowpass_split(&g, 25.0, 5.0).unwrap();
        assert!(split.low.energy() / g.energy() < 1e-12);
    }

    #[test]
    fn split_is_complementary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gather(&mut rng, 333, 17);
        let split = lowpass_split(&g, 25.0, 5.0).unwrap();
        let err = (g.samples() - (split.low.samples() + split.high.samples()))
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9 * g.max_abs());
    }

    #[test]
    fn low_band_spectrum_is_empty_above_the_taper() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_gather(&mut rng, 500, 5);
        let split = lowpass_split(&g, 25.0, 5.0).unwrap();
        let spec = crate::gather::fk_spectrum(&split.low);
        let input_peak = crate::gather::fk_spectrum(&g)
            .magnitude()
            .iter()
            .fold(0.0_f64, |m, v| m.max(*v));
        let freqs = spec.freqs_hz().to_vec();
        for (j, row) in spec.magnitude().rows().into_iter().enumerate() {
            if freqs[j].abs() > 30.0 {
                for &v in row {
                    assert!(v < 1e-9 * input_peak);
                }
            }
        }
    }

    #[test]
    fn split_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_gather(&mut rng, 200, 9);
        let y = random_gather(&mut rng, 200, 9);
        let (a, b) = (1.7, -0.4);
        let combo = x.with_samples(a * x.samples() + b * y.samples()).unwrap();
        let lhs = lowpass_split(&combo, 25.0, 5.0).unwrap().low;
        let rhs_grid = a * lowpass_split(&x, 25.0, 5.0).unwrap().low.samples()
            + b * lowpass_split(&y, 25.0, 5.0).unwrap().low.samples();
        let err = (lhs.samples() - &rhs_grid).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9 * lhs.max_abs().max(1e-30));
    }

    #[test]
    fn zero_phase_filtering_keeps_pulse_center() {
        // Symmetric Gaussian pulse centered mid-trace.
        let n_t = 512;
        let center = 256.0;
        let grid = Array2::from_shape_fn((n_t, 3), |(t, _)| {
            (-((t as f64 - center) / 12.0).powi(2)).exp()
        });
        let g = Gather::new(0.002, 10.0, grid).unwrap();
        let low = lowpass_split(&g, 25.0, 5.0).unwrap().low;
        let tr = low.trace(1);
        let weight: f64 = tr.iter().map(|v| v * v).sum();
        let com: f64 =
            tr.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum::<f64>() / weight;
        assert!((com - center).abs() < 0.5, "center of mass moved to {com}");
    }

    #[test]
    fn cutoff_bounds_are_enforced() {
        let g = Gather::zeros(100, 4, 0.002, 10.0).unwrap();
        assert!(lowpass_split(&g, 0.0, 5.0).is_err());
        assert!(lowpass_split(&g, 250.0, 5.0).is_err());
        assert!(lowpass_split(&g, 248.0, 5.0).is_err());
        assert!(lowpass_split(&g, 25.0, -1.0).is_err());
    }

    #[test]
    fn high_pass_is_the_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_gather(&mut rng, 256, 12);
        let split = lowpass_split(&g, 25.0, 5.0).unwrap();
        let hp = highpass_baseline(&g, 25.0, 5.0).unwrap();
        assert_eq!(hp, split.high);
        let err = (g.samples() - (split.low.samples() + hp.samples()))
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12 * g.max_abs());
    }

    #[test]
    fn high_pass_removes_synthetic_ground_roll() {
        let (n_t, n_x, dt, dx) = (1000, 100, 0.002, 10.0);
        let g = synth_ground_roll(&GroundRollParams::train_default(n_x), n_t, n_x, dt, dx).unwrap();
        let hp = highpass_baseline(&g, 25.0, 5.0).unwrap();
        assert!(hp.energy() < 0.01 * g.energy(), "residual {}", hp.energy() / g.energy());
    }

    #[test]
    fn high_pass_cost_on_reflections_is_the_low_band_energy() {
        let (n_t, n_x, dt, dx) = (1000, 100, 0.002, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = synth_reflections(&ReflectionParams::random_train(&mut rng, 1.8, 8), n_t, n_x, dt, dx)
            .unwrap()
            .gather;
        let split = lowpass_split(&r, 25.0, 5.0).unwrap();
        let loss_fraction = split.low.energy() / r.energy();
        println!("low-frequency reflection energy lost by high-pass: {:.4}", loss_fraction);
        assert!(loss_fraction > 0.0 && loss_fraction < 0.5);
        let hp = highpass_baseline(&r, 25.0, 5.0).unwrap();
        assert_eq!(hp, split.high);
    }

    fn plane_wave(n_t: usize, n_x: usize, dt: f64, dx: f64, j0: usize, i0: usize) -> Gather {
        let f0 = j0 as f64 / (n_t as f64 * dt);
        let k0 = i0 as f64 / (n_x as f64 * dx);
        let grid = Array2::from_shape_fn((n_t, n_x), |(t, x)| {
            (2.0 * std::f64::consts::PI * (f0 * t as f64 * dt - k0 * x as f64 * dx)).sin()
        });
        Gather::new(dt, dx, grid).unwrap()
    }

    #[test]
    fn dip_filter_keeps_fast_plane_wave() {
        // j=6, i=5 on a 256x128 grid at 2 ms / 10 m: 11.72 Hz at 3000 m/s.
        let g = plane_wave(256, 128, 0.002, 10.0, 6, 5);
        let out = fk_dip_filter(&g, 600.0, 30.0, 0.2).unwrap();
        let err = (g.samples() - out.samples()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-3 * g.max_abs());
        let lost = (g.energy() - out.energy()).abs() / g.energy();
        assert!(lost < 1e-3, "energy change {lost}");
    }

    #[test]
    fn dip_filter_rejects_slow_plane_wave() {
        // j=5, i=42: 9.77 Hz at 297.6 m/s, inside the 600 m/s fan.
        let g = plane_wave(256, 128, 0.002, 10.0, 5, 42);
        let out = fk_dip_filter(&g, 600.0, 30.0, 0.2).unwrap();
        assert!(out.energy() < 0.01 * g.energy(), "residual {}", out.energy() / g.energy());
    }

    #[test]
    fn dip_filter_output_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_gather(&mut rng, 100, 40);
        let residue = fk_dip_imag_residue(&g, 600.0, 30.0, 0.2);
        assert!(residue < 1e-9, "imaginary residue {residue}");
    }

    #[test]
    fn dip_filter_validates_parameters() {
        let g = Gather::zeros(64, 8, 0.002, 10.0).unwrap();
        assert!(fk_dip_filter(&g, 0.0, 30.0, 0.2).is_err());
        assert!(fk_dip_filter(&g, 600.0, 0.0, 0.2).is_err());
        assert!(fk_dip_filter(&g, 600.0, 300.0, 0.2).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn complementarity_holds_for_random_gathers(
            seed in 0u64..1000,
            n_t in 16usize..160,
            n_x in 1usize..24,
            cutoff in 10.0f64..200.0,
            taper in 0.0f64..20.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_gather(&mut rng, n_t, n_x);
            let nyquist = 250.0;
            proptest::prop_assume!(cutoff + taper < nyquist - 1.0);
            let split = lowpass_split(&g, cutoff, taper).unwrap();
            let err = (g.samples() - (split.low.samples() + split.high.samples()))
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            proptest::prop_assert!(err < 1e-9 * g.max_abs());
        }
    }
}
