//! 3×3 same-padding convolution (cross-correlation) with zero fill.
//!
//! Forward and backward run as im2col + matrix multiply. The spatial domain
//! is processed in row bands so the column buffer stays bounded even for
//! full-size gathers, and batches fan out across samples through [`par`].

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::par;

pub const KERNEL: usize = 3;
const K2: usize = KERNEL * KERNEL;
/// Column-buffer budget in f64 elements (~32 MB per worker).
const COLS_BUDGET: usize = 600000;

thread_local! {
    static COLS: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
    static COLS_GRAD: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

fn check_shapes(
    c_in: usize,
    weights: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<(usize, usize)> {
    let (c_out, w_in, kh, kw) = weights.dim();
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::invalid("weights", format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if w_in != c_in {
        return Err(Error::invalid(
            "weights",
            format!("input has {c_in} channels but weights expect {w_in}"),
        ));
    }
    if bias.len() != c_out {
        return Err(Error::invalid(
            "bias",
            format!("expected {c_out} biases, got {}", bias.len()),
        ));
    }
    Ok((c_out, c_in))
}

fn band_rows(ck: usize, w: usize, h: usize) -> usize {
    (COLS_BUDGET / (ck * w)).clamp(1, h)
}

/// Fill `cols` (ck × band_hw) with the padded input patches for output rows
/// `y0..y1` of one sample.
///
/// Exploits that for a fixed (ci, dy, dx) the mapping from flattened band
/// position to flattened input position is a constant offset, so each cols
/// row is one bulk copy plus zeroing of the pad seams.
fn im2col_band(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    y0: usize,
    y1: usize,
    cols: &mut [f64],
) {
    let band_hw = (y1 - y0) * w;
    for ci in 0..c_in {
        let plane = &input[ci * h * w..][..h * w];
        for dy in 0..KERNEL {
            // Output rows whose source row y + dy − 1 lies inside the plane.
            let y_lo = y0.max(1usize.saturating_sub(dy));
            let y_hi = y1.min(h + 1 - dy);
            for dxk in 0..KERNEL {
                let row = &mut cols[(ci * K2 + dy * KERNEL + dxk) * band_hw..][..band_hw];
                if y_lo >= y_hi {
                    row.fill(0.0);
                    continue;
                }
                row[..(y_lo - y0) * w].fill(0.0);
                row[(y_hi - y0) * w..].fill(0.0);
                let dst_lo = (y_lo - y0) * w;
                let dst_hi = (y_hi - y0) * w;
                let len = dst_hi - dst_lo;
                // Flattened source index for dst_lo is
                // (y_lo + dy − 1)·w + dxk − 1.
                let src = (y_lo + dy - 1) * w + dxk;
                match dxk {
                    0 => {
                        // Shift left by one. When the source row is row 0
                        // the first element would read index −1.
                        if src == 0 {
                            row[dst_lo] = 0.0;
                            row[dst_lo + 1..dst_hi].copy_from_slice(&plane[..len - 1]);
                        } else {
                            row[dst_lo..dst_hi].copy_from_slice(&plane[src - 1..][..len]);
                        }
                        // Zero the wrapped-in left-pad column of every row.
                        for y in y_lo..y_hi {
                            row[(y - y0) * w] = 0.0;
                        }
                    }
                    1 => row[dst_lo..dst_hi].copy_from_slice(&plane[src - 1..][..len]),
                    _ => {
                        // Shift right by one; the final element would read
                        // one past the plane, so stop one element early.
                        if src - 1 + len > h * w {
                            row[dst_lo..dst_hi - 1].copy_from_slice(&plane[src - 1..][..len - 1]);
                            row[dst_hi - 1] = 0.0;
                        } else {
                            row[dst_lo..dst_hi].copy_from_slice(&plane[src - 1..][..len]);
                        }
                        // Zero the wrapped-in right-pad column of every row.
                        for y in y_lo..y_hi {
                            row[(y - y0) * w + w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-form gradient for rows `y0..y1` back onto the
/// input gradient of one sample. Exact adjoint of [`im2col_band`].
fn col2im_band(
    cols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    y0: usize,
    y1: usize,
    grad_input: &mut [f64],
) {
    let band_hw = (y1 - y0) * w;
    for ci in 0..c_in {
        for dy in 0..KERNEL {
            for dxk in 0..KERNEL {
                let row = &cols[(ci * K2 + dy * KERNEL + dxk) * band_hw..][..band_hw];
                for y in y0..y1 {
                    let yy = y as i64 + dy as i64 - 1;
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    let src = &row[(y - y0) * w..][..w];
                    let dst = &mut grad_input[ci * h * w + yy as usize * w..][..w];
                    match dxk {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass for one sample already laid out as contiguous (C,H,W).
fn forward_sample(
    input: &[f64],
    weights: ArrayView2<f64>,
    bias: &Array1<f64>,
    h: usize,
    w: usize,
    out: &mut [f64],
) {
    let (c_out, ck) = weights.dim();
    let c_in = ck / K2;
    let rows = band_rows(ck, w, h);
    COLS.with(|buf| {
        let mut cols = buf.borrow_mut();
        cols.resize(ck * rows * w, 0.0);
        let mut out_mat =
            ArrayViewMut2::from_shape((c_out, h * w), out).expect("contiguous sample");
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let band_hw = (y1 - y0) * w;
            im2col_band(input, c_in, h, w, y0, y1, &mut cols[..ck * band_hw]);
            let cols_view =
                ArrayView2::from_shape((ck, band_hw), &cols[..ck * band_hw]).unwrap();
            let mut out_band = out_mat.slice_mut(s![.., y0 * w..y1 * w]);
            general_mat_mul(1.0, &weights, &cols_view, 0.0, &mut out_band);
            y0 = y1;
        }
    });
    for co in 0..c_out {
        let b = bias[co];
        for v in &mut out[co * h * w..][..h * w] {
            *v += b;
        }
    }
}

/// Backward pass for one sample: returns nothing, accumulates into the
/// provided gradient buffers.
#[allow(clippy::too_many_arguments)]
fn backward_sample(
    input: &[f64],
    weights: ArrayView2<f64>,
    grad_out: &[f64],
    h: usize,
    w: usize,
    grad_input: &mut [f64],
    grad_weights: &mut Array2<f64>,
    grad_bias: &mut [f64],
) {
    let (c_out, ck) = weights.dim();
    let c_in = ck / K2;
    let rows = band_rows(ck, w, h);
    let gout_mat = ArrayView2::from_shape((c_out, h * w), grad_out).expect("contiguous sample");

    for co in 0..c_out {
        grad_bias[co] += grad_out[co * h * w..][..h * w].iter().sum::<f64>();
    }

    COLS.with(|cbuf| {
        COLS_GRAD.with(|gbuf| {
            let mut cols = cbuf.borrow_mut();
            let mut cols_grad = gbuf.borrow_mut();
            cols.resize(ck * rows * w, 0.0);
            cols_grad.resize(ck * rows * w, 0.0);
            let mut y0 = 0;
            while y0 < h {
                let y1 = (y0 + rows).min(h);
                let band_hw = (y1 - y0) * w;
                let gout_band = gout_mat.slice(s![.., y0 * w..y1 * w]);

                // dW += gout_band · cols_bandᵀ
                im2col_band(input, c_in, h, w, y0, y1, &mut cols[..ck * band_hw]);
                let cols_view =
                    ArrayView2::from_shape((ck, band_hw), &cols[..ck * band_hw]).unwrap();
                general_mat_mul(1.0, &gout_band, &cols_view.t(), 1.0, grad_weights);

                // d(input cols) = Wᵀ · gout_band, scattered back by col2im.
                let mut cg_view =
                    ArrayViewMut2::from_shape((ck, band_hw), &mut cols_grad[..ck * band_hw])
                        .unwrap();
                general_mat_mul(1.0, &weights.t(), &gout_band, 0.0, &mut cg_view);
                col2im_band(&cols_grad[..ck * band_hw], c_in, h, w, y0, y1, grad_input);
                y0 = y1;
            }
        })
    });
}

/// Batched forward convolution: input (N, C_in, H, W) to (N, C_out, H, W).
pub fn conv2d_forward_batch(
    input: &Array4<f64>,
    weights: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<Array4<f64>> {
    let (n, c_in, h, w) = input.dim();
    let (c_out, _) = check_shapes(c_in, weights, bias)?;
    let ck = c_in * K2;
    let w2 = weights.view().into_shape_with_order((c_out, ck)).expect("contiguous weights");

    let in_flat = input.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, c_out, h, w));
    let sample_in = c_in * h * w;
    let sample_out = c_out * h * w;
    {
        let out_flat = out.as_slice_mut().expect("standard layout");
        par::for_each_chunk_mut(out_flat, sample_out, |i, chunk| {
            forward_sample(&in_flat[i * sample_in..][..sample_in], w2, bias, h, w, chunk);
        });
    }
    Ok(out)
}

/// Batched backward convolution. Returns (grad_input, grad_weights,
/// grad_bias); weight/bias gradients are summed over the batch in sample
/// order, so the reduction is deterministic under any thread count.
pub fn conv2d_backward_batch(
    input: &Array4<f64>,
    weights: &Array4<f64>,
    grad_out: &Array4<f64>,
) -> Result<(Array4<f64>, Array4<f64>, Array1<f64>)> {
    let (n, c_in, h, w) = input.dim();
    let (c_out, w_in, kh, kw) = weights.dim();
    if kh != KERNEL || kw != KERNEL || w_in != c_in {
        return Err(Error::invalid("weights", "kernel/channel mismatch"));
    }
    if grad_out.dim() != (n, c_out, h, w) {
        return Err(Error::invalid("grad_out", "shape mismatch with conv output"));
    }
    let ck = c_in * K2;
    let w2 = weights.view().into_shape_with_order((c_out, ck)).expect("contiguous weights");
    let in_flat = input.as_slice().expect("standard layout");
    let gout_flat = grad_out.as_slice().expect("standard layout");
    let sample_in = c_in * h * w;
    let sample_out = c_out * h * w;

    let mut grad_input = Array4::zeros((n, c_in, h, w));
    let partials: Vec<(Array2<f64>, Vec<f64>)> = {
        let gin_flat = grad_input.as_slice_mut().expect("standard layout");
        // Each task owns one sample's input gradient plus private weight and
        // bias partials, collected in index order.
        let gin_ptr = SendSlice(gin_flat.as_mut_ptr());
        let n_tasks = n;
        par::map_indexed(n_tasks, move |i| {
            let mut gw = Array2::zeros((c_out, ck));
            let mut gb = vec![0.0; c_out];
            // Safety: disjoint per-sample regions of the gradient buffer.
            let gin = unsafe {
                std::slice::from_raw_parts_mut(gin_ptr.get().add(i * sample_in), sample_in)
            };
            backward_sample(
                &in_flat[i * sample_in..][..sample_in],
                w2,
                &gout_flat[i * sample_out..][..sample_out],
                h,
                w,
                gin,
                &mut gw,
                &mut gb,
            );
            (gw, gb)
        })
    };

    let mut gw_total = Array2::zeros((c_out, ck));
    let mut gb_total = Array1::zeros(c_out);
    for (gw, gb) in partials {
        gw_total += &gw;
        for (t, v) in gb_total.iter_mut().zip(gb) {
            *t += v;
        }
    }
    let grad_weights = gw_total
        .into_shape_with_order((c_out, c_in, KERNEL, KERNEL))
        .expect("weight gradient shape");
    Ok((grad_input, grad_weights, gb_total))
}

#[derive(Copy, Clone)]
struct SendSlice(*mut f64);
unsafe impl Send for SendSlice {}
unsafe impl Sync for SendSlice {}

impl SendSlice {
    // Method access keeps closures capturing the wrapper, not the bare
    // pointer field (edition-2021 disjoint capture).
    fn get(&self) -> *mut f64 {
        self.0
    }
}

/// Single-sample forward: (C_in, H, W) input to (C_out, H, W).
pub fn conv2d_forward(
    input: &Array3<f64>,
    weights: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<Array3<f64>> {
    let (c_in, h, w) = input.dim();
    let (c_out, _) = check_shapes(c_in, weights, bias)?;
    let ck = c_in * K2;
    let w2 = weights.view().into_shape_with_order((c_out, ck)).expect("contiguous weights");
    let input = input.as_standard_layout();
    let mut out = Array3::zeros((c_out, h, w));
    forward_sample(
        input.as_slice().unwrap(),
        w2,
        bias,
        h,
        w,
        out.as_slice_mut().unwrap(),
    );
    Ok(out)
}

/// Single-sample backward: gradients w.r.t. input, weights, and bias.
pub fn conv2d_backward(
    input: &Array3<f64>,
    weights: &Array4<f64>,
    grad_out: &Array3<f64>,
) -> Result<(Array3<f64>, Array4<f64>, Array1<f64>)> {
    let (c_in, h, w) = input.dim();
    let input4 = input
        .view()
        .into_shape_with_order((1, c_in, h, w))
        .map_err(|e| Error::invalid("input", e.to_string()))?
        .to_owned();
    let (c_out, gh, gw_) = grad_out.dim();
    let gout4 = grad_out
        .view()
        .into_shape_with_order((1, c_out, gh, gw_))
        .map_err(|e| Error::invalid("grad_out", e.to_string()))?
        .to_owned();
    let (gin, gw, gb) = conv2d_backward_batch(&input4, weights, &gout4)?;
    let gin3 = gin.into_shape_with_order((c_in, h, w)).unwrap();
    Ok((gin3, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct quadruple-loop convolution used as the oracle.
    fn conv_naive(input: &Array3<f64>, weights: &Array4<f64>, bias: &Array1<f64>) -> Array3<f64> {
        let (c_in, h, w) = input.dim();
        let c_out = weights.dim().0;
        let mut out = Array3::zeros((c_out, h, w));
        for co in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for dy in 0..3usize {
                            for dx in 0..3usize {
                                let yy = y as i64 + dy as i64 - 1;
                                let xx = x as i64 + dx as i64 - 1;
                                if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                                    acc += weights[[co, ci, dy, dx]]
                                        * input[[ci, yy as usize, xx as usize]];
                                }
                            }
                        }
                    }
                    out[[co, y, x]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random3(&mut rng, 1, 6, 5);
        let mut weights = Array4::zeros((1, 1, 3, 3));
        weights[[0, 0, 1, 1]] = 1.0;
        let out = conv2d_forward(&input, &weights, &Array1::zeros(1)).unwrap();
        assert!(out.iter().zip(input.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = Array3::zeros((2, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_vec(vec![0.5, -1.5, 2.0]);
        let out = conv2d_forward(&input, &weights, &bias).unwrap();
        for co in 0..3 {
            for v in out.index_axis(ndarray::Axis(0), co) {
                assert_eq!(*v, bias[co]);
            }
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random3(&mut rng, 3, 7, 6);
        let weights = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let fast = conv2d_forward(&input, &weights, &bias).unwrap();
        let slow = conv_naive(&input, &weights, &bias);
        let err = (&fast - &slow).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "max error {err}");
    }

    #[test]
    fn awkward_shapes_match_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (c_in, h, w) in [(1, 1, 1), (2, 1, 5), (2, 5, 1), (3, 2, 2), (1, 4, 7), (2, 8, 3)] {
            let input = random3(&mut rng, c_in, h, w);
            let weights = Array4::from_shape_fn((2, c_in, 3, 3), |_| rng.gen_range(-1.0..1.0));
            let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
            let fast = conv2d_forward(&input, &weights, &bias).unwrap();
            let slow = conv_naive(&input, &weights, &bias);
            let err = (&fast - &slow).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-12, "({c_in},{h},{w}): max error {err}");
        }
    }

    #[test]
    fn banding_does_not_change_results() {
        // Wide input forces multiple row bands through the small budget.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random3(&mut rng, 2, 133, 40);
        let weights = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
        let fast = conv2d_forward(&input, &weights, &bias).unwrap();
        let slow = conv_naive(&input, &weights, &bias);
        let err = (&fast - &slow).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "max error {err}");
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random3(&mut rng, 1, 5, 5);
        let mut weights = Array4::from_shape_fn((2, 1, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-0.5..0.5));
        // Loss = sum(output * probe) gives dL/dout = probe.
        let probe = random3(&mut rng, 2, 5, 5);
        let loss = |w: &Array4<f64>| -> f64 {
            let out = conv2d_forward(&input, w, &bias).unwrap();
            out.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, gw, gb) = conv2d_backward(&input, &weights, &probe).unwrap();
        let h = 1e-3;
        for idx in [[0, 0, 0, 0], [1, 0, 2, 1], [0, 0, 1, 1], [1, 0, 0, 2]] {
            let orig = weights[idx];
            weights[idx] = orig + h;
            let up = loss(&weights);
            weights[idx] = orig - h;
            let down = loss(&weights);
            weights[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = gw[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (fd.abs() + an.abs()).max(1e-8),
                "weight {idx:?}: fd={fd}, analytic={an}"
            );
        }
        // Bias gradient equals the probe sum per channel.
        for co in 0..2 {
            let expect: f64 = probe.index_axis(ndarray::Axis(0), co).iter().sum();
            assert!((gb[co] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut input = random3(&mut rng, 2, 4, 5);
        let weights = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::zeros(3);
        let probe = random3(&mut rng, 3, 4, 5);
        let (gin, _, _) = conv2d_backward(&input, &weights, &probe).unwrap();
        let h = 1e-3;
        for idx in [[0, 0, 0], [1, 3, 4], [0, 2, 2], [1, 0, 4]] {
            let orig = input[idx];
            input[idx] = orig + h;
            let up: f64 = conv2d_forward(&input, &weights, &bias)
                .unwrap()
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| a * b)
                .sum();
            input[idx] = orig - h;
            let down: f64 = conv2d_forward(&input, &weights, &bias)
                .unwrap()
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| a * b)
                .sum();
            input[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = gin[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * (fd.abs() + an.abs()).max(1e-8),
                "input {idx:?}: fd={fd}, analytic={an}"
            );
        }
    }

    #[test]
    fn batch_forward_equals_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = Array4::from_shape_fn((3, 2, 6, 6), |_| rng.gen_range(-1.0..1.0));
        let weights = Array4::from_shape_fn((4, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let out = conv2d_forward_batch(&batch, &weights, &bias).unwrap();
        for i in 0..3 {
            let single = conv2d_forward(
                &batch.index_axis(ndarray::Axis(0), i).to_owned(),
                &weights,
                &bias,
            )
            .unwrap();
            let err = (&single - &out.index_axis(ndarray::Axis(0), i))
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-14);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let input = Array3::<f64>::zeros((2, 4, 4));
        let weights = Array4::<f64>::zeros((3, 5, 3, 3));
        assert!(conv2d_forward(&input, &weights, &Array1::zeros(3)).is_err());
        let bad_kernel = Array4::<f64>::zeros((3, 2, 5, 5));
        assert!(conv2d_forward(&input, &bad_kernel, &Array1::zeros(3)).is_err());
    }
}
