// temporary throughput probe
use groundroll_core::nn::*;
use ndarray::{Array1, Array4};
use std::time::Instant;

fn main() {
    let batch = 32;
    let x = Array4::from_elem((batch, 64, 64, 64), 0.1);
    let w = Array4::from_elem((64, 64, 3, 3), 0.01);
    let b = Array1::zeros(64);
    // warmup
    let _ = conv2d_forward_batch(&x, &w, &b).unwrap();
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let _ = conv2d_forward_batch(&x, &w, &b).unwrap();
    }
    let fwd = t.elapsed().as_secs_f64() / reps as f64;
    let macs = (batch * 64 * 64 * 64 * 64 * 9) as f64;
    println!("forward: {:.3} s/layer-batch, {:.2} GMAC/s", fwd, macs / fwd / 1e9);

    let gout = Array4::from_elem((batch, 64, 64, 64), 0.05);
    let t = Instant::now();
    for _ in 0..reps {
        let _ = conv2d_backward_batch(&x, &w, &gout).unwrap();
    }
    let bwd = t.elapsed().as_secs_f64() / reps as f64;
    println!("backward: {:.3} s/layer-batch, {:.2} GMAC/s", bwd, 2.0 * macs / bwd / 1e9);

    // rough full step estimate: 10 heavy layers fwd + bwd
    println!("est. step: {:.2} s", 10.0 * (fwd + bwd));
}
