//! Quantize two random FP32 matrices, multiply them with the INT8 kernel and
//! compare against the FP32 product. Also reports kernel throughput.
//!
//!     cargo run --release --example quantize_and_matmul

use std::time::Instant;

use ffint8::costmeter::OpCounters;
use ffint8::qtensor::{
    compute_scale, int8_matmul_nt, quantize_nearest, quantize_stochastic, RealTensor,
};
use ffint8::rng::{seeded_rng, NoiseStream};
use rand::Rng;

fn main() -> ffint8::Result<()> {
    let (m, k, n) = (32, 784, 500);
    let mut rng = seeded_rng(42, 0);
    let x = RealTensor::matrix(m, k, (0..m * k).map(|_| rng.random::<f32>()).collect())?;
    let w = RealTensor::matrix(n, k, (0..n * k).map(|_| rng.random_range(-0.05..0.05)).collect())?;

    let xq = quantize_stochastic(&x, compute_scale(&x)?, NoiseStream::new(7))?;
    let wq = quantize_nearest(&w, compute_scale(&w)?)?;
    let counters = OpCounters::new();
    let y = int8_matmul_nt(&xq, &wq, &counters)?.dequantize();

    let mut max_err = 0.0f32;
    let mut max_ref = 0.0f32;
    for i in 0..m {
        for j in 0..n {
            let exact: f32 = x.row(i).iter().zip(w.row(j)).map(|(a, b)| a * b).sum();
            max_err = max_err.max((exact - y.data()[i * n + j]).abs());
            max_ref = max_ref.max(exact.abs());
        }
    }
    println!("{m}x{k} * ({n}x{k})^T: max |int8 - fp32| = {max_err:.5} (max |fp32| = {max_ref:.3})");

    let reps = 200;
    let start = Instant::now();
    for _ in 0..reps {
        int8_matmul_nt(&xq, &wq, &counters)?;
    }
    let secs = start.elapsed().as_secs_f64();
    let macs = (reps * m * n * k) as f64;
    println!("throughput: {:.2} GMAC/s", macs / secs / 1e9);
    println!("counters: {:?}", counters.snapshot());
    Ok(())
}
