//! FP32 GEMM helpers over `matrixmultiply`, with op accounting.

use crate::costmeter::OpCounters;

#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    counters: &OpCounters,
) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: the strides describe views that lie inside `a`, `b` and `c`.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    counters.record_fp32_gemm(m, n, k);
    c
}

/// `a (m x k) * b^T` with `b` stored `n x k`.
pub(crate) fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, counters: &OpCounters) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    sgemm(m, k, n, a, (k as isize, 1), b, (1, k as isize), counters)
}

/// `a (m x k) * b (k x n)`.
pub(crate) fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, counters: &OpCounters) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    sgemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), counters)
}

/// `a^T * b` with `a` stored `k x m` and `b` stored `k x n`.
pub(crate) fn matmul_tn(a: &[f32], b: &[f32], k: usize, m: usize, n: usize, counters: &OpCounters) -> Vec<f32> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    sgemm(m, k, n, a, (1, m as isize), b, (n as isize, 1), counters)
}
