//! INT8 x INT8 -> INT32 GEMM kernels.
//!
//! Everything here computes `out[i][j] = sum_p a[i][p] * bt[j][p]` with both
//! operands stored row-major along the shared dimension. Operands are first
//! widened to zero-padded i16 rows so the AVX2 path can use `vpmaddwd`.
//! Callers guarantee `k <= ACCUM_BOUND`, so no i32 partial sum can overflow.

const LANES: usize = 16;

struct Widened {
    data: Vec<i16>,
    stride: usize,
}

fn widen(src: &[i8], rows: usize, k: usize) -> Widened {
    let stride = k.div_ceil(LANES) * LANES;
    let mut data = Vec::with_capacity(rows * stride);
    for row in src.chunks_exact(k).take(rows) {
        data.extend(row.iter().map(|&s| s as i16));
        data.resize(data.len() + stride - k, 0);
    }
    Widened { data, stride }
}

pub(crate) fn gemm_i8_nt(a: &[i8], bt: &[i8], m: usize, n: usize, k: usize, out: &mut [i32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(bt.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0);
        return;
    }
    let wa = widen(a, m, k);
    let wb = widen(bt, n, k);

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: feature checked at runtime; slices are padded to LANES.
            unsafe { avx2::gemm(&wa.data, &wb.data, m, n, wa.stride, out) };
            return;
        }
    }
    gemm_portable(&wa.data, &wb.data, m, n, wa.stride, out);
}

/// `out[i][j] = sum_p a[p][i] * b[p][j]` with `a: k x m` and `b: k x n`.
/// Suited to a short shared dimension: consecutive `p` pairs are packed so
/// each `vpmaddwd` yields eight finished pair sums without a horizontal add.
pub(crate) fn gemm_i8_tn(a: &[i8], b: &[i8], m: usize, n: usize, k: usize, out: &mut [i32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let kp = k.div_ceil(2);
    let n8 = n.div_ceil(8) * 8;
    let at = |p: usize, i: usize| if p < k { a[p * m + i] as i16 } else { 0 };
    let mut ap = Vec::with_capacity(m * kp);
    for i in 0..m {
        for pp in 0..kp {
            let lo = at(2 * pp, i) as u16 as u32;
            let hi = at(2 * pp + 1, i) as u16 as u32;
            ap.push((lo | (hi << 16)) as i32);
        }
    }
    let mut bp = vec![0i16; kp * n8 * 2];
    for p in 0..k {
        let (pp, t) = (p / 2, p % 2);
        for (j, &v) in b[p * n..(p + 1) * n].iter().enumerate() {
            bp[(pp * n8 + j) * 2 + t] = v as i16;
        }
    }

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: feature checked at runtime; `bp` rows are padded to `n8`.
            unsafe { avx2::gemm_tn(&ap, &bp, m, n, kp, n8, out) };
            return;
        }
    }
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0i32;
            for pp in 0..kp {
                let pair = ap[i * kp + pp];
                let (lo, hi) = (pair as i16 as i32, (pair >> 16) as i16 as i32);
                let base = (pp * n8 + j) * 2;
                acc = acc.wrapping_add(lo * bp[base] as i32 + hi * bp[base + 1] as i32);
            }
            out[i * n + j] = acc;
        }
    }
}

fn gemm_portable(a: &[i16], bt: &[i16], m: usize, n: usize, stride: usize, out: &mut [i32]) {
    for i in 0..m {
        let ar = &a[i * stride..(i + 1) * stride];
        for j in 0..n {
            let br = &bt[j * stride..(j + 1) * stride];
            out[i * n + j] = ar
                .iter()
                .zip(br)
                .fold(0i32, |acc, (&x, &y)| acc.wrapping_add(x as i32 * y as i32));
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::LANES;

    #[inline]
    #[target_feature(enable = "avx2")]
    unsafe fn hsum(v: __m256i) -> i32 {
        let lo = _mm256_castsi256_si128(v);
        let hi = _mm256_extracti128_si256(v, 1);
        let s = _mm_add_epi32(lo, hi);
        let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b01_00_11_10));
        let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
        _mm_cvtsi128_si32(s)
    }

    #[inline]
    #[target_feature(enable = "avx2")]
    unsafe fn load(p: *const i16) -> __m256i {
        _mm256_loadu_si256(p as *const __m256i)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gemm(
        a: &[i16],
        bt: &[i16],
        m: usize,
        n: usize,
        stride: usize,
        out: &mut [i32],
    ) {
        let chunks = stride / LANES;
        let ap = a.as_ptr();
        let bp = bt.as_ptr();
        let m4 = m - m % 4;
        let n2 = n - n % 2;

        let mut i = 0;
        while i < m4 {
            let a0 = ap.add(i * stride);
            let a1 = ap.add((i + 1) * stride);
            let a2 = ap.add((i + 2) * stride);
            let a3 = ap.add((i + 3) * stride);
            let mut j = 0;
            while j < n2 {
                let b0 = bp.add(j * stride);
                let b1 = bp.add((j + 1) * stride);
                let mut c00 = _mm256_setzero_si256();
                let mut c01 = _mm256_setzero_si256();
                let mut c10 = _mm256_setzero_si256();
                let mut c11 = _mm256_setzero_si256();
                let mut c20 = _mm256_setzero_si256();
                let mut c21 = _mm256_setzero_si256();
                let mut c30 = _mm256_setzero_si256();
                let mut c31 = _mm256_setzero_si256();
                for c in 0..chunks {
                    let off = c * LANES;
                    let vb0 = load(b0.add(off));
                    let vb1 = load(b1.add(off));
                    let va = load(a0.add(off));
                    c00 = _mm256_add_epi32(c00, _mm256_madd_epi16(va, vb0));
                    c01 = _mm256_add_epi32(c01, _mm256_madd_epi16(va, vb1));
                    let va = load(a1.add(off));
                    c10 = _mm256_add_epi32(c10, _mm256_madd_epi16(va, vb0));
                    c11 = _mm256_add_epi32(c11, _mm256_madd_epi16(va, vb1));
                    let va = load(a2.add(off));
                    c20 = _mm256_add_epi32(c20, _mm256_madd_epi16(va, vb0));
                    c21 = _mm256_add_epi32(c21, _mm256_madd_epi16(va, vb1));
                    let va = load(a3.add(off));
                    c30 = _mm256_add_epi32(c30, _mm256_madd_epi16(va, vb0));
                    c31 = _mm256_add_epi32(c31, _mm256_madd_epi16(va, vb1));
                }
                out[i * n + j] = hsum(c00);
                out[i * n + j + 1] = hsum(c01);
                out[(i + 1) * n + j] = hsum(c10);
                out[(i + 1) * n + j + 1] = hsum(c11);
                out[(i + 2) * n + j] = hsum(c20);
                out[(i + 2) * n + j + 1] = hsum(c21);
                out[(i + 3) * n + j] = hsum(c30);
                out[(i + 3) * n + j + 1] = hsum(c31);
                j += 2;
            }
            for j in n2..n {
                for r in 0..4 {
                    out[(i + r) * n + j] = dot(ap.add((i + r) * stride), bp.add(j * stride), chunks);
                }
            }
            i += 4;
        }
        for i in m4..m {
            for j in 0..n {
                out[i * n + j] = dot(ap.add(i * stride), bp.add(j * stride), chunks);
            }
        }
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gemm_tn(
        ap: &[i32],
        bp: &[i16],
        m: usize,
        n: usize,
        kp: usize,
        n8: usize,
        out: &mut [i32],
    ) {
        let mut tmp = [0i32; 8];
        let mut j = 0;
        while j < n8 {
            let width = (n8 - j).min(32) / 8;
            for i in 0..m {
                let arow = &ap[i * kp..(i + 1) * kp];
                let mut acc = [_mm256_setzero_si256(); 4];
                if width == 4 {
                    let (mut c0, mut c1, mut c2, mut c3) = (acc[0], acc[1], acc[2], acc[3]);
                    for (pp, &pair) in arow.iter().enumerate() {
                        let va = _mm256_set1_epi32(pair);
                        let base = bp.as_ptr().add((pp * n8 + j) * 2);
                        c0 = _mm256_add_epi32(c0, _mm256_madd_epi16(va, load(base)));
                        c1 = _mm256_add_epi32(c1, _mm256_madd_epi16(va, load(base.add(16))));
                        c2 = _mm256_add_epi32(c2, _mm256_madd_epi16(va, load(base.add(32))));
                        c3 = _mm256_add_epi32(c3, _mm256_madd_epi16(va, load(base.add(48))));
                    }
                    acc = [c0, c1, c2, c3];
                } else {
                    for (pp, &pair) in arow.iter().enumerate() {
                        let va = _mm256_set1_epi32(pair);
                        let base = bp.as_ptr().add((pp * n8 + j) * 2);
                        for (r, c) in acc.iter_mut().enumerate().take(width) {
                            *c = _mm256_add_epi32(*c, _mm256_madd_epi16(va, load(base.add(16 * r))));
                        }
                    }
                }
                for (r, c) in acc.iter().enumerate().take(width) {
                    let col = j + 8 * r;
                    let row = &mut out[i * n..(i + 1) * n];
                    if col + 8 <= n {
                        _mm256_storeu_si256(row.as_mut_ptr().add(col) as *mut __m256i, *c);
                    } else {
                        _mm256_storeu_si256(tmp.as_mut_ptr() as *mut __m256i, *c);
                        row[col..].copy_from_slice(&tmp[..n - col]);
                    }
                }
            }
            j += 32;
        }
    }

    #[inline]
    #[target_feature(enable = "avx2")]
    unsafe fn dot(a: *const i16, b: *const i16, chunks: usize) -> i32 {
        let mut acc = _mm256_setzero_si256();
        for c in 0..chunks {
            let off = c * LANES;
            acc = _mm256_add_epi32(acc, _mm256_madd_epi16(load(a.add(off)), load(b.add(off))));
        }
        hsum(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(a: &[i8], bt: &[i8], m: usize, n: usize, k: usize) -> Vec<i64> {
        let mut out = vec![0i64; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] as i64 * bt[j * k + p] as i64).sum();
            }
        }
        out
    }

    #[test]
    fn transposed_a_kernel_matches_oracle() {
        let mut seed = 777u32;
        let mut next = || {
            seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12345);
            (((seed >> 16) % 255) as i32 - 127) as i8
        };
        for &(m, n, k) in &[(1, 1, 1), (3, 5, 2), (7, 9, 3), (2, 33, 32), (5, 40, 31), (17, 70, 64)] {
            let a: Vec<i8> = (0..k * m).map(|_| next()).collect();
            let b: Vec<i8> = (0..k * n).map(|_| next()).collect();
            let mut out = vec![0; m * n];
            gemm_i8_tn(&a, &b, m, n, k, &mut out);
            let at: Vec<i8> = (0..m * k).map(|x| a[(x % k) * m + x / k]).collect();
            let bt: Vec<i8> = (0..n * k).map(|x| b[(x % k) * n + x / k]).collect();
            let want = oracle(&at, &bt, m, n, k);
            assert_eq!(out.iter().map(|&v| v as i64).collect::<Vec<_>>(), want, "{m}x{n}x{k}");
        }
    }

    #[test]
    fn simd_and_portable_agree_on_awkward_shapes() {
        let mut seed = 12345u32;
        let mut next = || {
            seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12345);
            (((seed >> 16) % 255) as i32 - 127) as i8
        };
        for &(m, n, k) in &[(1, 1, 1), (5, 3, 17), (9, 7, 33), (4, 2, 16), (13, 11, 100)] {
            let a: Vec<i8> = (0..m * k).map(|_| next()).collect();
            let b: Vec<i8> = (0..n * k).map(|_| next()).collect();
            let mut out = vec![0; m * n];
            gemm_i8_nt(&a, &b, m, n, k, &mut out);
            let want = oracle(&a, &b, m, n, k);
            assert_eq!(out.iter().map(|&v| v as i64).collect::<Vec<_>>(), want);

            let wa = widen(&a, m, k);
            let wb = widen(&b, n, k);
            let mut port = vec![0; m * n];
            gemm_portable(&wa.data, &wb.data, m, n, wa.stride, &mut port);
            assert_eq!(port, out);
        }
    }

    #[test]
    fn extreme_values_at_long_k() {
        let k = 4096;
        let a = vec![-127i8; 3 * k];
        let b = vec![127i8; 2 * k];
        let mut out = vec![0; 6];
        gemm_i8_nt(&a, &b, 3, 2, k, &mut out);
        assert!(out.iter().all(|&v| v as i64 == -(127 * 127 * k as i64)));
    }
}
