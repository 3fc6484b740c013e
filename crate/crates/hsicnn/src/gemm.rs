//! Flat row-major matrix kernels for the batched f32 training path.
//!
//! Loop orders keep the innermost loop free of reductions so it vectorizes:
//! every kernel accumulates whole output rows with axpy-style updates.
//! Accumulation order over the shared dimension is fixed and ascending, so
//! results are reproducible run to run.

/// `c[m x n] += a[m x k] . b[k x n]`
pub fn gemm_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (&aik, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if aik == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c[m x n] += a^T . b` where `a` is stored `[k x m]`.
pub fn gemm_ta_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for (arow, brow) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
        for (i, &aki) in arow.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
}

/// `dst[cols x rows] = src[rows x cols]^T`, blocked so neither side streams
/// with large strides.
pub fn transpose(dst: &mut [f32], src: &[f32], rows: usize, cols: usize) {
    debug_assert_eq!(dst.len(), rows * cols);
    debug_assert_eq!(src.len(), rows * cols);
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        let r1 = (r0 + BLOCK).min(rows);
        for c0 in (0..cols).step_by(BLOCK) {
            let c1 = (c0 + BLOCK).min(cols);
            for r in r0..r1 {
                for c in c0..c1 {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Pcg32, STREAM_CHECK};

    fn naive_mul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    fn random(len: usize, rng: &mut Pcg32) -> Vec<f32> {
        (0..len).map(|_| rng.range_f64(-1.0, 1.0) as f32).collect()
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = Pcg32::new(31, STREAM_CHECK);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (8, 16, 7), (13, 2, 9)] {
            let a = random(m * k, &mut rng);
            let b = random(k * n, &mut rng);
            let want = naive_mul(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            gemm_acc(&mut c, &a, &b, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gemm_ta_matches_naive_on_transposed_a() {
        let mut rng = Pcg32::new(32, STREAM_CHECK);
        for &(m, k, n) in &[(4, 3, 6), (7, 9, 2), (1, 5, 8)] {
            let a_t = random(k * m, &mut rng); // stored [k x m]
            let b = random(k * n, &mut rng);
            // Materialize a = a_t^T, then multiply naively.
            let mut a = vec![0.0; m * k];
            for kk in 0..k {
                for i in 0..m {
                    a[i * k + kk] = a_t[kk * m + i];
                }
            }
            let want = naive_mul(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            gemm_ta_acc(&mut c, &a_t, &b, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn transpose_round_trips() {
        let mut rng = Pcg32::new(33, STREAM_CHECK);
        let (rows, cols) = (37, 53);
        let src = random(rows * cols, &mut rng);
        let mut t = vec![0.0; rows * cols];
        let mut back = vec![0.0; rows * cols];
        transpose(&mut t, &src, rows, cols);
        transpose(&mut back, &t, cols, rows);
        assert_eq!(src, back);
        assert_eq!(t[3 * rows + 5], src[5 * cols + 3]);
    }
}
