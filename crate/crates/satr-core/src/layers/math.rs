//! Tight inner-loop helpers shared by the layer kernels.
//!
//! `dot` uses four fixed accumulators: fast enough for desk-scale batches
//! and the summation order never changes, so results are reproducible.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// `out += m^T v` for a row-major `rows x cols` matrix; `out` has `cols` entries.
#[inline]
pub(crate) fn matvec_t_accum(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for r in 0..rows {
        axpy(v[r], &m[r * cols..(r + 1) * cols], out);
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
