//! Small dense kernels. Each has one fixed order of fused multiply-adds; the
//! AVX2/FMA build of the same code only widens the registers, so results do
//! not depend on the CPU.

const LANES: usize = 8;

#[inline(always)]
fn reduce(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn dot_portable(a: &[f64], b: &[f64]) -> f64 {
    dot4_portable(a, [b, b, b, b])[0]
}

/// Four dot products sharing the left operand.
#[inline(always)]
fn dot4_portable(w: &[f64], x: [&[f64]; 4]) -> [f64; 4] {
    let n = w.len();
    let body = n - n % LANES;
    let mut acc = [[0.0; LANES]; 4];
    let mut i = 0;
    while i < body {
        let wc = &w[i..i + LANES];
        for (acc, x) in acc.iter_mut().zip(&x) {
            let xc = &x[i..i + LANES];
            for l in 0..LANES {
                acc[l] = wc[l].mul_add(xc[l], acc[l]);
            }
        }
        i += LANES;
    }
    let mut out = [0.0; 4];
    for ((o, acc), x) in out.iter_mut().zip(&acc).zip(&x) {
        let mut tail = 0.0;
        for j in body..n {
            tail = w[j].mul_add(x[j], tail);
        }
        *o = reduce(acc) + tail;
    }
    out
}

#[inline(always)]
fn axpy_portable(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = alpha.mul_add(*xi, *yi);
    }
}

/// `y += a0·x0 + a1·x1 + a2·x2 + a3·x3`, accumulated in that order.
#[inline(always)]
fn axpy4_portable(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for j in 0..n {
        let mut v = y[j];
        v = a[0].mul_add(x0[j], v);
        v = a[1].mul_add(x1[j], v);
        v = a[2].mul_add(x2[j], v);
        v = a[3].mul_add(x3[j], v);
        y[j] = v;
    }
}

#[cfg(target_arch = "x86_64")]
mod wide {
    use std::arch::x86_64::*;

    /// Lanes 0..4 and 4..8 of the portable accumulator live in `lo` and `hi`.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn finish(lo: __m256d, hi: __m256d, w: &[f64], x: &[f64], body: usize) -> f64 {
        let mut s = [0.0; 4];
        _mm256_storeu_pd(s.as_mut_ptr(), _mm256_add_pd(lo, hi));
        let mut tail = 0.0;
        for j in body..w.len() {
            tail = w[j].mul_add(x[j], tail);
        }
        ((s[0] + s[1]) + (s[2] + s[3])) + tail
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn dot4(w: &[f64], x: [&[f64]; 4]) -> [f64; 4] {
        let n = w.len();
        let body = n - n % super::LANES;
        let (wp, xp) = (w.as_ptr(), x.map(|x| x.as_ptr()));
        let mut lo = [_mm256_setzero_pd(); 4];
        let mut hi = [_mm256_setzero_pd(); 4];
        let mut i = 0;
        while i < body {
            let w0 = _mm256_loadu_pd(wp.add(i));
            let w1 = _mm256_loadu_pd(wp.add(i + 4));
            for s in 0..4 {
                lo[s] = _mm256_fmadd_pd(w0, _mm256_loadu_pd(xp[s].add(i)), lo[s]);
                hi[s] = _mm256_fmadd_pd(w1, _mm256_loadu_pd(xp[s].add(i + 4)), hi[s]);
            }
            i += super::LANES;
        }
        [0, 1, 2, 3].map(|s| finish(lo[s], hi[s], w, x[s], body))
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let body = n - n % super::LANES;
        let (ap, bp) = (a.as_ptr(), b.as_ptr());
        let mut lo = _mm256_setzero_pd();
        let mut hi = _mm256_setzero_pd();
        let mut i = 0;
        while i < body {
            lo = _mm256_fmadd_pd(_mm256_loadu_pd(ap.add(i)), _mm256_loadu_pd(bp.add(i)), lo);
            hi = _mm256_fmadd_pd(_mm256_loadu_pd(ap.add(i + 4)), _mm256_loadu_pd(bp.add(i + 4)), hi);
            i += super::LANES;
        }
        finish(lo, hi, a, b, body)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        super::axpy_portable(alpha, x, y)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
        super::axpy4_portable(a, x, y)
    }

    pub fn available() -> bool {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
}

macro_rules! dispatch {
    ($wide:ident, $portable:ident, $($arg:expr),*) => {{
        #[cfg(target_arch = "x86_64")]
        if wide::available() {
            // SAFETY: the CPU supports AVX2 and FMA.
            return unsafe { wide::$wide($($arg),*) };
        }
        $portable($($arg),*)
    }};
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    dispatch!(dot, dot_portable, a, b)
}

pub fn dot4(w: &[f64], x: [&[f64]; 4]) -> [f64; 4] {
    assert!(x.iter().all(|x| x.len() == w.len()));
    dispatch!(dot4, dot4_portable, w, x)
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    dispatch!(axpy, axpy_portable, alpha, x, y)
}

pub fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    assert!(x.iter().all(|x| x.len() == y.len()));
    dispatch!(axpy4, axpy4_portable, a, x, y)
}

/// `out[r][o] = bias[o] + w[o] · x[r]` for row-major `x` (rows × k) and `w` (outputs × k).
pub fn affine(x: &[f64], k: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let rows = x.len() / k;
    let outputs = bias.len();
    for (o, wr) in w.chunks_exact(k).enumerate() {
        let mut r = 0;
        while r + 4 <= rows {
            let xs = [0, 1, 2, 3].map(|i| &x[(r + i) * k..(r + i + 1) * k]);
            let d = dot4(wr, xs);
            for i in 0..4 {
                out[(r + i) * outputs + o] = bias[o] + d[i];
            }
            r += 4;
        }
        for r in r..rows {
            out[r * outputs + o] = bias[o] + dot(wr, &x[r * k..(r + 1) * k]);
        }
    }
}

/// `y += Σ_r coef[r] · x[r]` over the rows of `x` (each `y.len()` wide), four at a time.
pub fn combine(coef: &[f64], x: &[f64], stride: usize, offset: usize, y: &mut [f64]) {
    let n = y.len();
    let row = |r: usize| &x[r * stride + offset..r * stride + offset + n];
    let mut r = 0;
    while r + 4 <= coef.len() {
        axpy4([coef[r], coef[r + 1], coef[r + 2], coef[r + 3]], [row(r), row(r + 1), row(r + 2), row(r + 3)], y);
        r += 4;
    }
    for r in r..coef.len() {
        axpy(coef[r], row(r), y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * f).sin()).collect()
    }

    #[test]
    fn kernels_match_portable() {
        let a = vecs(37, 0.37);
        let b = vecs(37, 1.3);
        assert_eq!(dot(&a, &b).to_bits(), dot_portable(&a, &b).to_bits());
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        let d4 = dot4(&a, [&b, &a, &b, &a]);
        assert_eq!(d4[0].to_bits(), dot(&a, &b).to_bits());
        assert_eq!(d4, dot4_portable(&a, [&b, &a, &b, &a]));
        let (mut y1, mut y2) = (b.clone(), b.clone());
        axpy4([0.3, -1.0, 2.0, 0.5], [&a, &b, &a, &b], &mut y1);
        axpy4_portable([0.3, -1.0, 2.0, 0.5], [&a, &b, &a, &b], &mut y2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn affine_and_combine_match_naive() {
        let (rows, k, outs) = (7, 5, 3);
        let x = vecs(rows * k, 0.7);
        let w = vecs(outs * k, 1.1);
        let bias = vecs(outs, 2.0);
        let mut out = vec![0.0; rows * outs];
        affine(&x, k, &w, &bias, &mut out);
        for r in 0..rows {
            for o in 0..outs {
                let want: f64 = bias[o] + (0..k).map(|j| w[o * k + j] * x[r * k + j]).sum::<f64>();
                assert!((out[r * outs + o] - want).abs() < 1e-12);
            }
        }
        let coef = vecs(rows, 0.3);
        let mut y = vec![0.0; k];
        combine(&coef, &x, k, 0, &mut y);
        for j in 0..k {
            let want: f64 = (0..rows).map(|r| coef[r] * x[r * k + j]).sum();
            assert!((y[j] - want).abs() < 1e-12);
        }
    }
}
