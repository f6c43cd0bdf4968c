//! Safe wrappers over the blocked matrix-multiply kernel plus a few row-wise
//! helpers shared by the graph ops.

use super::Real;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

/// Strided mutable matrix view.
pub(crate) struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` matrix with contiguous rows.
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

impl<'a, T> MatMut<'a, T> {
    pub fn dense(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c <- alpha * a b + beta * c`.
pub(crate) fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // Nothing to accumulate; honour beta.
        for i in 0..c.rows {
            for j in 0..c.cols {
                let x = &mut c.data[i * c.rs + j * c.cs];
                *x = if beta == T::ZERO { T::ZERO } else { *x * beta };
            }
        }
        return;
    }
    // SAFETY: the views were bounds-checked above for their full extents.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// In-place numerically stable softmax over the first `len` entries of `row`;
/// entries past `len` are set to zero.
pub(crate) fn softmax_prefix<T: Real>(row: &mut [T], len: usize) {
    let mut max = row[0];
    for &x in &row[1..len] {
        max = max.max(x);
    }
    let mut sum = T::ZERO;
    for x in &mut row[..len] {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::ONE / sum;
    for x in &mut row[..len] {
        *x *= inv;
    }
    for x in &mut row[len..] {
        *x = T::ZERO;
    }
}

pub(crate) fn silu<T: Real>(x: T) -> T {
    x / (T::ONE + (-x).exp())
}

pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = T::ONE / (T::ONE + (-x).exp());
    s * (T::ONE + x * (T::ONE - s))
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Exact (erf-based) GELU.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Per-frequency `(cos, sin)` table for rotating `dim`-wide vectors at
/// positions `0..positions`. Entry `p * dim/2 + k` rotates the pair
/// `(2k, 2k+1)` by `p * base^(-2k/dim)`.
pub(crate) fn rope_table(positions: usize, dim: usize, base: f64) -> (alloc::vec::Vec<f64>, alloc::vec::Vec<f64>) {
    let half = dim / 2;
    let mut cos = alloc::vec::Vec::with_capacity(positions * half);
    let mut sin = alloc::vec::Vec::with_capacity(positions * half);
    for p in 0..positions {
        for k in 0..half {
            let freq = libm::pow(base, -(2.0 * k as f64) / dim as f64);
            let angle = p as f64 * freq;
            cos.push(libm::cos(angle));
            sin.push(libm::sin(angle));
        }
    }
    (cos, sin)
}

/// Rotates consecutive pairs of `v` with the given per-pair cos/sin.
/// `inverse` rotates by the negated angles.
#[inline]
pub(crate) fn rotate_pairs<T: Real>(v: &mut [T], cos: &[f64], sin: &[f64], inverse: bool) {
    for (k, pair) in v.chunks_exact_mut(2).enumerate() {
        let c = T::from_f64(cos[k]);
        let s = if inverse { T::from_f64(-sin[k]) } else { T::from_f64(sin[k]) };
        let (x0, x1) = (pair[0], pair[1]);
        pair[0] = x0 * c - x1 * s;
        pair[1] = x0 * s + x1 * c;
    }
}
