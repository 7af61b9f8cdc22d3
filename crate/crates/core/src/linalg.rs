//! Small dense linear algebra on row-major slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use thiserror::Error;

/// Largest diagonal jitter tried before a factorization is reported as failed.
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },
    #[error("expected a square matrix, got {0} elements")]
    NotSquare(usize),
}

/// `c = op(a) * op(b)` where `op` optionally transposes. `a` is stored as
/// `(m, k)` or `(k, m)` when transposed; likewise `b` as `(k, n)` or `(n, k)`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
    beta: f64,
) {
    let av = if a_t {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let bv = if b_t {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, false, m, k, n, &mut c, 0.0);
    c
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factors `a + jitter·I`, doubling the jitter on failure up to [`MAX_JITTER`].
    pub fn with_jitter(a: &[f64], n: usize, jitter: f64) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::NotSquare(a.len()));
        }
        let mut j = jitter.max(0.0);
        loop {
            if let Some(lower) = factor(a, n, j) {
                return Ok(Cholesky { n, lower, jitter: j });
            }
            let next = if j == 0.0 { 1e-10 } else { j * 2.0 };
            if next > MAX_JITTER {
                return Err(LinalgError::NotPositiveDefinite { jitter: j });
            }
            j = next;
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Solves `L Y = B` in place; `b` is `n × cols`.
    pub fn forward_subst(&self, b: &mut [f64], cols: usize) {
        let n = self.n;
        let l = &self.lower;
        for i in 0..n {
            let d = l[i * n + i];
            for c in 0..cols {
                let mut s = b[i * cols + c];
                for k in 0..i {
                    s -= l[i * n + k] * b[k * cols + c];
                }
                b[i * cols + c] = s / d;
            }
        }
    }

    /// Solves `Lᵀ X = Y` in place; `b` is `n × cols`.
    pub fn backward_subst(&self, b: &mut [f64], cols: usize) {
        let n = self.n;
        let l = &self.lower;
        for i in (0..n).rev() {
            let d = l[i * n + i];
            for c in 0..cols {
                let mut s = b[i * cols + c];
                for k in i + 1..n {
                    s -= l[k * n + i] * b[k * cols + c];
                }
                b[i * cols + c] = s / d;
            }
        }
    }

    /// `(A + jitter·I)⁻¹ B` by two triangular solves.
    pub fn solve(&self, b: &[f64], cols: usize) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_subst(&mut x, cols);
        self.backward_subst(&mut x, cols);
        x
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.lower[i * self.n + i].ln()).sum::<f64>() * 2.0
    }
}

fn factor(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
