#![allow(clippy::needless_range_loop)] // index loops read naturally in these kernels

//! Small dense symmetric-matrix helpers used by the windowed Gram state.
//!
//! Dimensions here are tiny (the action-feature dimension), so everything is
//! plain row-major `Vec<f64>` with Cholesky factorization for solves and
//! inverses.

/// Dense symmetric matrix, row-major, full storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat {
    n: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// `s * I`
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `M += scale * x x^T`
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let xi = scale * x[i];
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += xi * x[j];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            out[i] = dot(row, x);
        }
        out
    }

    /// `x^T M x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let mut acc = 0.0;
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            acc += x[i] * dot(row, x);
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Lower-triangular Cholesky factor, or `None` when the matrix is not
    /// (numerically) positive definite.
    pub fn cholesky(&self) -> Option<Cholesky> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Inverse via Cholesky; `None` when not positive definite.
    pub fn inverse(&self) -> Option<SymMat> {
        Some(self.cholesky()?.inverse())
    }

    /// Max absolute entry of `self * other - I`; used for on-demand checks
    /// that a maintained inverse is still an inverse.
    pub fn product_identity_residual(&self, other: &SymMat) -> f64 {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += self.get(i, k) * other.get(k, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}

/// Cholesky factorization `M = L L^T` of a positive definite matrix.
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Solve `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * y[k];
            }
            y[i] = sum / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    pub fn inverse(&self) -> SymMat {
        let n = self.n;
        let mut inv = SymMat::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        // Symmetrize to wash out the last-ulp asymmetry from column solves.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, v);
                inv.set(j, i, v);
            }
        }
        inv
    }
}

/// Smallest eigenvalue of a symmetric positive semi-definite matrix, found by
/// bisecting on the largest shift `s` such that `M - s I` stays positive
/// definite.
pub fn min_eigenvalue_spd(m: &SymMat) -> f64 {
    let n = m.dim();
    let mut hi = (0..n).map(|i| m.get(i, i)).fold(0.0_f64, f64::max);
    if hi <= 0.0 {
        return 0.0;
    }
    let is_pd = |shift: f64| -> bool {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted.set(i, i, shifted.get(i, i) - shift);
        }
        shifted.cholesky().is_some()
    };
    if !is_pd(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if is_pd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
