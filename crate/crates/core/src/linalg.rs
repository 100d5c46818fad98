//! Dense 64-bit matrices and a one-sided Jacobi SVD.
//!
//! Weight matrices handled by the morphisms are small (a few thousand rows at
//! most), so the decomposition favours accuracy over speed: Hestenes' one-sided
//! Jacobi iterates plane rotations on the columns until every pair is
//! numerically orthogonal.

use thiserror::Error;

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;
/// Relative off-diagonal threshold `|a_p . a_q| <= tol * |a_p| |a_q|`.
pub const CONVERGENCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be non-empty, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("matrix data has {len} values but shape is {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("matrix contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("jacobi svd did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("cannot multiply {a_rows}x{a_cols} by {b_rows}x{b_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                a_rows: self.rows,
                a_cols: self.cols,
                b_rows: other.rows,
                b_cols: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`; shapes must agree.
    pub fn frobenius_distance(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// First `n` columns as a new matrix.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    pub fn leading_rows(&self, n: usize) -> Matrix {
        Matrix::from_fn(n, self.cols, |i, j| self.get(i, j))
    }
}

/// Thin SVD `A = U diag(sigma) V^T` with `k = min(rows, cols)` components.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank_capacity(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n, k) = (self.u.rows(), self.v.rows(), self.sigma.len());
        Matrix::from_fn(m, n, |i, j| {
            (0..k)
                .map(|l| self.u.get(i, l) * self.sigma[l] * self.v.get(j, l))
                .sum()
        })
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult, LinalgError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::Empty {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if let Some(index) = a.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { index });
    }
    if a.rows >= a.cols {
        let (u, sigma, v) = jacobi_tall(a)?;
        Ok(finish(u, sigma, v))
    } else {
        // A^T = V S U^T, so run on the transpose and swap the factors.
        let (v, sigma, u) = jacobi_tall(&a.transpose())?;
        Ok(finish(u, sigma, v))
    }
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
/// Returns unsorted `(U, sigma, V)`.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix), LinalgError> {
    let (m, n) = (a.rows, a.cols);
    // Column-major working copy so rotations touch contiguous memory.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // Columns at round-off level carry no direction worth orthogonalising.
    let frob_sq: f64 = cols.iter().flatten().map(|x| x * x).sum();
    let negligible = (m.max(n) as f64 * f64::EPSILON).powi(2) * frob_sq;
    let mut converged = false;
    let mut residual = 0.0f64;
    for _sweep in 0..MAX_SWEEPS {
        residual = 0.0;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(rel);
                if rel <= CONVERGENCE_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let u = Matrix::from_fn(m, n, |i, j| {
        if sigma[j] > 0.0 {
            cols[j][i] / sigma[j]
        } else {
            0.0
        }
    });
    let v = Matrix::from_fn(n, n, |i, j| v[j][i]);
    Ok((u, sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Sort descending, repair left vectors of (numerically) null directions and
/// fix signs so the largest-magnitude entry of each `u` column is non-negative.
fn finish(u: Matrix, sigma: Vec<f64>, v: Matrix) -> SvdResult {
    let k = sigma.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let mut u = Matrix::from_fn(u.rows, k, |i, j| u.get(i, order[j]));
    let mut v = Matrix::from_fn(v.rows, k, |i, j| v.get(i, order[j]));

    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = smax * f64::EPSILON * (u.rows.max(v.rows) as f64);
    for j in 0..k {
        if sigma[j] <= cutoff {
            complete_column(&mut u, j);
        }
    }

    for j in 0..k {
        let mut best = 0.0f64;
        for i in 0..u.rows {
            let x = u.get(i, j);
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            for i in 0..u.rows {
                u.set(i, j, -u.get(i, j));
            }
            for i in 0..v.rows {
                v.set(i, j, -v.get(i, j));
            }
        }
    }
    SvdResult { u, sigma, v }
}

/// Replace column `j` of `u` by a unit vector orthogonal to every other column
/// that carries signal (Gram-Schmidt over the standard basis).
fn complete_column(u: &mut Matrix, j: usize) {
    let m = u.rows;
    let k = u.cols;
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for other in 0..k {
                if other == j {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| cand[i] * u.get(i, other)).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= dot * u.get(i, other);
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = Some(cand);
        }
        if best_norm > 0.5 {
            break;
        }
    }
    if let Some(cand) = best {
        for i in 0..m {
            u.set(i, j, cand[i] / best_norm);
        }
    }
}

/// Rank-`r` truncation: `(U_r diag(sigma_r), V_r^T)`, shapes `m x r` and `r x n`.
pub fn truncate(s: &SvdResult, r: usize) -> Result<(Matrix, Matrix), LinalgError> {
    let k = s.sigma.len();
    if r == 0 || r > k {
        return Err(LinalgError::RankOutOfRange { rank: r, max: k });
    }
    let a_tilde = Matrix::from_fn(s.u.rows(), r, |i, j| s.u.get(i, j) * s.sigma[j]);
    let v_t = Matrix::from_fn(r, s.v.rows(), |i, j| s.v.get(j, i));
    Ok((a_tilde, v_t))
}
