//! Dense linear algebra used by the reduction: a column-pivoted Householder
//! QR with rank detection, condition estimates, and numeric rank.

use nalgebra::{DMatrix, DVector};

/// Householder QR with column pivoting, A·P = Q·R.
///
/// The factorization always runs over all columns so that the pivot order is
/// a full permutation; `rank` counts diagonal entries above the tolerance.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    /// R in the upper triangle, Householder vectors (unit leading entry implied) below.
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    /// `perm[k]` is the original column in position k.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    /// `rank_tol` is relative to |R₀₀|.
    pub fn new(mut a: DMatrix<f64>, rank_tol: f64) -> Self {
        let (m, n) = a.shape();
        let steps = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![0.0; steps];
        for k in 0..steps {
            // Partial norms recomputed exactly each step; cheap at the sizes used here.
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..n {
                let nrm = a.view((k, j), (m - k, 1)).norm_squared();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = j;
                }
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }
            let x0 = a[(k, k)];
            let norm = a.view((k, k), (m - k, 1)).norm();
            if norm == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            let beta = if x0 >= 0.0 { -norm } else { norm };
            let scale = 1.0 / (x0 - beta);
            for i in k + 1..m {
                a[(i, k)] *= scale;
            }
            tau[k] = (beta - x0) / beta;
            a[(k, k)] = beta;
            for j in k + 1..n {
                let mut s = a[(k, j)];
                for i in k + 1..m {
                    s += a[(i, k)] * a[(i, j)];
                }
                s *= tau[k];
                a[(k, j)] -= s;
                for i in k + 1..m {
                    let v = a[(i, k)];
                    a[(i, j)] -= s * v;
                }
            }
        }
        let r0 = if steps > 0 { a[(0, 0)].abs() } else { 0.0 };
        let rank = (0..steps).take_while(|&k| r0 > 0.0 && a[(k, k)].abs() > rank_tol * r0).count();
        PivotedQr { qr: a, tau, perm, rank }
    }

    pub fn diag_r(&self) -> Vec<f64> {
        (0..self.tau.len()).map(|k| self.qr[(k, k)]).collect()
    }

    /// Upper-triangular factor (min(m, n) × n, pivoted column order).
    pub fn r(&self) -> DMatrix<f64> {
        let (m, n) = self.qr.shape();
        let s = m.min(n);
        DMatrix::from_fn(s, n, |i, j| if j >= i { self.qr[(i, j)] } else { 0.0 })
    }

    /// b ← Qᵀ b.
    pub fn apply_qt(&self, b: &mut DVector<f64>) {
        let m = self.qr.nrows();
        for k in 0..self.tau.len() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = b[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// Basic least-squares solution: only the first `rank` pivoted columns are
    /// used, the remaining unknowns are set to zero.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = b.clone();
        self.apply_qt(&mut c);
        let n = self.qr.ncols();
        let r = self.rank;
        let mut y = vec![0.0; r];
        for i in (0..r).rev() {
            let mut s = c[i];
            for j in i + 1..r {
                s -= self.qr[(i, j)] * y[j];
            }
            y[i] = s / self.qr[(i, i)];
        }
        let mut x = DVector::zeros(n);
        for (k, &yk) in y.iter().enumerate() {
            x[self.perm[k]] = yk;
        }
        x
    }

    /// Euclidean norm of the least-squares residual for right-hand side b.
    pub fn residual_norm(&self, b: &DVector<f64>) -> f64 {
        let mut c = b.clone();
        self.apply_qt(&mut c);
        c.rows(self.rank, c.len() - self.rank).norm()
    }
}

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves A x = b by LU and reports the 1-norm condition number ‖A‖₁‖A⁻¹‖₁.
/// Returns `None` when A is exactly singular.
pub fn lu_solve_cond(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let lu = a.clone().lu();
    let inv = lu.try_inverse()?;
    let x = &inv * b;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() {
        return None;
    }
    Some((x, cond))
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Count of singular values above `rel_tol · σ₁`.
pub fn numeric_rank(sv: &[f64], rel_tol: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().filter(|&&s| s > rel_tol * s1).count(),
        _ => 0,
    }
}

/// Compresses a tall matrix to the triangular factor R of A = QR, with
/// RᵀR = AᵀA and ‖Ax − b‖ preserved for any column subset when b is appended.
pub fn compress_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let mut acc: Option<DMatrix<f64>> = None;
    // Blockwise so memory stays bounded for long datasets.
    let block = 4096;
    let mut start = 0;
    while start < a.nrows() {
        let len = block.min(a.nrows() - start);
        let chunk = a.rows(start, len).into_owned();
        let stacked = match acc.take() {
            Some(r) => {
                let mut s = DMatrix::zeros(r.nrows() + len, n);
                s.rows_mut(0, r.nrows()).copy_from(&r);
                s.rows_mut(r.nrows(), len).copy_from(&chunk);
                s
            }
            None => chunk,
        };
        let r = stacked.qr().r();
        acc = Some(r);
        start += len;
    }
    let r = acc.unwrap_or_else(|| DMatrix::zeros(0, n));
    if r.nrows() < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, r.nrows()).copy_from(&r);
        padded
    } else {
        r
    }
}
