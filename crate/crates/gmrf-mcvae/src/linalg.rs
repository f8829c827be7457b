//! Dense row-major matrices and the small set of factorizations the library
//! needs: Cholesky with a jitter ladder, triangular solves, symmetric Jacobi
//! eigendecomposition, and spectral norms of small blocks.
//!
//! Everything here is single-threaded. The matmul kernels are written so the
//! inner loops autovectorize; they are the throughput backbone of training.

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// (A + A^T) / 2. Square matrices only.
    pub fn symmetrize(&self) -> Mat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        s
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max |a_ij - b_ij|.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// C = A * B. Loop order i,k,j so the inner loop streams both C and B rows.
pub fn matmul_into(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    c.data.fill(0.0);
    let (n, k_dim, m) = (a.rows, a.cols, b.cols);
    for i in 0..n {
        let c_row = &mut c.data[i * m..(i + 1) * m];
        let a_row = &a.data[i * k_dim..(i + 1) * k_dim];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * m..(k + 1) * m];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    matmul_into(&mut c, a, b);
    c
}

/// C = A^T * B where A is n x r, B is n x m, C is r x m.
/// Accumulates rank-1 updates row by row; inner loop stays contiguous.
pub fn matmul_at_b_into(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.rows, b.rows);
    assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    c.data.fill(0.0);
    let (n, r, m) = (a.rows, a.cols, b.cols);
    for k in 0..n {
        let a_row = &a.data[k * r..(k + 1) * r];
        let b_row = &b.data[k * m..(k + 1) * m];
        for (i, &aki) in a_row.iter().enumerate() {
            let c_row = &mut c.data[i * m..(i + 1) * m];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    }
}

pub fn matmul_at_b(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.cols, b.cols);
    matmul_at_b_into(&mut c, a, b);
    c
}

/// C = A * B^T where A is n x k, B is m x k, C is n x m.
/// Row-by-row dot products; `dot` unrolls into independent lanes.
pub fn matmul_a_bt_into(c: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.cols);
    assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    let (n, m) = (a.rows, b.rows);
    for i in 0..n {
        let a_row = a.row(i);
        let c_row = &mut c.data[i * m..(i + 1) * m];
        for j in 0..m {
            c_row[j] = dot(a_row, b.row(j));
        }
    }
}

pub fn matmul_a_bt(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.rows);
    matmul_a_bt_into(&mut c, a, b);
    c
}

/// Dot product with 8 independent accumulators so LLVM can vectorize despite
/// float non-associativity.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xs = &x[c * 8..c * 8 + 8];
        let ys = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..x.len() {
        tail += x[i] * y[i];
    }
    acc.iter().sum::<f64>() + tail
}

/// y = A * x for a square or rectangular matrix.
pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.cols, x.len());
    (0..a.rows).map(|i| dot(a.row(i), x)).collect()
}

/// Jitter levels tried in order when a Cholesky pivot goes nonpositive.
/// Scaled by the mean diagonal so the ladder is unit-free.
pub const CHOLESKY_JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Retries with diagonal jitter from `CHOLESKY_JITTER_LADDER`; the error
/// reports the pivot index of the final failed attempt.
pub fn cholesky_lower(a: &Mat) -> Result<Mat> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mean_diag = if n == 0 {
        0.0
    } else {
        (0..n).map(|i| a.at(i, i)).sum::<f64>() / n as f64
    };
    let scale = mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut last_pivot = 0;
    for &level in &CHOLESKY_JITTER_LADDER {
        match cholesky_attempt(a, level * scale) {
            Ok(l) => return Ok(l),
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(Error::NotPositiveDefinite { pivot: last_pivot })
}

/// Single Cholesky attempt with `jitter` added to the diagonal.
/// Returns the failing pivot index on breakdown.
fn cholesky_attempt(a: &Mat, jitter: f64) -> std::result::Result<Mat, usize> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(i);
                }
                *l.at_mut(i, j) = s.sqrt();
            } else {
                *l.at_mut(i, j) = s / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Solve L y = b with L lower triangular.
pub fn solve_lower(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.at(i, k) * y[k];
        }
        y[i] = s / l.at(i, i);
    }
    y
}

/// Solve L^T x = y with L lower triangular.
pub fn solve_lower_transpose(l: &Mat, y: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(y.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.at(k, i) * x[k];
        }
        x[i] = s / l.at(i, i);
    }
    x
}

/// Solve A x = b for SPD A via Cholesky.
pub fn solve_spd(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky_lower(a)?;
    Ok(solve_lower_transpose(&l, &solve_lower(&l, b)))
}

/// Solve A X = B column-by-column for SPD A. B is n x m.
pub fn solve_spd_mat(a: &Mat, b: &Mat) -> Result<Mat> {
    let l = cholesky_lower(a)?;
    let n = a.rows;
    let m = b.cols;
    let mut x = Mat::zeros(n, m);
    let mut col = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            col[i] = b.at(i, j);
        }
        let sol = solve_lower_transpose(&l, &solve_lower(&l, &col));
        for i in 0..n {
            *x.at_mut(i, j) = sol[i];
        }
    }
    Ok(x)
}

/// Inverse of an SPD matrix via Cholesky. Only used on small blocks.
pub fn inv_spd(a: &Mat) -> Result<Mat> {
    solve_spd_mat(a, &Mat::eye(a.rows))
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns (eigenvalues ascending, eigenvectors as columns of V) with
/// A = V diag(w) V^T.
pub fn eigh(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::eye(n);
    let tol = 1e-14 * m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.at(p, q).abs();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let w: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    idx.sort_by(|&i, &j| w[i].total_cmp(&w[j]));
    let w_sorted: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
    let mut v_sorted = Mat::zeros(n, n);
    for (new_j, &old_j) in idx.iter().enumerate() {
        for k in 0..n {
            *v_sorted.at_mut(k, new_j) = v.at(k, old_j);
        }
    }
    (w_sorted, v_sorted)
}

/// Largest singular value of a small matrix plus its singular vector pair,
/// so sigma = u^T A v with |u| = |v| = 1. Used for the pairwise-block norms
/// in the covariance assembly; d stays tiny so going through A^T A is fine.
pub fn spectral_norm_with_vectors(a: &Mat) -> (f64, Vec<f64>, Vec<f64>) {
    let (r, c) = (a.rows, a.cols);
    if r == 1 && c == 1 {
        let x = a.data[0];
        let s = x.abs();
        let sign = if x >= 0.0 { 1.0 } else { -1.0 };
        return (s, vec![1.0], vec![sign]);
    }
    let ata = matmul_at_b(a, a);
    let (w, v) = eigh(&ata);
    let top = c - 1;
    let lam = w[top].max(0.0);
    let sigma = lam.sqrt();
    let v1: Vec<f64> = (0..c).map(|k| v.at(k, top)).collect();
    if sigma <= f64::MIN_POSITIVE.sqrt() {
        // Zero block: norm 0, gradient direction undefined; report zeros.
        return (0.0, vec![0.0; r], vec![0.0; c]);
    }
    let av = matvec(a, &v1);
    let u1: Vec<f64> = av.iter().map(|x| x / sigma).collect();
    (sigma, u1, v1)
}

/// Largest singular value only.
pub fn spectral_norm(a: &Mat) -> f64 {
    spectral_norm_with_vectors(a).0
}

/// 2-norm condition number of a symmetric matrix, from its eigenvalues.
pub fn spd_condition_number(a: &Mat) -> f64 {
    let (w, _) = eigh(a);
    let min = w.first().copied().unwrap_or(0.0);
    let max = w.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Mat::from_rows(&[&[7.0, 8.0], &[9.0, 10.0], &[11.0, 12.0]]);
        let c = matmul(&a, &b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);

        let ct = matmul_a_bt(&a, &b.transpose());
        assert_eq!(ct.data, c.data);

        let c2 = matmul_at_b(&a.transpose(), &b);
        assert_eq!(c2.data, c.data);
    }

    #[test]
    fn cholesky_known_factor() {
        let a = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let l = cholesky_lower(&a).unwrap();
        let expect = Mat::from_rows(&[&[2.0, 0.0], &[1.0, 2.0]]);
        assert!(l.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky_lower(&a) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn spd_solve_roundtrip() {
        let a = Mat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let b = vec![1.0, -2.0, 0.3];
        let x = solve_spd(&a, &b).unwrap();
        let back = matvec(&a, &x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn eigh_recovers_known_spectrum() {
        // diag(1,2) conjugated by a rotation of 30 degrees.
        let th = std::f64::consts::PI / 6.0;
        let (c, s) = (th.cos(), th.sin());
        let a = Mat::from_rows(&[
            &[c * c + 2.0 * s * s, c * s - 2.0 * s * c],
            &[c * s - 2.0 * s * c, s * s + 2.0 * c * c],
        ]);
        let (w, v) = eigh(&a);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        // V diag(w) V^T reconstructs A.
        let mut dw = Mat::zeros(2, 2);
        *dw.at_mut(0, 0) = w[0];
        *dw.at_mut(1, 1) = w[1];
        let recon = matmul(&matmul(&v, &dw), &v.transpose());
        assert!(recon.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn spectral_norm_rank_one() {
        // outer(u, v) with |u| = 5, |v| = sqrt(2): sigma = 5 sqrt(2).
        let a = Mat::from_rows(&[&[3.0, 3.0], &[4.0, 4.0]]);
        let (sigma, u, v) = spectral_norm_with_vectors(&a);
        assert!((sigma - 50.0f64.sqrt()).abs() < 1e-12);
        // u^T A v = sigma.
        let av = matvec(&a, &v);
        let s2 = u.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
        assert!((s2 - sigma).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_1x1_is_abs() {
        let a = Mat::from_rows(&[&[-2.5]]);
        assert_eq!(spectral_norm(&a), 2.5);
    }

    #[test]
    fn jitter_ladder_rescues_semidefinite() {
        // Rank-1 PSD matrix; plain Cholesky fails at pivot 1, jitter fixes it.
        let a = Mat::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let l = cholesky_lower(&a).unwrap();
        let recon = matmul_a_bt(&l, &l);
        assert!(recon.max_abs_diff(&a) < 1e-5);
    }
}
