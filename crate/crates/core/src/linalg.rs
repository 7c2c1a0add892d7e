//! Dense row-major float64 matrices, norms, and small-matrix spectral tools.

use crate::error::{contract, Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// Largest `min(rows, cols)` accepted by [`svd_small`].
pub const SVD_CAP: usize = 256;

/// Seed of the dedicated stream that draws power-iteration start vectors.
const POWER_ITERATION_SEED: u64 = 0x5EED_0F_F0_u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return contract(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return contract("ragged rows");
        }
        Self::from_vec(n, m, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// `len x 1` column.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            values: v.to_vec(),
        }
    }

    /// `1 x len` row.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            values: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.values[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            values: out,
        })
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::Shape {
                op: "matvec",
                lhs: self.shape(),
                rhs: (x.len(), 1),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rows != x.len() {
            return Err(Error::Shape {
                op: "t_matvec",
                lhs: self.shape(),
                rhs: (x.len(), 1),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v * xi;
            }
        }
        Ok(out)
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            for (o, &vj) in m.values[i * v.len()..(i + 1) * v.len()].iter_mut().zip(v) {
                *o = ui * vj;
            }
        }
        m
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.axpy(1.0, other)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "axpy",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    norm2(m.as_slice())
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// The start vector comes from a fixed seeded stream so the result is
/// deterministic. Convergence is declared once successive estimates of
/// σ₁ differ by less than `tol`.
pub fn operator_norm(m: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if tol <= 0.0 {
        return contract("operator_norm tolerance must be positive");
    }
    if m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut stream = RngStream::new(POWER_ITERATION_SEED);
    let mut v = stream.gaussian_vec(m.cols(), 0.0, 1.0);
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);

    let mut estimate = f64::NAN;
    for _ in 0..max_iters {
        let mv = m.matvec(&v)?;
        let w = m.t_matvec(&mv)?;
        // Rayleigh quotient of mᵀm at unit v equals ‖m v‖².
        let next = norm2(&mv);
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(next);
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - estimate).abs() < tol {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        last_estimate: estimate,
    })
}

/// Thin singular value decomposition `m = u diag(s) vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us[(i, j)] *= self.s[j];
            }
        }
        us.matmul_t(&self.v).expect("factor shapes agree")
    }

    pub fn sigma_min(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }
}

/// One-sided (Hestenes) Jacobi SVD with cyclic column-pair sweeps.
pub fn svd_small(m: &Matrix) -> Result<SvdResult> {
    if m.rows().min(m.cols()) > SVD_CAP {
        return contract(format!(
            "svd_small limited to min(rows, cols) <= {SVD_CAP}, got {:?}",
            m.shape()
        ));
    }
    if m.rows() < m.cols() {
        let t = svd_small(&m.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (rows, cols) = m.shape();
    // Work column-major: cols vectors of length rows.
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| m.col(j)).collect();
    let mut basis: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    const MAX_SWEEPS: usize = 80;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                // Smaller root of t² + 2ζt − 1 = 0 (signum(0) = 1).
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut basis, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = work.iter().enumerate().map(|(j, w)| (norm2(w), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let s: Vec<f64> = order.iter().map(|&(n, _)| n).collect();
    let scale = s.first().copied().unwrap_or(0.0);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (k, &(n, j)) in order.iter().enumerate() {
        if n > scale * 1e-13 && n > 0.0 {
            u_cols.push(work[j].iter().map(|x| x / n).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u_cols, &missing);

    let mut u = Matrix::zeros(rows, cols);
    let mut v = Matrix::zeros(cols, cols);
    for (k, &(_, j)) in order.iter().enumerate() {
        for i in 0..rows {
            u[(i, k)] = u_cols[k][i];
        }
        for i in 0..cols {
            v[(i, k)] = basis[j][i];
        }
    }
    Ok(SvdResult { u, s, v })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (xp, xq) = (&mut left[p], &mut right[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Fill the listed (zero) columns with unit vectors orthogonal to the rest.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = cols[0].len();
    let mut candidate = 0;
    for &k in missing {
        loop {
            let mut e = vec![0.0; dim];
            e[candidate % dim] = 1.0;
            candidate += 1;
            for (j, c) in cols.iter().enumerate() {
                if j == k {
                    continue;
                }
                let proj = dot(&e, c);
                for (x, y) in e.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
            let n = norm2(&e);
            if n > 1e-8 {
                cols[k] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// `(⟨v,u⟩ / ⟨u,u⟩) u`.
pub fn project_onto(v: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if v.len() != u.len() {
        return Err(Error::Shape {
            op: "project_onto",
            lhs: (v.len(), 1),
            rhs: (u.len(), 1),
        });
    }
    let uu = dot(u, u);
    if uu == 0.0 {
        return contract("cannot project onto the zero vector");
    }
    let c = dot(v, u) / uu;
    Ok(u.iter().map(|x| c * x).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_gaussian_matrix;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_small_cases() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(m.matmul(&v).unwrap().as_slice(), &[17.0, 39.0]);

        let mut s = RngStream::new(1);
        let x = rng_gaussian_matrix(&mut s, 3, 4, 0.0, 1.0);
        assert_eq!(Matrix::identity(3).matmul(&x).unwrap(), x);
        assert_eq!(
            Matrix::zeros(2, 3).matmul(&x).unwrap(),
            Matrix::zeros(2, 4)
        );
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            Error::Shape {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            }
        );
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert!(approx(frobenius_norm(&Matrix::identity(5)), 5f64.sqrt(), 1e-15));
        assert_eq!(frobenius_norm(&Matrix::row_vector(&[3.0, 4.0])), 5.0);
    }

    #[test]
    fn operator_norm_examples() {
        assert!(approx(operator_norm(&Matrix::identity(4), 1e-14, 100).unwrap(), 1.0, 1e-12));
        let d = Matrix::diag(&[3.0, 1.0]);
        assert!(approx(operator_norm(&d, 1e-14, 1000).unwrap(), 3.0, 1e-12));
    }

    #[test]
    fn operator_norm_rejects_bad_tolerance() {
        assert!(operator_norm(&Matrix::identity(2), 0.0, 10).is_err());
    }

    #[test]
    fn operator_norm_reports_non_convergence() {
        // Two equal leading singular values with distinct directions never
        // stall exactly, but a single iteration cannot meet the tolerance.
        let mut s = RngStream::new(5);
        let m = rng_gaussian_matrix(&mut s, 6, 6, 0.0, 1.0);
        match operator_norm(&m, 1e-15, 1) {
            Err(Error::NonConvergence { iterations, .. }) => assert_eq!(iterations, 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn svd_diag_absorbs_sign() {
        let r = svd_small(&Matrix::diag(&[2.0, -5.0])).unwrap();
        assert_eq!(r.s, vec![5.0, 2.0]);
        assert!(r.reconstruct().sub(&Matrix::diag(&[2.0, -5.0])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn svd_identity() {
        let r = svd_small(&Matrix::identity(4)).unwrap();
        assert_eq!(r.s, vec![1.0; 4]);
    }

    #[test]
    fn svd_rank_deficient_has_orthonormal_u() {
        let m = Matrix::outer(&[1.0, 2.0, 3.0], &[1.0, -1.0]);
        let r = svd_small(&m).unwrap();
        assert!(r.s[1].abs() < 1e-12);
        let utu = r.u.transpose().matmul(&r.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
        assert!(r.reconstruct().sub(&m).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn svd_wide_matrix() {
        let mut s = RngStream::new(8);
        let m = rng_gaussian_matrix(&mut s, 3, 7, 0.0, 1.0);
        let r = svd_small(&m).unwrap();
        assert_eq!(r.u.shape(), (3, 3));
        assert_eq!(r.v.shape(), (7, 3));
        assert!(frobenius_norm(&r.reconstruct().sub(&m).unwrap()) < 1e-12);
    }

    #[test]
    fn svd_over_cap_is_rejected() {
        let m = Matrix::zeros(SVD_CAP + 1, SVD_CAP + 1);
        assert!(matches!(svd_small(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_onto(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_onto(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(project_onto(&[0.0, 4.0], &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(project_onto(&[1.0], &[0.0]).is_err());
    }
}
