//! Sparse matrices and the linear solvers used by the step solvers.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SparseOperator {
    pub matrix: CsrMatrix<f64>,
    pub symmetric: bool,
}

impl SparseOperator {
    /// Sums duplicate triplets in insertion order, so identical triplet
    /// sequences always give bitwise identical matrices.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], symmetric: bool) -> Self {
        let mut coo = CooMatrix::new(n, n);
        for &(i, j, v) in triplets {
            coo.push(i, j, v);
        }
        Self {
            matrix: CsrMatrix::from(&coo),
            symmetric,
        }
    }

    pub fn zeros(n: usize, symmetric: bool) -> Self {
        Self {
            matrix: CsrMatrix::zeros(n, n),
            symmetric,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix
            .get_entry(i, j)
            .map(|e| e.into_value())
            .unwrap_or(0.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let (offsets, cols, vals) = self.matrix.csr_data();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                s += vals[k] * x[cols[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |A − Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.matrix.transpose();
        let mut worst = 0.0f64;
        for (i, j, v) in self.matrix.triplet_iter() {
            let w = t.get_entry(i, j).map(|e| e.into_value()).unwrap_or(0.0);
            worst = worst.max((v - w).abs());
        }
        for (i, j, v) in t.triplet_iter() {
            if self.matrix.get_entry(i, j).is_none() {
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// The symmetry flag is honest: `|A − Aᵀ|_max ≤ 1e-12 |A|_max`.
    pub fn check_symmetry(&self) -> bool {
        !self.symmetric || self.asymmetry() <= 1e-12 * self.max_abs()
    }

    /// Linear combination `Σ cᵢ Aᵢ` of operators sharing a dimension.
    pub fn combine(terms: &[(f64, &SparseOperator)]) -> SparseOperator {
        let n = terms[0].1.dim();
        let mut trip = Vec::new();
        let mut symmetric = true;
        for (c, op) in terms {
            symmetric &= op.symmetric;
            for (i, j, v) in op.matrix.triplet_iter() {
                trip.push((i, j, c * v));
            }
        }
        SparseOperator::from_triplets(n, &trip, symmetric)
    }

    pub fn add_diagonal(&self, diag: &[f64]) -> SparseOperator {
        let mut trip: Vec<_> = self.matrix.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
        trip.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
        SparseOperator::from_triplets(self.dim(), &trip, self.symmetric)
    }

    /// Submatrix on the given index set, in its order.
    pub fn restrict(&self, keep: &[usize]) -> SparseOperator {
        let mut map = vec![usize::MAX; self.dim()];
        for (r, &k) in keep.iter().enumerate() {
            map[k] = r;
        }
        let trip: Vec<_> = self
            .matrix
            .triplet_iter()
            .filter(|(i, j, _)| map[*i] != usize::MAX && map[*j] != usize::MAX)
            .map(|(i, j, v)| (map[i], map[j], *v))
            .collect();
        SparseOperator::from_triplets(keep.len(), &trip, self.symmetric)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        for (i, j, v) in self.matrix.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Sparse Cholesky factorization.
    #[default]
    Direct,
    /// Conjugate gradients with Jacobi preconditioning.
    Cg,
}

/// Solves `A x = b` for a symmetric positive definite `A`.
pub fn solve_spd(a: &SparseOperator, b: &[f64], solver: LinearSolver) -> Result<Vec<f64>> {
    match solver {
        LinearSolver::Direct => {
            let csc = CscMatrix::from(&a.matrix);
            let chol = CscCholesky::factor(&csc)
                .map_err(|e| Error::LinearSolve(format!("Cholesky factorization: {e:?}")))?;
            let x = chol.solve(&DVector::from_column_slice(b));
            Ok(x.as_slice().to_vec())
        }
        LinearSolver::Cg => conjugate_gradient(a, b, 1e-14, 20 * a.dim().max(50)),
    }
}

pub fn conjugate_gradient(
    a: &SparseOperator,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        a.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolve("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve(format!(
        "conjugate gradients did not converge in {max_iter} iterations"
    )))
}

/// Dense LU solve, for the nonsymmetric heat Newton systems.
pub fn solve_general(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_dense().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::LinearSolve("singular matrix".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        SparseOperator::from_triplets(n, &t, true)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = SparseOperator::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 0, 1.0)], false);
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(0, 1), 0.0);
        assert!(a.asymmetry() == 1.0);
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = laplace_1d(40);
        assert!(a.check_symmetry());
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let x1 = solve_spd(&a, &b, LinearSolver::Direct).unwrap();
        let x2 = solve_spd(&a, &b, LinearSolver::Cg).unwrap();
        let x3 = solve_general(&a, &b).unwrap();
        for i in 0..40 {
            assert!((x1[i] - x2[i]).abs() < 1e-9);
            assert!((x1[i] - x3[i]).abs() < 1e-9);
        }
        let r = a.apply(&x1);
        for i in 0..40 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_and_combination() {
        let a = laplace_1d(5);
        let r = a.restrict(&[1, 3, 4]);
        assert_eq!(r.dim(), 3);
        assert_eq!(r.get(1, 2), -1.0);
        assert_eq!(r.get(0, 1), 0.0);
        let c = SparseOperator::combine(&[(2.0, &a), (-1.0, &a)]);
        assert_eq!(c.to_dense(), a.to_dense());
        let d = a.add_diagonal(&[1.0; 5]);
        assert_eq!(d.get(2, 2), 3.0);
    }

    #[test]
    fn indefinite_cholesky_fails() {
        let a = SparseOperator::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)], true);
        assert!(solve_spd(&a, &[1.0, 1.0], LinearSolver::Direct).is_err());
    }
}
