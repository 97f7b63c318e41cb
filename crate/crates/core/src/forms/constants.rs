//! Structural constants of a discrete form: the lower-bound shift, the
//! sector constant and the sign pattern that makes `B` an M-matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use crate::linalg::CsrMatrix;
use serde::{Deserialize, Serialize};

use super::DiscreteForm;
use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetric_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numeric(format!("{what}: symmetric eigen-iteration did not converge within {EIGEN_MAX_ITER} iterations"))
    })
}

/// `max(0, −λ_min)` for the pencil `(sym(A), M)` with diagonal `M`.
pub fn estimate_alpha0_of(stiffness: &CsrMatrix, mass: &[f64]) -> Result<f64> {
    let a = stiffness.to_dense();
    let n = a.nrows();
    let s = symmetric_part(&a);
    let scale: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| s[(i, j)] * scale[i] * scale[j]);
    let eig = symmetric_eigen(scaled, "alpha0 estimate")?;
    let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((-lambda_min).max(0.0))
}

pub fn estimate_alpha0(form: &DiscreteForm) -> Result<f64> {
    estimate_alpha0_of(form.stiffness(), form.mass())
}

/// Best constant `K` in `|vᵀBu| ≤ K √(uᵀBu) √(vᵀBv)`, i.e. the spectral
/// norm of `S^{-1/2} B S^{-1/2}` with `S = sym(B)`.
pub fn sector_constant_of(b: &DMatrix<f64>) -> Result<f64> {
    let s = symmetric_part(b);
    if s.clone().cholesky().is_none() {
        return Err(Error::invalid("sym(B) is not positive definite; alpha must exceed alpha0"));
    }
    let eig = symmetric_eigen(s, "sector constant")?;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let s_inv_half = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let c = &s_inv_half * b * &s_inv_half;
    let svd = c
        .try_svd(false, false, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numeric("sector constant: SVD did not converge".into()))?;
    Ok(svd.singular_values.max())
}

pub fn estimate_sector_constant(form: &DiscreteForm) -> Result<f64> {
    sector_constant_of(&form.system().to_dense())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    PositiveOffDiagonal,
    NegativeRowSum,
}

/// A sign violation of `B`. Row-sum violations report `j == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub passes: bool,
    pub violations: Vec<Violation>,
}

/// Off-diagonals of `B` nonpositive and row sums nonnegative.
pub fn check_markov_structure(form: &DiscreteForm) -> MarkovReport {
    let b = form.system();
    let mut violations = Vec::new();
    for i in 0..b.nrows() {
        let row = b.row(i);
        let mut sum = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            sum += v;
            if j != i && v > 0.0 {
                violations.push(Violation { i, j, value: v, kind: ViolationKind::PositiveOffDiagonal });
            }
        }
        if sum < 0.0 {
            violations.push(Violation { i, j: i, value: sum, kind: ViolationKind::NegativeRowSum });
        }
    }
    MarkovReport { passes: violations.is_empty(), violations }
}
