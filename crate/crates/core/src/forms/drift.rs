//! One-dimensional drift-diffusion forms
//!
//! `E(u, v) = ∫ a u' v' + b ∫ u' v + d ∫ u v' + c ∫ u v`
//!
//! with zero exterior data. First-order terms are upwinded by default so that
//! every off-diagonal entry of `A` is nonpositive at any mesh size.

use serde::{Deserialize, Serialize};

use super::{DiscreteForm, Grid1D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftDiffusionCoeffs {
    /// Diffusion coefficient.
    pub a: f64,
    /// Drift tested against `u'`.
    pub b: f64,
    /// Drift tested against `v'`.
    pub d_coef: f64,
    /// Zeroth-order term.
    pub c: f64,
}

impl DriftDiffusionCoeffs {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::invalid(format!("diffusion coefficient must be positive, got {}", self.a)));
        }
        if ![self.b, self.d_coef, self.c].iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("drift-diffusion coefficients must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    #[default]
    Upwind,
    Centered,
}

pub fn assemble_drift_diffusion(grid: &Grid1D, coeffs: &DriftDiffusionCoeffs, alpha: f64) -> Result<DiscreteForm> {
    assemble_drift_diffusion_with(grid, coeffs, alpha, DriftScheme::Upwind)
}

pub fn assemble_drift_diffusion_with(
    grid: &Grid1D,
    coeffs: &DriftDiffusionCoeffs,
    alpha: f64,
    scheme: DriftScheme,
) -> Result<DiscreteForm> {
    coeffs.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let n = grid.n;
    let h = grid.h;
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(7 * n);
    // Entries pointing at a boundary node are dropped (zero exterior data).
    let mut push = |i: usize, j: isize, v: f64| {
        if j >= 0 && (j as usize) < n {
            t.push((i, j as usize, v));
        }
    };

    for i in 0..n {
        let ii = i as isize;
        push(i, ii, 2.0 * coeffs.a / h + coeffs.c * h);
        push(i, ii - 1, -coeffs.a / h);
        push(i, ii + 1, -coeffs.a / h);

        let (b, d) = (coeffs.b, coeffs.d_coef);
        match scheme {
            DriftScheme::Upwind => {
                // b ∫ u' v: backward difference for b > 0, forward for b < 0.
                if b >= 0.0 {
                    push(i, ii, b);
                    push(i, ii - 1, -b);
                } else {
                    push(i, ii, -b);
                    push(i, ii + 1, b);
                }
                // d ∫ u v' = -d ∫ u' v: the same stencil transposed.
                if d >= 0.0 {
                    push(i, ii, d);
                    push(i, ii + 1, -d);
                } else {
                    push(i, ii, -d);
                    push(i, ii - 1, d);
                }
            }
            DriftScheme::Centered => {
                push(i, ii + 1, b / 2.0);
                push(i, ii - 1, -b / 2.0);
                push(i, ii - 1, d / 2.0);
                push(i, ii + 1, -d / 2.0);
            }
        }
    }
    DiscreteForm::from_triplets(Some(*grid), n, &t, vec![h; n], alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{check_markov_structure, make_grid};

    fn coeffs(a: f64, b: f64, d: f64, c: f64) -> DriftDiffusionCoeffs {
        DriftDiffusionCoeffs { a, b, d_coef: d, c }
    }

    /// ∫ φ_j' φ_i' over the hat basis, by midpoint quadrature on a fine mesh.
    fn hat_stiffness_quadrature(grid: &Grid1D) -> Vec<Vec<f64>> {
        let hat_slope = |j: usize, x: f64| -> f64 {
            let xj = grid.node(j);
            if x > xj - grid.h && x < xj {
                1.0 / grid.h
            } else if x > xj && x < xj + grid.h {
                -1.0 / grid.h
            } else {
                0.0
            }
        };
        let m = 40_000;
        let dx = (grid.x_max - grid.x_min) / m as f64;
        let mut out = vec![vec![0.0; grid.n]; grid.n];
        for k in 0..m {
            let x = grid.x_min + (k as f64 + 0.5) * dx;
            for i in 0..grid.n {
                for j in 0..grid.n {
                    out[i][j] += hat_slope(i, x) * hat_slope(j, x) * dx;
                }
            }
        }
        out
    }

    #[test]
    fn laplacian_matches_hat_quadrature() {
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        let form = assemble_drift_diffusion(&grid, &coeffs(1.0, 0.0, 0.0, 0.0), 1.0).unwrap();
        let a = form.stiffness_dense();
        let oracle = hat_stiffness_quadrature(&grid);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - oracle[i][j]).abs() < 1e-9, "({i},{j}) {} vs {}", a[i][j], oracle[i][j]);
            }
        }
        assert_eq!(a[0], vec![8.0, -4.0, 0.0]);
        assert_eq!(a[1], vec![-4.0, 8.0, -4.0]);
    }

    #[test]
    fn drift_cancels_when_mu_is_half_lambda_squared() {
        let (lambda, mu) = (1.0f64, 0.5f64);
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        let b = -(mu - lambda * lambda / 2.0);
        let form = assemble_drift_diffusion(&grid, &coeffs(lambda, b, 0.0, 0.0), 1.0).unwrap();
        let a = form.stiffness_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    #[test]
    fn upwind_stencil_matches_one_sided_differences() {
        // h = 0.25, a = 1, generator drift 0.5 => b = -0.5 (forward difference).
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        let b = -0.5;
        let form = assemble_drift_diffusion(&grid, &coeffs(1.0, b, 0.0, 0.0), 1.0).unwrap();
        let a = form.stiffness_dense();
        // h · b · (u_{i+1} - u_i)/h  ⇒ diag -b, super +b.
        let expected = [
            [8.0 + 0.5, -4.0 - 0.5, 0.0],
            [-4.0, 8.0 + 0.5, -4.0 - 0.5],
            [0.0, -4.0, 8.0 + 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - expected[i][j]).abs() < 1e-14);
            }
        }
        assert_ne!(a[0][1], a[1][0]);
        assert!(check_markov_structure(&form).passes);
    }

    #[test]
    fn d_term_is_transpose_of_b_term() {
        let grid = make_grid(0.0, 2.0, 6).unwrap();
        for s in [0.7, -0.7] {
            let fb = assemble_drift_diffusion(&grid, &coeffs(0.3, s, 0.0, 0.0), 1.0).unwrap();
            let fd = assemble_drift_diffusion(&grid, &coeffs(0.3, 0.0, s, 0.0), 1.0).unwrap();
            let (ab, ad) = (fb.stiffness_dense(), fd.stiffness_dense());
            for i in 0..6 {
                for j in 0..6 {
                    assert!((ab[i][j] - ad[j][i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn centered_drift_breaks_sign_structure_on_coarse_grid() {
        // h = 0.25 > 2a/|b| = 0.2 with a = 0.1, b = 1.
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        let form = assemble_drift_diffusion_with(&grid, &coeffs(0.1, 1.0, 0.0, 0.0), 1.0, DriftScheme::Centered).unwrap();
        let report = check_markov_structure(&form);
        assert!(!report.passes);
        // Super-diagonal: -a/h + b/2 = -0.4 + 0.5 = 0.1.
        let v = report.violations.iter().find(|v| v.i == 0 && v.j == 1).expect("(0,1) listed");
        assert!((v.value - 0.1).abs() < 1e-14);
        let upwind = assemble_drift_diffusion(&grid, &coeffs(0.1, 1.0, 0.0, 0.0), 1.0).unwrap();
        assert!(check_markov_structure(&upwind).passes);
    }

    #[test]
    fn rejects_degenerate_diffusion() {
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        assert!(assemble_drift_diffusion(&grid, &coeffs(0.0, 1.0, 0.0, 0.0), 1.0).is_err());
        assert!(assemble_drift_diffusion(&grid, &coeffs(1.0, 0.0, 0.0, 0.0), 0.0).is_err());
    }
}
