//! Non-symmetric jump forms with a truncated power-law kernel
//!
//! `k(x, y) = kappa · |x − y|^(−1−beta) · (1 + eta · sign(y − x))` for
//! `|x − y| < R`, zero beyond. The form is
//! `E(u, v) = ½∬ (u(x)−u(y))(v(x)−v(y)) k_s + ∬ (u(x)−u(y)) v(x) k_a`,
//! which on the grid becomes `h · Σ_j (u_i − u_j) W_ij` per row with
//! `W_ij = ∫_{cell j} k(x_i, y) dy` integrated in closed form. Exterior cells
//! (zero data) feed the diagonal only. The cell containing the singularity
//! contributes through the symmetric part as a second difference.

use serde::{Deserialize, Serialize};

use super::{DiscreteForm, Grid1D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpKernelSpec {
    pub kappa: f64,
    pub beta_exp: f64,
    pub eta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

impl JumpKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.beta_exp > 0.0 && self.beta_exp < 2.0) {
            return Err(Error::invalid(format!("beta_exp must lie in (0, 2), got {}", self.beta_exp)));
        }
        if !(self.eta > -1.0 && self.eta < 1.0) {
            return Err(Error::invalid(format!("eta must lie in (-1, 1), got {}", self.eta)));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::invalid(format!("truncation radius must be positive, got {}", self.radius)));
        }
        Ok(())
    }

    /// Kernel value at offset `r = y − x`.
    pub fn kernel(&self, r: f64) -> f64 {
        let d = r.abs();
        if d == 0.0 || d >= self.radius {
            return 0.0;
        }
        self.kappa * d.powf(-1.0 - self.beta_exp) * (1.0 + self.eta * r.signum())
    }

    /// `∫_{lo}^{hi} kappa · r^(−1−beta) dr` clipped to `(0, R)`, for `0 < lo`.
    fn radial_mass(&self, lo: f64, hi: f64) -> f64 {
        let hi = hi.min(self.radius);
        if lo >= hi {
            return 0.0;
        }
        self.kappa * (lo.powf(-self.beta_exp) - hi.powf(-self.beta_exp)) / self.beta_exp
    }

    /// Weight of the second difference standing in for the singular cell:
    /// `∫_{|r| < h/2} r² k_s(r) dr / (2h²)`.
    fn self_cell_weight(&self, h: f64) -> f64 {
        let cut = (h / 2.0).min(self.radius);
        self.kappa * cut.powf(2.0 - self.beta_exp) / ((2.0 - self.beta_exp) * h * h)
    }
}

pub fn assemble_jump_form(grid: &Grid1D, kernel: &JumpKernelSpec, alpha: f64) -> Result<DiscreteForm> {
    kernel.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let n = grid.n;
    let h = grid.h;
    let self_w = kernel.self_cell_weight(h);

    // Symmetric radial weight of offset k ≥ 1 (one side, without the eta factor).
    let reach = ((kernel.radius / h) + 0.5).ceil() as usize + 1;
    let radial: Vec<f64> = (0..=reach)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                kernel.radial_mass((k as f64 - 0.5) * h, (k as f64 + 0.5) * h)
            }
        })
        .collect();
    // Full-stencil symmetric mass: the antisymmetric part cancels over ℤ.
    let diag = h * (2.0 * radial.iter().sum::<f64>() + 2.0 * self_w);

    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, diag));
        for (k, &w) in radial.iter().enumerate().skip(1) {
            let extra = if k == 1 { self_w } else { 0.0 };
            if i + k < n {
                t.push((i, i + k, -h * (w * (1.0 + kernel.eta) + extra)));
            }
            if k <= i {
                t.push((i, i - k, -h * (w * (1.0 - kernel.eta) + extra)));
            }
        }
    }
    DiscreteForm::from_triplets(Some(*grid), n, &t, vec![h; n], alpha)
}
