//! Grids and discrete semi-Dirichlet forms.
//!
//! A [`DiscreteForm`] stores the stiffness matrix `A` (so that the bilinear
//! form is `E(u, v) = vᵀ A u`, with `u` in the first slot), the lumped mass
//! diagonal `M = h·I`, the discount `alpha` and the system matrix
//! `B = A + alpha·M` used by every solver.

mod constants;
mod drift;
mod jump;

pub use constants::{
    check_markov_structure, estimate_alpha0, estimate_alpha0_of, estimate_sector_constant,
    sector_constant_of, MarkovReport, Violation, ViolationKind,
};
pub use drift::{assemble_drift_diffusion, assemble_drift_diffusion_with, DriftDiffusionCoeffs, DriftScheme};
pub use jump::{assemble_jump_form, JumpKernelSpec};

use crate::linalg::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of `n` interior nodes on `[x_min, x_max]`; values outside
/// the interior nodes are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub h: f64,
}

pub fn make_grid(x_min: f64, x_max: f64, n: usize) -> Result<Grid1D> {
    if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
        return Err(Error::invalid(format!(
            "grid domain must satisfy x_min < x_max, got [{x_min}, {x_max}]"
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("grid needs at least 3 interior nodes, got {n}")));
    }
    Ok(Grid1D {
        x_min,
        x_max,
        n,
        h: (x_max - x_min) / (n + 1) as f64,
    })
}

impl Grid1D {
    /// Coordinate of interior node `i` (0-based).
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + (i + 1) as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Open domain membership; the endpoints carry the zero exterior data.
    pub fn contains(&self, x: f64) -> bool {
        x > self.x_min && x < self.x_max
    }

    /// Nearest interior node, or `None` when the nearest node is a boundary
    /// point or `x` lies outside the domain.
    pub fn nearest_node(&self, x: f64) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let k = ((x - self.x_min) / self.h).round() as isize;
        if k >= 1 && k <= self.n as isize {
            Some(k as usize - 1)
        } else {
            None
        }
    }

    /// Piecewise-linear interpolation of nodal values, with zero at both
    /// endpoints and outside the domain.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let s = (x - self.x_min) / self.h;
        let k = (s.floor() as usize).min(self.n);
        let t = s - k as f64;
        let at = |k: usize| -> f64 {
            if k == 0 || k > self.n {
                0.0
            } else {
                values[k - 1]
            }
        };
        (1.0 - t) * at(k) + t * at(k + 1)
    }
}

/// Assembled discrete form. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DiscreteForm {
    grid: Option<Grid1D>,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
    alpha: f64,
    alpha0_est: f64,
    sector_k: Option<f64>,
    system: CsrMatrix,
    system_diag: Vec<f64>,
}

impl DiscreteForm {
    /// Builds a form from a stiffness matrix given as triplets and a mass
    /// diagonal. Estimates `alpha0` and rejects `alpha <= alpha0`.
    pub fn from_triplets(
        grid: Option<Grid1D>,
        n: usize,
        triplets: &[(usize, usize, f64)],
        mass: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if mass.len() != n {
            return Err(Error::invalid(format!("mass diagonal has length {}, expected {n}", mass.len())));
        }
        if mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::invalid("mass diagonal must be strictly positive"));
        }
        if let Some((i, j, _)) = triplets.iter().find(|(i, j, _)| *i >= n || *j >= n) {
            return Err(Error::invalid(format!("triplet ({i}, {j}) out of range for n = {n}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        let stiffness = CsrMatrix::from_triplets(n, n, triplets);
        let alpha0_est = estimate_alpha0_of(&stiffness, &mass)?;
        if alpha <= alpha0_est {
            return Err(Error::invalid(format!(
                "alpha = {alpha} must exceed the lower-bound shift alpha0 = {alpha0_est}"
            )));
        }
        let mut system_triplets = stiffness.triplet_iter().collect::<Vec<_>>();
        system_triplets.extend(mass.iter().enumerate().map(|(i, m)| (i, i, alpha * m)));
        let system = CsrMatrix::from_triplets(n, n, &system_triplets);
        let system_diag = system.diagonal();
        if let Some(i) = system_diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!(
                "A + alpha·M has a non-positive diagonal entry at row {i}"
            )));
        }
        Ok(DiscreteForm {
            grid,
            stiffness,
            mass,
            alpha,
            alpha0_est,
            sector_k: None,
            system,
            system_diag,
        })
    }

    /// Convenience constructor from a dense row-major stiffness matrix.
    pub fn from_dense(rows: &[Vec<f64>], mass: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("stiffness matrix must be square"));
        }
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .collect();
        Self::from_triplets(None, n, &triplets, mass, alpha)
    }

    /// Same stiffness and mass with a different discount.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut out = Self::from_triplets(
            self.grid,
            self.dim(),
            &self.stiffness.triplet_iter().collect::<Vec<_>>(),
            self.mass.clone(),
            alpha,
        )?;
        out.sector_k = None;
        Ok(out)
    }

    /// Form with the stiffness matrix transposed (the adjoint form).
    pub fn adjoint(&self) -> Result<Self> {
        let t: Vec<_> = self
            .stiffness
            .triplet_iter()
            .map(|(i, j, v)| (j, i, v))
            .collect();
        Self::from_triplets(self.grid, self.dim(), &t, self.mass.clone(), self.alpha)
    }

    /// Computes and caches the sector constant.
    pub fn with_sector_constant(mut self) -> Result<Self> {
        self.sector_k = Some(estimate_sector_constant(&self)?);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }
    pub fn grid(&self) -> Option<&Grid1D> {
        self.grid.as_ref()
    }
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn alpha0_est(&self) -> f64 {
        self.alpha0_est
    }
    pub fn sector_k(&self) -> Option<f64> {
        self.sector_k
    }
    /// `B = A + alpha·M`.
    pub fn system(&self) -> &CsrMatrix {
        &self.system
    }
    pub fn system_diag(&self) -> &[f64] {
        &self.system_diag
    }

    /// `B·v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.system.mul_vec(v)
    }

    /// `E_alpha(u, v) = vᵀ B u`.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        self.apply(u).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Dense copy of the stiffness matrix, row-major.
    pub fn stiffness_dense(&self) -> Vec<Vec<f64>> {
        let d = self.stiffness.to_dense();
        (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect()
    }

    /// Dense copy of `B`, row-major.
    pub fn system_dense(&self) -> Vec<Vec<f64>> {
        let d = self.system.to_dense();
        (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect()
    }

    pub fn to_document(&self) -> FormDocument {
        FormDocument {
            grid: self.grid,
            triplets: self.stiffness.triplet_iter().collect(),
            mass_diag: self.mass.clone(),
            alpha: self.alpha,
            alpha0_est: self.alpha0_est,
            sector_k: self.sector_k,
        }
    }

    pub fn from_document(doc: &FormDocument) -> Result<Self> {
        let mut form = Self::from_triplets(
            doc.grid,
            doc.mass_diag.len(),
            &doc.triplets,
            doc.mass_diag.clone(),
            doc.alpha,
        )?;
        form.sector_k = doc.sector_k;
        Ok(form)
    }
}

/// JSON interchange shape of a form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormDocument {
    pub grid: Option<Grid1D>,
    pub triplets: Vec<(usize, usize, f64)>,
    pub mass_diag: Vec<f64>,
    pub alpha: f64,
    pub alpha0_est: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_k: Option<f64>,
}
