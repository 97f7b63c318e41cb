//! Two-obstacle problems `g ≤ v ≤ h`.
//!
//! Two routes: projected Gauss–Seidel with a two-sided clamp, and the
//! alternating iteration on a pair of potentials
//! `v̄ₙ₊₁ = S(v̲ₙ + g)`, `v̲ₙ₊₁ = S(v̄ₙ − h)` where `S(φ)` is the smallest
//! supersolution above `φ`; its limit gives `v = v̄ − v̲` and the pair
//! `(v̄, v̲)` witnesses separability of the obstacles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sup_norm;
use crate::obstacle::{
    build_solution, contact_tolerance, projected_sweeps, require_markov, Method, ObstacleData, SolverParams, VISolution,
    Witnesses,
};
use crate::forms::DiscreteForm;

/// Iterates above this magnitude are treated as divergence.
pub const SEPARABILITY_CAP: f64 = 1e12;

fn require_upper(data: &ObstacleData) -> Result<&[f64]> {
    data.h
        .as_deref()
        .ok_or_else(|| Error::invalid("two-obstacle solver needs an upper obstacle"))
}

pub fn solve_double_pgs(form: &DiscreteForm, data: &ObstacleData, params: &SolverParams) -> Result<VISolution> {
    params.validate()?;
    data.validate(form.dim())?;
    let upper = require_upper(data)?;
    require_markov(form)?;
    // Nodes with g = h are pinned by the clamp itself.
    let start: Vec<f64> = data.g.iter().zip(upper).map(|(g, h)| 0f64.max(*g).min(*h)).collect();
    let (v, iters) = projected_sweeps(form, &data.f, &data.g, Some(upper), start, params, |_| {})?;
    Ok(build_solution(form, data, v, iters, Method::Pgs))
}

/// Output of the alternating iteration, with every iterate recorded.
#[derive(Debug, Clone)]
pub struct SeparabilityRun {
    pub solution: VISolution,
    pub upper_iterates: Vec<Vec<f64>>,
    pub lower_iterates: Vec<Vec<f64>>,
}

pub fn solve_separability_iteration(form: &DiscreteForm, data: &ObstacleData, params: &SolverParams) -> Result<VISolution> {
    separability_run(form, data, params, SEPARABILITY_CAP).map(|r| r.solution)
}

/// The alternating iteration with an explicit divergence cap.
pub fn separability_run(form: &DiscreteForm, data: &ObstacleData, params: &SolverParams, cap: f64) -> Result<SeparabilityRun> {
    params.validate()?;
    data.validate(form.dim())?;
    let upper = require_upper(data)?;
    if data.f.iter().any(|&f| f != 0.0) {
        return Err(Error::invalid("separability iteration requires a zero source term"));
    }
    require_markov(form)?;
    let n = form.dim();
    let zero = vec![0.0; n];
    let inner = SolverParams { tol: params.tol / 10.0, ..params.clone() };

    // S(obstacle), started below the answer so the sweeps rise monotonically.
    let smallest_above = |obstacle: &[f64], prev: &[f64]| -> Result<(Vec<f64>, usize)> {
        let start: Vec<f64> = obstacle.iter().zip(prev).map(|(o, p)| o.max(*p).max(0.0)).collect();
        projected_sweeps(form, &zero, obstacle, None, start, &inner, |_| {})
    };

    let mut v_up = zero.clone();
    let mut v_low = zero.clone();
    let mut upper_iterates = Vec::new();
    let mut lower_iterates = Vec::new();
    for outer in 1..=params.max_iter {
        let ob_up: Vec<f64> = v_low.iter().zip(&data.g).map(|(l, g)| l + g).collect();
        let ob_low: Vec<f64> = v_up.iter().zip(upper).map(|(u, h)| u - h).collect();
        let (next_up, _) = smallest_above(&ob_up, &v_up)?;
        let (next_low, _) = smallest_above(&ob_low, &v_low)?;
        if sup_norm(&next_up) > cap || sup_norm(&next_low) > cap {
            return Err(Error::SeparabilityFailure { iteration: outer });
        }
        let increment = next_up
            .iter()
            .zip(&v_up)
            .chain(next_low.iter().zip(&v_low))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v_up = next_up;
        v_low = next_low;
        upper_iterates.push(v_up.clone());
        lower_iterates.push(v_low.clone());
        if increment < params.tol {
            let v: Vec<f64> = v_up.iter().zip(&v_low).map(|(a, b)| a - b).collect();
            let mut solution = build_solution(form, data, v, outer, Method::Separability);
            solution.witnesses = Some(Witnesses { w1: v_up, w2: v_low });
            return Ok(SeparabilityRun { solution, upper_iterates, lower_iterates });
        }
    }
    let v: Vec<f64> = v_up.iter().zip(&v_low).map(|(a, b)| a - b).collect();
    let residual_norm = crate::obstacle::kkt_defect(form, &v, &data.f, &data.g, Some(upper));
    Err(Error::NonConvergence {
        method: "separability iteration".into(),
        iterations: params.max_iter,
        last_update: f64::NAN,
        residual_norm,
        last_iterate: v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityWitness {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Largest violation of `g ≤ w1 − w2 ≤ h`.
    pub max_gap: f64,
    /// Smallest entry of `B·w1` and `B·w2`.
    pub min_potential_residual: f64,
}

impl SeparabilityWitness {
    pub fn certifies(&self) -> bool {
        self.max_gap <= 1e-8 && self.min_potential_residual >= -1e-10
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeparabilityOutcome {
    Certified(SeparabilityWitness),
    Failed { iteration: usize },
}

pub fn check_separability(form: &DiscreteForm, data: &ObstacleData) -> Result<SeparabilityOutcome> {
    check_separability_with(form, data, &SolverParams::default(), SEPARABILITY_CAP)
}

pub fn check_separability_with(
    form: &DiscreteForm,
    data: &ObstacleData,
    params: &SolverParams,
    cap: f64,
) -> Result<SeparabilityOutcome> {
    let run = match separability_run(form, data, params, cap) {
        Ok(run) => run,
        Err(Error::SeparabilityFailure { iteration }) => return Ok(SeparabilityOutcome::Failed { iteration }),
        Err(e) => return Err(e),
    };
    let w = run.solution.witnesses.expect("separability run records witnesses");
    let upper = data.h.as_deref().expect("validated upper obstacle");
    let max_gap = (0..form.dim())
        .map(|i| {
            let d = w.w1[i] - w.w2[i];
            (data.g[i] - d).max(d - upper[i]).max(0.0)
        })
        .fold(0.0, f64::max);
    let min_potential_residual = form
        .apply(&w.w1)
        .into_iter()
        .chain(form.apply(&w.w2))
        .fold(f64::INFINITY, f64::min);
    Ok(SeparabilityOutcome::Certified(SeparabilityWitness { w1: w.w1, w2: w.w2, max_gap, min_potential_residual }))
}

/// Stopping regions of the saddle pair: `(τ̂, σ̂) = (upper contact, lower contact)`.
pub fn extract_saddle_regions(sol: &VISolution, data: &ObstacleData) -> Result<(Vec<usize>, Vec<usize>)> {
    if !sol.converged {
        return Err(Error::invalid("saddle regions need a converged solution"));
    }
    if sol.v.len() != data.dim() {
        return Err(Error::invalid("solution and obstacle data differ in length"));
    }
    Ok((sol.contact_upper.clone(), sol.contact_lower.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    LowerContact,
    UpperContact,
    /// `g = h` at this node.
    Pinned,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub passes: bool,
    pub tol_kkt: f64,
    pub worst_lower: f64,
    pub worst_upper: f64,
    pub worst_interior: f64,
    /// Largest excursion of `v` outside `[g, h]`.
    pub worst_bound: f64,
    pub failing_nodes: Vec<usize>,
    pub classes: Vec<NodeClass>,
}

/// Recomputes `r = Bv − f` and checks the complementarity sign conditions
/// node by node.
pub fn verify_vi_residual(form: &DiscreteForm, sol: &VISolution, data: &ObstacleData, tol_kkt: f64) -> ResidualReport {
    let n = form.dim();
    let bv = form.apply(&sol.v);
    let upper = data.h.as_deref();
    let mut report = ResidualReport {
        passes: true,
        tol_kkt,
        worst_lower: 0.0,
        worst_upper: 0.0,
        worst_interior: 0.0,
        worst_bound: 0.0,
        failing_nodes: Vec::new(),
        classes: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (v, g) = (sol.v[i], data.g[i]);
        let h = upper.map_or(f64::INFINITY, |u| u[i]);
        let r = bv[i] - data.f[i];
        let at_lower = v <= g + contact_tolerance(g);
        let at_upper = upper.is_some() && v >= h - contact_tolerance(h);
        let (class, defect) = match (at_lower, at_upper) {
            (true, true) => (NodeClass::Pinned, 0.0),
            (true, false) => (NodeClass::LowerContact, (-r).max(0.0)),
            (false, true) => (NodeClass::UpperContact, r.max(0.0)),
            (false, false) => (NodeClass::Interior, r.abs()),
        };
        let bound = (g - v).max(v - h).max(0.0);
        match class {
            NodeClass::LowerContact => report.worst_lower = report.worst_lower.max(defect),
            NodeClass::UpperContact => report.worst_upper = report.worst_upper.max(defect),
            NodeClass::Interior => report.worst_interior = report.worst_interior.max(defect),
            NodeClass::Pinned => {}
        }
        report.worst_bound = report.worst_bound.max(bound);
        if defect > tol_kkt || bound > tol_kkt {
            report.failing_nodes.push(i);
        }
        report.classes.push(class);
    }
    report.passes = report.failing_nodes.is_empty();
    report
}
