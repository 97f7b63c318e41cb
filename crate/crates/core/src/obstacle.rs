//! Single-obstacle problems: the smallest supersolution of `B v ≥ f` lying
//! above `g`, computed by projected Gauss–Seidel sweeps or by the penalty
//! scheme `B v_ε = f + (1/ε)(g − v_ε)⁺` with ε driven to zero.
//!
//! The projected sweep core is shared with the two-obstacle solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{check_markov_structure, DiscreteForm};
use crate::linalg::{sup_norm, sup_norm_diff};

/// Lower obstacle `g`, optional upper obstacle `h` and source `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleData {
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    pub f: Vec<f64>,
}

impl ObstacleData {
    pub fn single(g: Vec<f64>) -> Self {
        let n = g.len();
        ObstacleData { g, h: None, f: vec![0.0; n] }
    }

    pub fn double(g: Vec<f64>, h: Vec<f64>) -> Self {
        let n = g.len();
        ObstacleData { g, h: Some(h), f: vec![0.0; n] }
    }

    pub fn with_source(mut self, f: Vec<f64>) -> Self {
        self.f = f;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.g.len() != n || self.f.len() != n {
            return Err(Error::invalid(format!(
                "obstacle data length mismatch: g has {}, f has {}, form has {n}",
                self.g.len(),
                self.f.len()
            )));
        }
        if self.g.iter().chain(&self.f).any(|x| !x.is_finite()) {
            return Err(Error::invalid("obstacle data must be finite"));
        }
        if let Some(h) = &self.h {
            if h.len() != n {
                return Err(Error::invalid(format!("upper obstacle has length {}, expected {n}", h.len())));
            }
            if let Some(i) = (0..n).find(|&i| !(self.g[i] <= h[i])) {
                return Err(Error::invalid(format!(
                    "lower obstacle exceeds upper obstacle at node {i}: g = {}, h = {}",
                    self.g[i], h[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iter: usize,
    pub penalty_eps_schedule: Vec<f64>,
    pub relaxation: f64,
    /// Alternate forward and backward sweeps instead of ascending order only.
    pub symmetric_sweeps: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol: 1e-10,
            max_iter: 200_000,
            penalty_eps_schedule: vec![1e-2, 1e-4, 1e-6, 1e-8],
            relaxation: 1.0,
            symmetric_sweeps: false,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::invalid(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        let s = &self.penalty_eps_schedule;
        if s.is_empty() || s.iter().any(|e| !(*e > 0.0)) || s.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("penalty schedule must be nonempty, positive and strictly decreasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pgs,
    Penalty,
    Separability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witnesses {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VISolution {
    pub v: Vec<f64>,
    /// `B v − f`.
    pub residual: Vec<f64>,
    pub contact_lower: Vec<usize>,
    pub contact_upper: Vec<usize>,
    pub iterations: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witnesses: Option<Witnesses>,
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

pub fn contact_tolerance(obstacle: f64) -> f64 {
    1e-7 * (1.0 + obstacle.abs())
}

/// Nodes touching the lower and upper obstacles.
pub fn contact_sets(v: &[f64], g: &[f64], h: Option<&[f64]>) -> (Vec<usize>, Vec<usize>) {
    let lower = (0..v.len()).filter(|&i| v[i] <= g[i] + contact_tolerance(g[i])).collect();
    let upper = match h {
        Some(h) => (0..v.len()).filter(|&i| v[i] >= h[i] - contact_tolerance(h[i])).collect(),
        None => Vec::new(),
    };
    (lower, upper)
}

pub(crate) fn build_solution(
    form: &DiscreteForm,
    data: &ObstacleData,
    v: Vec<f64>,
    iterations: usize,
    method: Method,
) -> VISolution {
    let residual: Vec<f64> = form.apply(&v).iter().zip(&data.f).map(|(bv, f)| bv - f).collect();
    let (contact_lower, contact_upper) = contact_sets(&v, &data.g, data.h.as_deref());
    VISolution {
        v,
        residual,
        contact_lower,
        contact_upper,
        iterations,
        method,
        witnesses: None,
        converged: true,
    }
}

/// Sup norm of the complementarity defect of `v` for `lower ≤ v ≤ upper`.
pub(crate) fn kkt_defect(form: &DiscreteForm, v: &[f64], f: &[f64], lower: &[f64], upper: Option<&[f64]>) -> f64 {
    let bv = form.apply(v);
    (0..v.len())
        .map(|i| {
            let r = bv[i] - f[i];
            let hi = upper.map_or(f64::INFINITY, |u| u[i]);
            // Distance of v_i from the projection of v_i − r_i onto [g_i, h_i].
            let proj = (v[i] - r).max(lower[i]).min(hi);
            (v[i] - proj).abs()
        })
        .fold(0.0, f64::max)
}

pub(crate) fn require_markov(form: &DiscreteForm) -> Result<()> {
    let report = check_markov_structure(form);
    if report.passes {
        Ok(())
    } else {
        let v = &report.violations[0];
        Err(Error::invalid(format!(
            "form fails the Markov structural check ({} violations, first at ({}, {}) = {:.3e})",
            report.violations.len(),
            v.i,
            v.j,
            v.value
        )))
    }
}

/// Projected Gauss–Seidel (SOR when `relaxation != 1`) for
/// `lower ≤ v ≤ upper`, `B v − f` complementary. `observe` sees every
/// completed sweep.
pub(crate) fn projected_sweeps(
    form: &DiscreteForm,
    f: &[f64],
    lower: &[f64],
    upper: Option<&[f64]>,
    start: Vec<f64>,
    params: &SolverParams,
    mut observe: impl FnMut(&[f64]),
) -> Result<(Vec<f64>, usize)> {
    let b = form.system();
    let diag = form.system_diag();
    let n = form.dim();
    let omega = params.relaxation;
    let mut v = start;
    let clamp = |i: usize, x: f64| -> f64 {
        let x = x.max(lower[i]);
        match upper {
            Some(u) => x.min(u[i]),
            None => x,
        }
    };
    for i in 0..n {
        v[i] = clamp(i, v[i]);
    }
    let mut last_update = f64::INFINITY;
    for sweep in 1..=params.max_iter {
        let backward = params.symmetric_sweeps && sweep % 2 == 0;
        let mut max_update: f64 = 0.0;
        for k in 0..n {
            let i = if backward { n - 1 - k } else { k };
            let row = b.row(i);
            let mut sigma = f[i];
            for (&j, &bij) in row.col_indices().iter().zip(row.values()) {
                if j != i {
                    sigma -= bij * v[j];
                }
            }
            let gs = sigma / diag[i];
            let new = clamp(i, v[i] + omega * (gs - v[i]));
            max_update = max_update.max((new - v[i]).abs());
            v[i] = new;
        }
        observe(&v);
        last_update = max_update;
        if max_update < params.tol {
            return Ok((v, sweep));
        }
    }
    let residual_norm = kkt_defect(form, &v, f, lower, upper);
    Err(Error::NonConvergence {
        method: "projected Gauss-Seidel".into(),
        iterations: params.max_iter,
        last_update,
        residual_norm,
        last_iterate: v,
    })
}

pub fn solve_single_obstacle_pgs(form: &DiscreteForm, data: &ObstacleData, params: &SolverParams) -> Result<VISolution> {
    params.validate()?;
    data.validate(form.dim())?;
    if data.h.is_some() {
        return Err(Error::invalid("single-obstacle solver called with an upper obstacle"));
    }
    require_markov(form)?;
    let start: Vec<f64> = data.g.iter().map(|g| g.max(0.0)).collect();
    let (v, iters) = projected_sweeps(form, &data.f, &data.g, None, start, params, |_| {})?;
    Ok(build_solution(form, data, v, iters, Method::Pgs))
}

/// Exact solution of the scalar penalized equation
/// `d·x − rhs − (1/ε)(g − x)⁺ + (1/ε)(x − h)⁺ = 0`.
fn penalized_node(d: f64, rhs: f64, g: f64, h: Option<f64>, inv_eps: f64) -> f64 {
    let x = rhs / d;
    if x < g {
        (rhs + g * inv_eps) / (d + inv_eps)
    } else if let Some(h) = h.filter(|&h| x > h) {
        (rhs + h * inv_eps) / (d + inv_eps)
    } else {
        x
    }
}

/// Iterates of the penalty scheme, one per ε in the schedule.
#[derive(Debug, Clone)]
pub struct PenaltyTrace {
    pub eps: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
}

/// Penalty scheme; handles an upper obstacle too when `data.h` is present.
pub fn solve_single_obstacle_penalty(form: &DiscreteForm, data: &ObstacleData, params: &SolverParams) -> Result<VISolution> {
    solve_penalty_traced(form, data, params).map(|(s, _)| s)
}

pub fn solve_penalty_traced(
    form: &DiscreteForm,
    data: &ObstacleData,
    params: &SolverParams,
) -> Result<(VISolution, PenaltyTrace)> {
    params.validate()?;
    data.validate(form.dim())?;
    require_markov(form)?;
    let b = form.system();
    let diag = form.system_diag();
    let n = form.dim();
    let upper = data.h.as_deref();
    let mut v: Vec<f64> = vec![0.0; n];
    let mut total = 0usize;
    let mut trace = PenaltyTrace { eps: Vec::new(), iterates: Vec::new() };
    for &eps in &params.penalty_eps_schedule {
        let inv_eps = 1.0 / eps;
        let mut converged = false;
        let mut last_update = f64::INFINITY;
        for _ in 0..params.max_iter {
            total += 1;
            let mut max_update: f64 = 0.0;
            for i in 0..n {
                let row = b.row(i);
                let mut rhs = data.f[i];
                for (&j, &bij) in row.col_indices().iter().zip(row.values()) {
                    if j != i {
                        rhs -= bij * v[j];
                    }
                }
                let new = penalized_node(diag[i], rhs, data.g[i], upper.map(|u| u[i]), inv_eps);
                max_update = max_update.max((new - v[i]).abs());
                v[i] = new;
            }
            last_update = max_update;
            if max_update < params.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            let residual_norm = kkt_defect(form, &v, &data.f, &data.g, upper);
            return Err(Error::NonConvergence {
                method: format!("penalty sweeps at eps = {eps:e}"),
                iterations: params.max_iter,
                last_update,
                residual_norm,
                last_iterate: v,
            });
        }
        trace.eps.push(eps);
        trace.iterates.push(v.clone());
    }
    Ok((build_solution(form, data, v, total, Method::Penalty), trace))
}

/// KKT tolerance matching the final penalty parameter.
pub fn penalty_kkt_tolerance(params: &SolverParams) -> f64 {
    10.0 * params.penalty_eps_schedule.last().copied().unwrap_or(1.0).sqrt()
}

const CHECK_TOL: f64 = 1e-8;
const CHECK_SAMPLES: usize = 50;

/// True iff `v` is an α-potential (`Bv ≥ 0`) above `g` and no feasible
/// supersolution lies below it anywhere. The comparison set is the PGS
/// solution plus 50 random supersolutions `w* + z`, `Bz = q`, `q ≥ 0`.
pub fn smallest_potential_check(form: &DiscreteForm, v: &[f64], g: &[f64]) -> bool {
    let n = form.dim();
    if v.len() != n || g.len() != n {
        return false;
    }
    let scale = 1.0 + sup_norm(v);
    let tol = CHECK_TOL * scale;
    if form.apply(v).iter().any(|&r| r < -tol) || v.iter().zip(g).any(|(a, b)| a < &(b - tol)) {
        return false;
    }
    let params = SolverParams { tol: 1e-13 * scale, ..SolverParams::default() };
    let Ok(reference) = solve_single_obstacle_pgs(form, &ObstacleData::single(g.to_vec()), &params) else {
        return false;
    };
    if v.iter().zip(&reference.v).any(|(a, w)| *a > w + tol) {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let zero = vec![0.0; n];
    for _ in 0..CHECK_SAMPLES {
        let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * scale).collect();
        let Ok((z, _)) = projected_sweeps(form, &q, &zero, None, zero.clone(), &params, |_| {}) else {
            return false;
        };
        let w: Vec<f64> = reference.v.iter().zip(&z).map(|(a, b)| a + b).collect();
        if v.iter().zip(&w).any(|(a, b)| *a > b + tol) {
            return false;
        }
    }
    true
}

/// Largest lower-obstacle violation `max(g − v, 0)`.
pub fn lower_violation(v: &[f64], g: &[f64]) -> f64 {
    v.iter().zip(g).map(|(a, b)| (b - a).max(0.0)).fold(0.0, f64::max)
}

pub fn methods_agree(a: &[f64], b: &[f64], tol: f64) -> bool {
    sup_norm_diff(a, b) <= tol * (1.0 + sup_norm(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain_from_form, value_iteration};
    use crate::forms::{assemble_drift_diffusion, make_grid, DriftDiffusionCoeffs};

    fn laplacian(n: usize) -> DiscreteForm {
        let grid = make_grid(0.0, 1.0, n).unwrap();
        assemble_drift_diffusion(&grid, &DriftDiffusionCoeffs { a: 1.0, b: 0.0, d_coef: 0.0, c: 0.0 }, 1.0).unwrap()
    }

    fn drift_form(n: usize) -> DiscreteForm {
        let grid = make_grid(-1.0, 1.0, n).unwrap();
        assemble_drift_diffusion(&grid, &DriftDiffusionCoeffs { a: 0.2, b: 0.7, d_coef: -0.1, c: 0.0 }, 0.8).unwrap()
    }

    fn spike(n: usize) -> Vec<f64> {
        (0..n).map(|i| if i == n / 2 { 1.0 } else { -1.0 }).collect()
    }

    fn tight() -> SolverParams {
        SolverParams { tol: 1e-13, ..Default::default() }
    }

    #[test]
    fn nonpositive_obstacle_gives_zero() {
        let form = laplacian(9);
        let g: Vec<f64> = (0..9).map(|i| -(i as f64) * 0.1).collect();
        let sol = solve_single_obstacle_pgs(&form, &ObstacleData::single(g.clone()), &SolverParams::default()).unwrap();
        assert!(sol.v.iter().all(|&x| x == 0.0));
        let pen = solve_single_obstacle_penalty(&form, &ObstacleData::single(g), &SolverParams::default()).unwrap();
        assert!(pen.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_obstacle_is_fully_active() {
        let form = drift_form(12);
        let sol = solve_single_obstacle_pgs(&form, &ObstacleData::single(vec![0.7; 12]), &SolverParams::default()).unwrap();
        assert!(sol.v.iter().all(|&x| (x - 0.7).abs() < 1e-15));
        assert_eq!(sol.contact_lower, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn spike_matches_chain_value_iteration() {
        let form = laplacian(9);
        let g = spike(9);
        let sol = solve_single_obstacle_pgs(&form, &ObstacleData::single(g.clone()), &tight()).unwrap();
        let chain = build_chain_from_form(&form, g, vec![f64::INFINITY; 9], vec![0.0; 9]).unwrap();
        let oracle = value_iteration(&chain, 1e-14);
        assert!(sup_norm_diff(&sol.v, &oracle.v) <= 1e-8);
        assert!(smallest_potential_check(&form, &sol.v, &spike(9)));
    }

    #[test]
    fn penalty_agrees_with_pgs_on_spike() {
        let form = laplacian(9);
        let data = ObstacleData::single(spike(9));
        let pgs = solve_single_obstacle_pgs(&form, &data, &tight()).unwrap();
        let (pen, trace) = solve_penalty_traced(&form, &data, &tight()).unwrap();
        assert!(sup_norm_diff(&pgs.v, &pen.v) <= 1e-6);
        let violations: Vec<f64> = trace.iterates.iter().map(|v| lower_violation(v, &data.g)).collect();
        assert!(violations.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{violations:?}");
        let report = crate::double::verify_vi_residual(&form, &pen, &data, penalty_kkt_tolerance(&tight()));
        assert!(report.passes, "{report:?}");
    }

    #[test]
    fn minimality_check_detects_perturbations() {
        let form = drift_form(15);
        let g: Vec<f64> = (0..15).map(|i| (i as f64 * 0.6).sin()).collect();
        let sol = solve_single_obstacle_pgs(&form, &ObstacleData::single(g.clone()), &tight()).unwrap();
        assert!(smallest_potential_check(&form, &sol.v, &g));

        let free = (0..15).find(|i| !sol.contact_lower.contains(i)).expect("a non-contact node");
        let mut raised = sol.v.clone();
        raised[free] += 0.1;
        assert!(!smallest_potential_check(&form, &raised, &g));

        let touch = sol.contact_lower[0];
        let mut lowered = sol.v.clone();
        lowered[touch] -= 0.1;
        assert!(!smallest_potential_check(&form, &lowered, &g));
    }

    #[test]
    fn pgs_iterates_move_monotonically_from_below() {
        let form = drift_form(20);
        let g: Vec<f64> = (0..20).map(|i| (i as f64 * 0.4).cos() * 0.8 - 0.1).collect();
        let start: Vec<f64> = g.iter().map(|x| x.max(0.0)).collect();
        let mut iterates = vec![start.clone()];
        projected_sweeps(&form, &[0.0; 20], &g, None, start, &tight(), |v| iterates.push(v.to_vec())).unwrap();
        for i in 0..20 {
            let deltas: Vec<f64> = iterates.windows(2).skip(1).map(|w| w[1][i] - w[0][i]).collect();
            let up = deltas.iter().any(|d| *d > 1e-14);
            let down = deltas.iter().any(|d| *d < -1e-14);
            assert!(!(up && down), "component {i} oscillates");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn pgs_iterates_never_oscillate(
            a in 0.1f64..2.0,
            b in -2.0f64..2.0,
            d_coef in -2.0f64..2.0,
            alpha in 0.1f64..2.0,
            n in 3usize..40,
            g in proptest::collection::vec(-1.0f64..1.0, 40),
        ) {
            let grid = make_grid(-1.0, 1.0, n).unwrap();
            let form = assemble_drift_diffusion(&grid, &DriftDiffusionCoeffs { a, b, d_coef, c: 0.0 }, alpha).unwrap();
            let g = &g[..n];
            let start: Vec<f64> = g.iter().map(|x| x.max(0.0)).collect();
            let mut iterates = vec![start.clone()];
            projected_sweeps(&form, &vec![0.0; n], g, None, start, &tight(), |v| iterates.push(v.to_vec())).unwrap();
            for i in 0..n {
                let deltas: Vec<f64> = iterates.windows(2).skip(1).map(|w| w[1][i] - w[0][i]).collect();
                let up = deltas.iter().any(|d| *d > 1e-14);
                let down = deltas.iter().any(|d| *d < -1e-14);
                proptest::prop_assert!(!(up && down), "component {} oscillates", i);
            }
        }
    }

    #[test]
    fn non_convergence_is_an_error() {
        let form = laplacian(30);
        let params = SolverParams { max_iter: 1, ..Default::default() };
        let err = solve_single_obstacle_pgs(&form, &ObstacleData::single(spike(30)), &params).unwrap_err();
        match err {
            Error::NonConvergence { iterations, last_iterate, .. } => {
                assert_eq!(iterations, 1);
                assert_eq!(last_iterate.len(), 30);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = solve_single_obstacle_penalty(&form, &ObstacleData::single(spike(30)), &params).unwrap_err();
        assert!(err.to_string().contains("eps = 1e-2"), "{err}");
    }

    #[test]
    fn params_validation() {
        let p = SolverParams { penalty_eps_schedule: vec![1e-4, 1e-2], ..Default::default() };
        assert!(p.validate().is_err());
        let p = SolverParams { relaxation: 2.0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
