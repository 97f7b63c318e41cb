//! End-to-end scenario run: assemble, solve, cross-check, simulate, report.
//!
//! `report.json` holds no timestamps, so two runs with the same config and
//! seed write identical bytes. Wall-clock data goes to `metadata.json`.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{build_chain_from_form, value_iteration};
use crate::double::{extract_saddle_regions, solve_double_pgs, solve_separability_iteration, verify_vi_residual};
use crate::error::{Error, Result};
use crate::forms::{check_markov_structure, estimate_sector_constant, Grid1D};
use crate::linalg::sup_norm_diff;
use crate::obstacle::{solve_single_obstacle_penalty, ObstacleData, VISolution};
use crate::scenario::{build_scenario, ScenarioConfig, ScenarioKind};
use crate::sim::{verify_saddle_mc, SaddleMcReport};

pub const ORACLE_TOL: f64 = 1e-8;
pub const METHOD_TOL: f64 = 1e-6;
pub const BOUND_TOL: f64 = 1e-10;
/// Sector constants are only computed up to this size (dense SVD).
const SECTOR_LIMIT: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NonConvergence,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::NonConvergence => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol, pass: value <= tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    pub tau: Vec<usize>,
    pub sigma: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub name: String,
    pub scenario_kind: ScenarioKind,
    pub status: Status,
    pub alpha: f64,
    pub alpha0_est: f64,
    pub sector_k: Option<f64>,
    pub markov_passes: bool,
    pub v_x0: Option<f64>,
    pub checks: Vec<Check>,
    pub regions: Option<Regions>,
    pub mc: Option<SaddleMcReport>,
    pub notes: Vec<String>,
}

impl PipelineReport {
    /// Exit code as a function of the report alone.
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    fn settle(&mut self) {
        if self.status != Status::NonConvergence {
            let ok = self.checks.iter().all(|c| c.pass) && self.mc.as_ref().is_none_or(|m| m.passes);
            self.status = if ok { Status::Pass } else { Status::Fail };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl ErrorRecord {
    pub fn new(stage: &str, e: &Error) -> Self {
        let kind = match e {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Numeric(_) => "numeric",
            Error::SeparabilityFailure { .. } => "separability_failure",
            Error::SizeGuard(_) => "size_guard",
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        };
        let iterations = match e {
            Error::NonConvergence { iterations, .. } => Some(*iterations),
            Error::SeparabilityFailure { iteration } => Some(*iteration),
            _ => None,
        };
        ErrorRecord { stage: stage.into(), kind: kind.into(), message: e.to_string(), iterations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub name: String,
    pub grid: Grid1D,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
    pub contact_lower: Vec<usize>,
    pub contact_upper: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub errors: Vec<ErrorRecord>,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code()
    }
}

/// Rows `x,g,h,v,lower_contact,upper_contact`. Fails if any row leaves
/// `[g, h]` by more than [`BOUND_TOL`].
pub fn profile_csv(grid: &Grid1D, data: &ObstacleData, sol: &VISolution) -> Result<String> {
    let h = data.h.as_deref().ok_or_else(|| Error::invalid("profile needs an upper obstacle"))?;
    let mut out = String::from("x,g,h,v,lower_contact,upper_contact\n");
    let (mut lo, mut up) = (sol.contact_lower.iter().peekable(), sol.contact_upper.iter().peekable());
    for i in 0..grid.n {
        let (g, hi, v) = (data.g[i], h[i], sol.v[i]);
        if v < g - BOUND_TOL || v > hi + BOUND_TOL {
            return Err(Error::Numeric(format!("profile row {i}: v = {v} outside [{g}, {hi}]")));
        }
        let l = lo.next_if_eq(&&i).is_some() as u8;
        let u = up.next_if_eq(&&i).is_some() as u8;
        out.push_str(&format!("{},{g},{hi},{v},{l},{u}\n", grid.node(i)));
    }
    Ok(out)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Runs every stage and writes the outputs into `config.outputs`.
pub fn run_pipeline(config: &ScenarioConfig) -> Result<PipelineOutcome> {
    run_pipeline_in(config, &config.outputs)
}

pub fn run_pipeline_in(config: &ScenarioConfig, out: &Path) -> Result<PipelineOutcome> {
    fs::create_dir_all(out)?;
    let mut errors = Vec::new();
    let outcome = stages(config, out, &mut errors);
    let report = match outcome {
        Ok(report) => report,
        Err(e) => {
            errors.push(ErrorRecord::new("pipeline", &e));
            failed_report(config, if e.is_non_convergence() { Status::NonConvergence } else { Status::Fail })
        }
    };
    write_json(out, "report.json", &report)?;
    write_json(out, "errors.json", &errors)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        out,
        "metadata.json",
        &json!({ "timestamp_unix": stamp, "version": env!("CARGO_PKG_VERSION"), "scenario": config.name }),
    )?;
    Ok(PipelineOutcome { report, errors })
}

fn failed_report(config: &ScenarioConfig, status: Status) -> PipelineReport {
    PipelineReport {
        name: config.name.clone(),
        scenario_kind: config.scenario_kind,
        status,
        alpha: config.alpha.unwrap_or(f64::NAN),
        alpha0_est: f64::NAN,
        sector_k: None,
        markov_passes: false,
        v_x0: None,
        checks: Vec::new(),
        regions: None,
        mc: None,
        notes: Vec::new(),
    }
}

fn stages(config: &ScenarioConfig, out: &Path, errors: &mut Vec<ErrorRecord>) -> Result<PipelineReport> {
    let scenario = build_scenario(config)?;
    let (grid, form, data) = (&scenario.grid, &scenario.form, &scenario.data);
    let mut report = failed_report(config, Status::Pass);
    report.alpha = form.alpha();
    report.alpha0_est = form.alpha0_est();
    report.markov_passes = check_markov_structure(form).passes;
    if form.dim() <= SECTOR_LIMIT {
        report.sector_k = Some(estimate_sector_constant(form)?);
    }

    let pgs = solve_double_pgs(form, data, &config.solver)?;
    let h = data.h.clone().expect("scenarios carry both obstacles");

    let chain = build_chain_from_form(form, data.g.clone(), h.clone(), data.f.clone())?;
    let oracle = value_iteration(&chain, ORACLE_TOL * 1e-3);
    report.checks.push(Check::at_most("oracle_value_iteration", sup_norm_diff(&pgs.v, &oracle.v), ORACLE_TOL));

    let penalty = solve_single_obstacle_penalty(form, data, &config.solver)?;
    report.checks.push(Check::at_most("penalty_agreement", sup_norm_diff(&pgs.v, &penalty.v), METHOD_TOL));

    match solve_separability_iteration(form, data, &config.solver) {
        Ok(sep) => report.checks.push(Check::at_most("separability_agreement", sup_norm_diff(&pgs.v, &sep.v), METHOD_TOL)),
        Err(e @ Error::SeparabilityFailure { .. }) => {
            errors.push(ErrorRecord::new("separability", &e));
            report.checks.push(Check { name: "separability_agreement".into(), value: f64::INFINITY, tol: METHOD_TOL, pass: false });
        }
        Err(e) => return Err(e),
    }

    let scale = 1.0 + form.system_diag().iter().fold(0.0f64, |m, d| m.max(*d)) * (1.0 + crate::linalg::sup_norm(&pgs.v));
    let residual = verify_vi_residual(form, &pgs, data, 1e-8 * scale);
    let worst = residual.worst_lower.max(residual.worst_upper).max(residual.worst_interior).max(residual.worst_bound);
    report.checks.push(Check::at_most("vi_residual", worst, residual.tol_kkt));

    let (tau, sigma) = extract_saddle_regions(&pgs, data)?;
    report.regions = Some(Regions { tau, sigma });

    let solution = SolutionDocument {
        name: config.name.clone(),
        grid: *grid,
        x: grid.nodes(),
        g: data.g.clone(),
        h: h.clone(),
        v: pgs.v.clone(),
        contact_lower: pgs.contact_lower.clone(),
        contact_upper: pgs.contact_upper.clone(),
        iterations: pgs.iterations,
    };
    write_json(out, "solution.json", &solution)?;
    match profile_csv(grid, data, &pgs) {
        Ok(csv) => {
            fs::write(out.join("profile.csv"), csv)?;
            report.checks.push(Check::at_most("profile_bounds", 0.0, BOUND_TOL));
        }
        Err(e) => {
            errors.push(ErrorRecord::new("profile", &e));
            report.checks.push(Check { name: "profile_bounds".into(), value: f64::INFINITY, tol: BOUND_TOL, pass: false });
        }
    }

    match &scenario.process {
        Some(process) => {
            report.v_x0 = Some(grid.interpolate(&pgs.v, process.x0));
            let mc = &config.mc;
            let saddle = verify_saddle_mc(&pgs, grid, process, data, &mc.sweep, mc.n_paths, mc.seed, mc.grid_tol)?;
            fs::write(out.join("mc.csv"), saddle.to_csv())?;
            if saddle.warning {
                report.notes.push(format!(
                    "truncation fraction {:.4} exceeds the warning level; estimates may be biased",
                    saddle.truncation_fraction
                ));
            }
            report.mc = Some(saddle);
        }
        None => report.notes.push(
            "jump scenario: no continuous-path Monte Carlo; the game value is certified by the chain oracle check".into(),
        ),
    }
    report.settle();
    Ok(report)
}
