//! Scenario configuration and the ready-made scenario builders.
//!
//! A scenario document is JSON. The `coefficients` block is interpreted
//! according to `scenario_kind`, so it is parsed in a second pass once the
//! kind is known.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::forms::{
    assemble_drift_diffusion, assemble_jump_form, check_markov_structure, make_grid, DiscreteForm,
    DriftDiffusionCoeffs, Grid1D, JumpKernelSpec,
};
use crate::obstacle::{ObstacleData, SolverParams};
use crate::sim::{ProcessSpec, StoppingRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CallablePut,
    DriftDiffusion,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid1D> {
        make_grid(self.x_min, self.x_max, self.n)
    }
}

/// How the diffusion coefficient of the callable-put form is read off the
/// process `λW + (μ − λ²/2)t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionReading {
    /// `a = λ²/2`, the generator of the simulated process.
    #[default]
    Generator,
    /// `a = λ` as the coefficient appears in front of `∫ u'v'`.
    Literal,
}

/// Either one constant or one value per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PenaltyProfile {
    Constant(f64),
    Nodal(Vec<f64>),
}

impl Default for PenaltyProfile {
    fn default() -> Self {
        PenaltyProfile::Constant(0.05)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallablePutCoeffs {
    pub lambda: f64,
    pub mu: f64,
    pub strike: f64,
    pub cap: f64,
    #[serde(default)]
    pub penalty_profile: PenaltyProfile,
    #[serde(default)]
    pub reading: DiffusionReading,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Coefficients {
    CallablePut(CallablePutCoeffs),
    DriftDiffusion(DriftDiffusionCoeffs),
    Jump(JumpKernelSpec),
}

/// Obstacle or source profile on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `height · max(0, 1 − |x − center| / width)`, shifted by `base`.
    Hat { center: f64, width: f64, height: f64, #[serde(default)] base: f64 },
    /// Like `Hat` but flat at `base + height` for `|x − center| ≤ plateau`.
    Trapezoid { center: f64, plateau: f64, width: f64, height: f64, #[serde(default)] base: f64 },
    Nodal { values: Vec<f64> },
}

impl Profile {
    pub fn sample(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        match self {
            Profile::Constant { value } => Ok(vec![*value; grid.n]),
            Profile::Hat { center, width, height, base } => {
                if !(*width > 0.0) {
                    return Err(Error::Validation(format!("hat width must be positive, got {width}")));
                }
                Ok(grid.nodes().iter().map(|x| base + height * (1.0 - (x - center).abs() / width).max(0.0)).collect())
            }
            Profile::Trapezoid { center, plateau, width, height, base } => {
                if !(*width > 0.0 && *plateau >= 0.0) {
                    return Err(Error::Validation("trapezoid needs width > 0 and plateau ≥ 0".into()));
                }
                Ok(grid
                    .nodes()
                    .iter()
                    .map(|x| base + height * (1.0 - ((x - center).abs() - plateau).max(0.0) / width).max(0.0))
                    .collect())
            }
            Profile::Nodal { values } if values.len() == grid.n => Ok(values.clone()),
            Profile::Nodal { values } => Err(Error::Validation(format!(
                "nodal profile has {} values for {} grid nodes",
                values.len(),
                grid.n
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleProfiles {
    pub lower: Profile,
    pub upper: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub x0: f64,
    /// Relative allowance for `|J(τ̂, σ̂) − v(x0)|`.
    pub grid_tol: f64,
    pub sweep: Vec<StoppingRule>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: 100_000, dt: 1e-3, t_max: 4.0, seed: 1, x0: 0.0, grid_tol: 0.02, sweep: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub scenario_kind: ScenarioKind,
    pub grid: GridSpec,
    pub coefficients: Coefficients,
    pub alpha: Option<f64>,
    pub solver: SolverParams,
    pub mc: McConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<ObstacleProfiles>,
    pub outputs: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    scenario_kind: ScenarioKind,
    grid: GridSpec,
    coefficients: Value,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    solver: SolverParams,
    #[serde(default)]
    mc: McConfig,
    #[serde(default)]
    obstacles: Option<ObstacleProfiles>,
    outputs: PathBuf,
}

fn schema(context: &str, e: serde_json::Error) -> Error {
    Error::Schema(format!("{context}: {e}"))
}

/// Parses and validates a scenario document, filling defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| schema("scenario", e))?;
    let coefficients = match raw.scenario_kind {
        ScenarioKind::CallablePut => {
            Coefficients::CallablePut(serde_json::from_value(raw.coefficients).map_err(|e| schema("coefficients", e))?)
        }
        ScenarioKind::DriftDiffusion => {
            Coefficients::DriftDiffusion(serde_json::from_value(raw.coefficients).map_err(|e| schema("coefficients", e))?)
        }
        ScenarioKind::Jump => {
            Coefficients::Jump(serde_json::from_value(raw.coefficients).map_err(|e| schema("coefficients", e))?)
        }
    };
    let mut config = ScenarioConfig {
        name: raw.name,
        scenario_kind: raw.scenario_kind,
        grid: raw.grid,
        coefficients,
        alpha: raw.alpha,
        solver: raw.solver,
        mc: raw.mc,
        obstacles: raw.obstacles,
        outputs: raw.outputs,
    };
    validate(&config)?;
    if config.alpha.is_none() {
        config.alpha = Some(default_alpha(&config)?);
    }
    Ok(config)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// Canonical serialization: pretty JSON with a trailing newline.
pub fn to_canonical_json(config: &ScenarioConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(config)? + "\n")
}

pub fn save_scenario(config: &ScenarioConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_canonical_json(config)?)?;
    Ok(())
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn validate(config: &ScenarioConfig) -> Result<()> {
    let grid = config.grid.build().map_err(|e| invalid(e.to_string()))?;
    config.solver.validate().map_err(|e| invalid(e.to_string()))?;
    if let Some(alpha) = config.alpha {
        if !(alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
    }
    let mc = &config.mc;
    if mc.n_paths == 0 || !(mc.dt > 0.0 && mc.dt < mc.t_max) || !(mc.grid_tol >= 0.0) {
        return Err(invalid("mc needs n_paths ≥ 1, 0 < dt < t_max and grid_tol ≥ 0"));
    }
    match (&config.coefficients, &config.obstacles) {
        (Coefficients::CallablePut(c), None) => {
            if !(c.lambda > 0.0) {
                return Err(invalid(format!("lambda must be positive, got {}", c.lambda)));
            }
            if !(c.strike > 0.0) {
                return Err(invalid(format!("strike must be positive, got {}", c.strike)));
            }
            if !(c.cap > grid.x_min && c.cap < grid.x_max) {
                return Err(invalid(format!(
                    "cap N = {} must lie inside the grid ({}, {})",
                    c.cap, grid.x_min, grid.x_max
                )));
            }
            let p = penalty_values(&c.penalty_profile, &grid)?;
            if p.iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid("penalty profile must be nonnegative on the grid"));
            }
        }
        (Coefficients::CallablePut(_), Some(_)) => {
            return Err(invalid("callable_put derives its obstacles; remove the obstacles block"));
        }
        (Coefficients::DriftDiffusion(c), obstacles) => {
            c.validate().map_err(|e| invalid(e.to_string()))?;
            sample_obstacles(obstacles.as_ref(), &grid)?;
        }
        (Coefficients::Jump(k), obstacles) => {
            k.validate().map_err(|e| invalid(e.to_string()))?;
            sample_obstacles(obstacles.as_ref(), &grid)?;
        }
    }
    Ok(())
}

fn penalty_values(p: &PenaltyProfile, grid: &Grid1D) -> Result<Vec<f64>> {
    match p {
        PenaltyProfile::Constant(c) => Ok(vec![*c; grid.n]),
        PenaltyProfile::Nodal(v) if v.len() == grid.n => Ok(v.clone()),
        PenaltyProfile::Nodal(v) => Err(invalid(format!("penalty profile has {} values for {} nodes", v.len(), grid.n))),
    }
}

fn sample_obstacles(obstacles: Option<&ObstacleProfiles>, grid: &Grid1D) -> Result<ObstacleData> {
    let o = obstacles.ok_or_else(|| invalid("this scenario kind needs an obstacles block"))?;
    let g = o.lower.sample(grid)?;
    let h = o.upper.sample(grid)?;
    let mut data = ObstacleData::double(g, h);
    if let Some(src) = &o.source {
        data = data.with_source(src.sample(grid)?);
    }
    data.validate(grid.n).map_err(|e| invalid(e.to_string()))?;
    Ok(data)
}

fn callable_drift(c: &CallablePutCoeffs) -> DriftDiffusionCoeffs {
    let a = match c.reading {
        DiffusionReading::Generator => 0.5 * c.lambda * c.lambda,
        DiffusionReading::Literal => c.lambda,
    };
    DriftDiffusionCoeffs { a, b: -(c.mu - 0.5 * c.lambda * c.lambda), d_coef: 0.0, c: 0.0 }
}

fn assemble(config: &ScenarioConfig, grid: &Grid1D, alpha: f64) -> Result<DiscreteForm> {
    match &config.coefficients {
        Coefficients::CallablePut(c) => assemble_drift_diffusion(grid, &callable_drift(c), alpha),
        Coefficients::DriftDiffusion(c) => assemble_drift_diffusion(grid, c, alpha),
        Coefficients::Jump(k) => assemble_jump_form(grid, k, alpha),
    }
}

/// `estimate_alpha0 + 1` of the stiffness on the configured grid.
fn default_alpha(config: &ScenarioConfig) -> Result<f64> {
    let grid = config.grid.build()?;
    // alpha0 does not depend on alpha; any admissible probe value works.
    let probe = assemble(config, &grid, 1e9)?;
    Ok(probe.alpha0_est() + 1.0)
}

/// Lower payoff `max(0, e^x − K)` below the cap, zero above it.
pub fn callable_lower(x: f64, strike: f64, cap: f64) -> f64 {
    if x <= cap {
        (x.exp() - strike).max(0.0)
    } else {
        0.0
    }
}

/// Assembled scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid1D,
    pub form: DiscreteForm,
    pub data: ObstacleData,
    /// Continuous process for Monte Carlo play; `None` for jump scenarios.
    pub process: Option<ProcessSpec>,
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    let grid = config.grid.build()?;
    let alpha = match config.alpha {
        Some(a) => a,
        None => default_alpha(config)?,
    };
    let form = assemble(config, &grid, alpha)?;
    let report = check_markov_structure(&form);
    if !report.passes {
        return Err(Error::Validation(format!(
            "assembled matrix fails the Markov structural check at h = {:.4e} ({} violations); refine the grid to h ≤ {:.4e}",
            grid.h,
            report.violations.len(),
            grid.h / 2.0
        )));
    }
    let mc = &config.mc;
    let (data, process) = match &config.coefficients {
        Coefficients::CallablePut(c) => {
            let g: Vec<f64> = grid.nodes().iter().map(|&x| callable_lower(x, c.strike, c.cap)).collect();
            let p = penalty_values(&c.penalty_profile, &grid)?;
            let h = g.iter().zip(&p).map(|(g, p)| g + p).collect();
            let process = ProcessSpec::diffusion(c.lambda, c.mu, alpha, mc.x0, mc.dt, mc.t_max);
            (ObstacleData::double(g, h), Some(process))
        }
        Coefficients::DriftDiffusion(c) => {
            // Generator a·u'' + (d − b)·u' with killing rate c.
            let lambda = (2.0 * c.a).sqrt();
            let process = ProcessSpec::diffusion(lambda, c.d_coef - c.b + c.a, alpha + c.c, mc.x0, mc.dt, mc.t_max);
            (sample_obstacles(config.obstacles.as_ref(), &grid)?, Some(process))
        }
        Coefficients::Jump(_) => (sample_obstacles(config.obstacles.as_ref(), &grid)?, None),
    };
    Ok(Scenario { grid, form, data, process })
}

pub fn build_callable_put(config: &ScenarioConfig) -> Result<(DiscreteForm, ObstacleData, ProcessSpec)> {
    if config.scenario_kind != ScenarioKind::CallablePut {
        return Err(Error::invalid("build_callable_put needs a callable_put scenario"));
    }
    let s = build_scenario(config)?;
    let process = s.process.expect("callable put always has a process");
    Ok((s.form, s.data, process))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "cp",
        "scenario_kind": "callable_put",
        "grid": {"x_min": -2.0, "x_max": 3.0, "n": 49},
        "coefficients": {"lambda": 1.0, "mu": 0.2, "strike": 1.0, "cap": 1.5},
        "outputs": "out/cp"
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = parse_scenario(MINIMAL).unwrap();
        assert_eq!(c.solver, SolverParams::default());
        assert_eq!(c.mc, McConfig::default());
        // Upwinded drift-diffusion stiffness has a positive semidefinite symmetric part.
        assert!((c.alpha.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_and_extra_fields_are_named() {
        let missing = MINIMAL.replace(r#""strike": 1.0, "#, "");
        let err = parse_scenario(&missing).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("strike")), "{err}");
        let extra = MINIMAL.replace(r#""name": "cp","#, r#""name": "cp", "colour": 1,"#);
        let err = parse_scenario(&extra).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("colour")), "{err}");
    }

    #[test]
    fn invariant_violations_are_validation_errors() {
        let bad_cap = MINIMAL.replace(r#""cap": 1.5"#, r#""cap": 3.5"#);
        assert!(matches!(parse_scenario(&bad_cap), Err(Error::Validation(_))));
        let bad_strike = MINIMAL.replace(r#""strike": 1.0"#, r#""strike": 0.0"#);
        assert!(matches!(parse_scenario(&bad_strike), Err(Error::Validation(_))));
        let bad_p = MINIMAL.replace(r#""cap": 1.5"#, r#""cap": 1.5, "penalty_profile": -0.1"#);
        assert!(matches!(parse_scenario(&bad_p), Err(Error::Validation(_))));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let once = to_canonical_json(&parse_scenario(MINIMAL).unwrap()).unwrap();
        let twice = to_canonical_json(&parse_scenario(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn callable_put_obstacles() {
        let c = parse_scenario(MINIMAL).unwrap();
        let (form, data, process) = build_callable_put(&c).unwrap();
        let grid = c.grid.build().unwrap();
        assert_eq!(form.dim(), 49);
        for (i, x) in grid.nodes().iter().enumerate() {
            assert!(data.g[i] >= 0.0);
            if *x > 1.5 + 1e-12 || x.exp() <= 1.0 {
                assert_eq!(data.g[i], 0.0);
            }
            assert!((data.h.as_ref().unwrap()[i] - data.g[i] - 0.05).abs() < 1e-15);
        }
        assert_eq!(process.lambda, 1.0);
    }

    #[test]
    fn jump_scenario_needs_obstacles() {
        let doc = r#"{
            "name": "j", "scenario_kind": "jump",
            "grid": {"x_min": -1.0, "x_max": 1.0, "n": 19},
            "coefficients": {"kappa": 1.0, "beta_exp": 1.0, "eta": 0.3, "R": 0.5},
            "outputs": "out/j"
        }"#;
        assert!(matches!(parse_scenario(doc), Err(Error::Validation(_))));
        let with = doc.replace(
            r#""outputs""#,
            r#""obstacles": {"lower": {"kind": "constant", "value": 0.0}, "upper": {"kind": "hat", "center": 0.0, "width": 0.5, "height": 1.0, "base": 0.2}}, "outputs""#,
        );
        let s = build_scenario(&parse_scenario(&with).unwrap()).unwrap();
        assert!(s.process.is_none());
        assert_eq!(s.data.h.unwrap()[9], 1.2);
    }
}
