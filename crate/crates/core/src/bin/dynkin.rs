use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use dynkin_core::chain::{build_chain_from_form, check_saddle, enumeration_csv, value_iteration};
use dynkin_core::double::{extract_saddle_regions, solve_double_pgs, solve_separability_iteration};
use dynkin_core::forms::check_markov_structure;
use dynkin_core::obstacle::{solve_single_obstacle_penalty, VISolution};
use dynkin_core::pipeline::{profile_csv, run_pipeline_in, ErrorRecord, ORACLE_TOL};
use dynkin_core::scenario::{build_scenario, load_scenario, Scenario, ScenarioConfig};
use dynkin_core::sim::{hitting_time_payoff, verify_saddle_mc, GridPayoffs, StoppingRule};
use dynkin_core::{sup_norm_diff, Error, Result};

#[derive(Parser)]
#[command(name = "dynkin", version, about = "Two-obstacle problems and Dynkin games on 1-D grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `outputs`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMethod {
    Pgs,
    Penalty,
    Separability,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the discrete form and report its structural constants.
    Assemble(Common),
    /// Solve the two-obstacle problem.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "pgs")]
        method: SolveMethod,
    },
    /// Compare the solver with chain value iteration.
    Oracle(Common),
    /// Estimate the payoff of the contact-region strategy pair.
    Simulate(Common),
    /// Monte Carlo saddle-point verification against the configured sweep.
    Verify(Common),
    /// Full pipeline.
    Run(Common),
}

struct Ctx {
    config: ScenarioConfig,
    out: PathBuf,
}

fn context(common: &Common) -> Result<Ctx> {
    let mut config = load_scenario(&common.config)?;
    if let Some(seed) = common.seed {
        config.mc.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| config.outputs.clone());
    fs::create_dir_all(&out)?;
    Ok(Ctx { config, out })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn solved(ctx: &Ctx) -> Result<(Scenario, VISolution)> {
    let s = build_scenario(&ctx.config)?;
    let sol = solve_double_pgs(&s.form, &s.data, &ctx.config.solver)?;
    Ok((s, sol))
}

fn assemble(ctx: &Ctx) -> Result<i32> {
    let s = build_scenario(&ctx.config)?;
    let form = s.form.clone().with_sector_constant()?;
    let markov = check_markov_structure(&form);
    write_json(&ctx.out, "form.json", &form.to_document())?;
    let summary = json!({
        "n": form.dim(),
        "alpha": form.alpha(),
        "alpha0_est": form.alpha0_est(),
        "sector_k": form.sector_k(),
        "markov_passes": markov.passes,
        "markov_violations": markov.violations.len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn solve(ctx: &Ctx, method: SolveMethod) -> Result<i32> {
    let s = build_scenario(&ctx.config)?;
    let params = &ctx.config.solver;
    let sol = match method {
        SolveMethod::Pgs => solve_double_pgs(&s.form, &s.data, params)?,
        SolveMethod::Penalty => solve_single_obstacle_penalty(&s.form, &s.data, params)?,
        SolveMethod::Separability => solve_separability_iteration(&s.form, &s.data, params)?,
    };
    write_json(&ctx.out, "solution.json", &sol)?;
    // Penalty iterates sit O(eps) outside [g, h]; the profile shows their projection.
    let shown = match method {
        SolveMethod::Penalty => {
            let h = s.data.h.as_deref().expect("scenarios carry both obstacles");
            let v = (0..sol.v.len()).map(|i| sol.v[i].max(s.data.g[i]).min(h[i])).collect();
            VISolution { v, ..sol.clone() }
        }
        _ => sol.clone(),
    };
    fs::write(ctx.out.join("profile.csv"), profile_csv(&s.grid, &s.data, &shown)?)?;
    println!("{} iterations, {} lower / {} upper contact nodes", sol.iterations, sol.contact_lower.len(), sol.contact_upper.len());
    Ok(0)
}

fn oracle(ctx: &Ctx) -> Result<i32> {
    let (s, sol) = solved(ctx)?;
    let h = s.data.h.clone().expect("scenarios carry both obstacles");
    let chain = build_chain_from_form(&s.form, s.data.g.clone(), h, s.data.f.clone())?;
    let run = value_iteration(&chain, ORACLE_TOL * 1e-3);
    let diff = sup_norm_diff(&sol.v, &run.v);
    write_json(&ctx.out, "chain.json", &chain.to_document())?;
    let mut doc = json!({
        "sup_diff": diff,
        "tol": ORACLE_TOL,
        "pass": diff <= ORACLE_TOL,
        "value_iterations": run.iterations,
        "delta": chain.delta(),
    });
    let mut pass = diff <= ORACLE_TOL;
    if chain.dim() <= 8 {
        fs::write(ctx.out.join("enumeration.csv"), enumeration_csv(&chain, 0)?)?;
        let saddle = check_saddle(&chain, &run.v, 1e-9)?;
        pass &= saddle.passes;
        doc["saddle"] = serde_json::to_value(&saddle)?;
    }
    write_json(&ctx.out, "oracle.json", &doc)?;
    println!("sup |v_pgs - v_chain| = {diff:.3e} ({})", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { 0 } else { 2 })
}

fn simulate(ctx: &Ctx) -> Result<i32> {
    let (s, sol) = solved(ctx)?;
    let process = s.process.as_ref().ok_or_else(|| Error::Validation("jump scenarios are not simulated".into()))?;
    let (tau, sigma) = extract_saddle_regions(&sol, &s.data)?;
    let h = s.data.h.clone().expect("scenarios carry both obstacles");
    let payoffs = GridPayoffs { grid: &s.grid, g: &s.data.g, h: &h };
    let mc = &ctx.config.mc;
    let est = hitting_time_payoff(
        process,
        payoffs,
        &StoppingRule::HitRegion { region: tau },
        &StoppingRule::HitRegion { region: sigma },
        mc.n_paths,
        mc.seed,
    )?;
    let v_x0 = s.grid.interpolate(&sol.v, process.x0);
    write_json(&ctx.out, "simulate.json", &json!({ "v_x0": v_x0, "estimate": est }))?;
    println!("J(tau, sigma) = {:.6} ± {:.6}, v(x0) = {v_x0:.6}", est.mean, est.stderr);
    Ok(0)
}

fn verify(ctx: &Ctx) -> Result<i32> {
    let (s, sol) = solved(ctx)?;
    let process = s.process.as_ref().ok_or_else(|| Error::Validation("jump scenarios are not simulated".into()))?;
    let mc = &ctx.config.mc;
    let report = verify_saddle_mc(&sol, &s.grid, process, &s.data, &mc.sweep, mc.n_paths, mc.seed, mc.grid_tol)?;
    write_json(&ctx.out, "mc_report.json", &report)?;
    fs::write(ctx.out.join("mc.csv"), report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(if report.passes { 0 } else { 2 })
}

fn run(ctx: &Ctx) -> Result<i32> {
    let outcome = run_pipeline_in(&ctx.config, &ctx.out)?;
    for c in &outcome.report.checks {
        println!("{:<24} {:.3e} (tol {:.1e}) {}", c.name, c.value, c.tol, if c.pass { "PASS" } else { "FAIL" });
    }
    if let Some(mc) = &outcome.report.mc {
        println!("{:<24} {}", "monte_carlo_saddle", if mc.passes { "PASS" } else { "FAIL" });
    }
    for e in &outcome.errors {
        eprintln!("error [{}]: {}", e.stage, e.message);
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stage) = match &cli.command {
        Command::Assemble(c) => (c, "assemble"),
        Command::Solve { common, .. } => (common, "solve"),
        Command::Oracle(c) => (c, "oracle"),
        Command::Simulate(c) => (c, "simulate"),
        Command::Verify(c) => (c, "verify"),
        Command::Run(c) => (c, "run"),
    };
    let mut out = common.out.clone();
    let result = context(common).and_then(|ctx| {
        out = Some(ctx.out.clone());
        match &cli.command {
            Command::Assemble(_) => assemble(&ctx),
            Command::Solve { method, .. } => solve(&ctx, *method),
            Command::Oracle(_) => oracle(&ctx),
            Command::Simulate(_) => simulate(&ctx),
            Command::Verify(_) => verify(&ctx),
            Command::Run(_) => run(&ctx),
        }
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = out {
                let _ = fs::create_dir_all(&dir);
                let _ = write_json(&dir, "errors.json", &[ErrorRecord::new(stage, &e)]);
            }
            ExitCode::from(if e.is_non_convergence() { 3 } else { 2 })
        }
    }
}
