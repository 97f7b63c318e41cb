//! Browser bindings. Every entry point takes a scenario JSON document (the
//! CLI schema) and returns a JSON string.

use dynkin_core::chain::{build_chain_from_form, value_iteration};
use dynkin_core::double::{extract_saddle_regions, solve_double_pgs};
use dynkin_core::forms::check_markov_structure;
use dynkin_core::scenario::{build_scenario, parse_scenario};
use dynkin_core::sim::simulate_path;
use dynkin_core::{sup_norm_diff, Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_DEMO_NODES: usize = 800;
const MAX_DEMO_PATHS: usize = 200;
/// Points kept per drawn path.
const PATH_POINTS: usize = 400;

fn load(config: &str) -> Result<dynkin_core::scenario::ScenarioConfig> {
    let config = parse_scenario(config)?;
    if config.grid.n > MAX_DEMO_NODES {
        return Err(Error::SizeGuard(format!("the demo caps the grid at {MAX_DEMO_NODES} nodes")));
    }
    Ok(config)
}

pub fn solve_json(config: &str) -> Result<Value> {
    let config = load(config)?;
    let s = build_scenario(&config)?;
    let sol = solve_double_pgs(&s.form, &s.data, &config.solver)?;
    let (tau, sigma) = extract_saddle_regions(&sol, &s.data)?;
    let h = s.data.h.clone().expect("scenarios carry both obstacles");
    let chain = build_chain_from_form(&s.form, s.data.g.clone(), h.clone(), s.data.f.clone())?;
    let oracle = value_iteration(&chain, 1e-12);
    Ok(json!({
        "x": s.grid.nodes(),
        "g": s.data.g,
        "h": h,
        "v": sol.v,
        "tau": tau,
        "sigma": sigma,
        "iterations": sol.iterations,
        "oracle_diff": sup_norm_diff(&sol.v, &oracle.v),
        "alpha": s.form.alpha(),
    }))
}

pub fn constants_json(config: &str) -> Result<Value> {
    let config = load(config)?;
    let s = build_scenario(&config)?;
    let form = s.form.with_sector_constant()?;
    let markov = check_markov_structure(&form);
    Ok(json!({
        "n": form.dim(),
        "alpha": form.alpha(),
        "alpha0_est": form.alpha0_est(),
        "sector_k": form.sector_k(),
        "markov_passes": markov.passes,
        "markov_violations": markov.violations.len(),
    }))
}

pub fn paths_json(config: &str, n_paths: usize, seed: u64) -> Result<Value> {
    let config = load(config)?;
    let s = build_scenario(&config)?;
    let process = s.process.ok_or_else(|| Error::Validation("jump scenarios have no path simulator".into()))?;
    let n_paths = n_paths.min(MAX_DEMO_PATHS);
    let stride = (process.n_steps() / PATH_POINTS).max(1);
    let paths: Vec<Vec<f64>> = (0..n_paths as u64)
        .map(|i| {
            simulate_path(&process, seed, i)
                .enumerate()
                .take_while(|(_, x)| s.grid.contains(*x))
                .filter(|(k, _)| k % stride == 0)
                .map(|(_, x)| x)
                .collect()
        })
        .collect();
    Ok(json!({ "dt": process.dt * stride as f64, "paths": paths }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Value function, obstacles and stopping regions of a scenario.
#[wasm_bindgen]
pub fn solve(config: &str) -> std::result::Result<String, JsValue> {
    to_js(solve_json(config))
}

/// Structural constants of the assembled form.
#[wasm_bindgen]
pub fn constants(config: &str) -> std::result::Result<String, JsValue> {
    to_js(constants_json(config))
}

/// Thinned sample paths of the scenario's diffusion, cut at domain exit.
#[wasm_bindgen]
pub fn sample_paths(config: &str, n_paths: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(paths_json(config, n_paths as usize, seed as u64))
}
