//! Monte Carlo play of hitting-time strategies.
//!
//! Path `i` draws from a ChaCha8 stream selected by `(seed, i)` alone, so
//! estimates do not depend on how paths are split across threads. All rules
//! of a batch are played on the same paths.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainGame, RegionStrategy};
use crate::double::extract_saddle_regions;
use crate::error::{Error, Result};
use crate::forms::Grid1D;
use crate::obstacle::{ObstacleData, VISolution};

/// Truncation share above which an estimate carries a warning.
pub const TRUNCATION_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    DriftedDiffusion,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub lambda: f64,
    pub mu: f64,
    pub x0: f64,
    pub dt: f64,
    pub t_max: f64,
    pub alpha: f64,
}

impl ProcessSpec {
    pub fn diffusion(lambda: f64, mu: f64, alpha: f64, x0: f64, dt: f64, t_max: f64) -> Self {
        ProcessSpec { kind: ProcessKind::DriftedDiffusion, lambda, mu, x0, dt, t_max, alpha }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt < self.t_max && self.t_max.is_finite()) {
            return Err(Error::invalid(format!("need 0 < dt < t_max, got dt = {}, t_max = {}", self.dt, self.t_max)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("discount must be nonnegative, got {}", self.alpha)));
        }
        if self.kind == ProcessKind::DriftedDiffusion && !(self.lambda > 0.0 && self.mu.is_finite() && self.x0.is_finite()) {
            return Err(Error::invalid("drifted diffusion needs lambda > 0 and finite mu, x0"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil() as usize
    }

    /// Per-step drift `(mu − lambda²/2)·dt`.
    pub fn drift_step(&self) -> f64 {
        (self.mu - 0.5 * self.lambda * self.lambda) * self.dt
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Euler–Maruyama path yielding `X_k` for `k = 0..=n_steps`.
#[derive(Debug, Clone)]
pub struct PathIter {
    rng: ChaCha8Rng,
    x: f64,
    k: usize,
    n_steps: usize,
    drift: f64,
    vol: f64,
}

impl Iterator for PathIter {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.k > self.n_steps {
            return None;
        }
        let out = self.x;
        if self.k < self.n_steps {
            let z: f64 = self.rng.sample(StandardNormal);
            self.x += self.drift + self.vol * z;
        }
        self.k += 1;
        Some(out)
    }
}

pub fn simulate_path(spec: &ProcessSpec, seed: u64, index: u64) -> PathIter {
    PathIter {
        rng: path_rng(seed, index),
        x: spec.x0,
        k: 0,
        n_steps: spec.n_steps(),
        drift: spec.drift_step(),
        vol: spec.lambda * spec.dt.sqrt(),
    }
}

/// Lazily generated batch of diffusion paths.
pub fn simulate_paths(spec: &ProcessSpec, n_paths: usize, seed: u64) -> Result<impl Iterator<Item = PathIter> + '_> {
    spec.validate()?;
    if spec.kind != ProcessKind::DriftedDiffusion {
        return Err(Error::invalid("chain paths are generated by replay_chain"));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    Ok((0..n_paths as u64).map(move |i| simulate_path(spec, seed, i)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingRule {
    HitRegion { region: Vec<usize> },
    ThresholdAbove { level: f64 },
    ThresholdBelow { level: f64 },
    FixedTime { time: f64 },
    Never {},
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::HitRegion { region } => write!(f, "hit_region({} nodes)", region.len()),
            StoppingRule::ThresholdAbove { level } => write!(f, "threshold_above({level})"),
            StoppingRule::ThresholdBelow { level } => write!(f, "threshold_below({level})"),
            StoppingRule::FixedTime { time } => write!(f, "fixed_time({time})"),
            StoppingRule::Never {} => write!(f, "never"),
        }
    }
}

enum Compiled {
    Region(Vec<bool>),
    Above(f64),
    Below(f64),
    At(usize),
    Never,
}

impl Compiled {
    fn new(rule: &StoppingRule, grid: &Grid1D, dt: f64) -> Result<Self> {
        Ok(match rule {
            StoppingRule::HitRegion { region } => {
                let mut mask = vec![false; grid.n];
                for &i in region {
                    *mask.get_mut(i).ok_or_else(|| Error::invalid(format!("region node {i} outside the grid")))? = true;
                }
                Compiled::Region(mask)
            }
            StoppingRule::ThresholdAbove { level } if level.is_finite() => Compiled::Above(*level),
            StoppingRule::ThresholdBelow { level } if level.is_finite() => Compiled::Below(*level),
            StoppingRule::FixedTime { time } if *time >= 0.0 => Compiled::At((time / dt - 1e-9).ceil().max(0.0) as usize),
            StoppingRule::Never {} => Compiled::Never,
            other => return Err(Error::invalid(format!("invalid stopping rule {other}"))),
        })
    }

    fn fires(&self, k: usize, x: f64, node: Option<usize>) -> bool {
        match self {
            Compiled::Region(mask) => node.is_some_and(|i| mask[i]),
            Compiled::Above(l) => x >= *l,
            Compiled::Below(l) => x <= *l,
            Compiled::At(s) => k >= *s,
            Compiled::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Share of paths reaching the horizon with neither player stopped.
    pub truncation_fraction: f64,
    /// Share of paths leaving the domain with neither player stopped.
    pub exit_fraction: f64,
    pub warning: bool,
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Copy)]
enum Outcome {
    Paid(f64),
    Exited,
    Truncated(f64),
}

fn summarize(outcomes: &[Outcome], seed: u64) -> PayoffEstimate {
    let n = outcomes.len();
    let values: Vec<f64> = outcomes
        .iter()
        .map(|o| match o {
            Outcome::Paid(v) | Outcome::Truncated(v) => *v,
            Outcome::Exited => 0.0,
        })
        .collect();
    // Shifted by the first sample so that constant payoffs give stderr 0 exactly.
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let mean_d = pairwise_sum(&d) / n as f64;
    let mean = shift + mean_d;
    let sq: Vec<f64> = d.iter().map(|v| (v - mean_d) * (v - mean_d)).collect();
    let stderr = if n > 1 { (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
    let truncated = outcomes.iter().filter(|o| matches!(o, Outcome::Truncated(_))).count();
    let exited = outcomes.iter().filter(|o| matches!(o, Outcome::Exited)).count();
    let truncation_fraction = truncated as f64 / n as f64;
    PayoffEstimate {
        mean,
        stderr,
        n_paths: n,
        seed,
        truncation_fraction,
        exit_fraction: exited as f64 / n as f64,
        warning: truncation_fraction > TRUNCATION_WARNING,
    }
}

/// Payoff functions given by nodal values on a grid.
#[derive(Debug, Clone, Copy)]
pub struct GridPayoffs<'a> {
    pub grid: &'a Grid1D,
    pub g: &'a [f64],
    pub h: &'a [f64],
}

/// Estimates `J(τ, σ)` for every `(τ, σ)` index pair into `rules`, using one
/// set of paths for all pairs.
pub fn estimate_pairs(
    spec: &ProcessSpec,
    payoffs: GridPayoffs<'_>,
    rules: &[StoppingRule],
    pairs: &[(usize, usize)],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PayoffEstimate>> {
    spec.validate()?;
    if spec.kind != ProcessKind::DriftedDiffusion {
        return Err(Error::invalid("grid payoffs need a drifted diffusion; replay chains with replay_chain"));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    let grid = payoffs.grid;
    if payoffs.g.len() != grid.n || payoffs.h.len() != grid.n {
        return Err(Error::invalid("payoff vectors must match the grid"));
    }
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= rules.len() || *b >= rules.len()) {
        return Err(Error::invalid(format!("rule pair ({a}, {b}) out of range")));
    }
    let compiled = rules.iter().map(|r| Compiled::new(r, grid, spec.dt)).collect::<Result<Vec<_>>>()?;
    let n_steps = spec.n_steps();
    let horizon_discount = (-spec.alpha * n_steps as f64 * spec.dt).exp();

    let per_path: Vec<Vec<Outcome>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            // First firing (step, position) of every rule.
            let mut hits: Vec<Option<(usize, f64)>> = vec![None; compiled.len()];
            let mut open = compiled.len();
            let mut exited = false;
            let mut last = spec.x0;
            for (k, x) in simulate_path(spec, seed, i).enumerate() {
                last = x;
                if !grid.contains(x) {
                    exited = true;
                    break;
                }
                let node = grid.nearest_node(x);
                for (r, rule) in compiled.iter().enumerate() {
                    if hits[r].is_none() && rule.fires(k, x, node) {
                        hits[r] = Some((k, x));
                        open -= 1;
                    }
                }
                if open == 0 {
                    break;
                }
            }
            pairs
                .iter()
                .map(|&(t, s)| match (hits[t], hits[s]) {
                    (Some((kt, xt)), hs) if hs.is_none_or(|(ks, _)| kt <= ks) => {
                        Outcome::Paid((-spec.alpha * kt as f64 * spec.dt).exp() * grid.interpolate(payoffs.h, xt))
                    }
                    (_, Some((ks, xs))) => {
                        Outcome::Paid((-spec.alpha * ks as f64 * spec.dt).exp() * grid.interpolate(payoffs.g, xs))
                    }
                    _ if exited => Outcome::Exited,
                    _ => Outcome::Truncated(horizon_discount * grid.interpolate(payoffs.g, last)),
                })
                .collect()
        })
        .collect();

    Ok((0..pairs.len())
        .map(|p| {
            let column: Vec<Outcome> = per_path.iter().map(|row| row[p]).collect();
            summarize(&column, seed)
        })
        .collect())
}

pub fn hitting_time_payoff(
    spec: &ProcessSpec,
    payoffs: GridPayoffs<'_>,
    rule_tau: &StoppingRule,
    rule_sigma: &StoppingRule,
    n_paths: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    let rules = [rule_tau.clone(), rule_sigma.clone()];
    Ok(estimate_pairs(spec, payoffs, &rules, &[(0, 1)], n_paths, seed)?.remove(0))
}

/// Walk of a substochastic chain from `x`: yields visited states until the
/// chain is killed.
pub fn chain_walk<'a>(chain: &'a ChainGame, x: usize, seed: u64, index: u64) -> impl Iterator<Item = usize> + 'a {
    let mut rng = path_rng(seed, index);
    let mut state = Some(x);
    std::iter::from_fn(move || {
        let cur = state?;
        let u: f64 = rng.random();
        let row = chain.kernel().row(cur);
        let mut acc = 0.0;
        state = None;
        for (&j, &p) in row.col_indices().iter().zip(row.values()) {
            acc += p;
            if u < acc {
                state = Some(j);
                break;
            }
        }
        Some(cur)
    })
}

/// Monte Carlo estimate of a region-strategy payoff on a chain. Walks longer
/// than `max_steps` are truncated and pay `g`.
pub fn replay_chain(
    chain: &ChainGame,
    tau: &RegionStrategy,
    sigma: &RegionStrategy,
    x: usize,
    n_paths: usize,
    seed: u64,
    max_steps: usize,
) -> Result<PayoffEstimate> {
    if x >= chain.dim() {
        return Err(Error::invalid(format!("state {x} out of range")));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    let outcomes: Vec<Outcome> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut reward = 0.0;
            for (k, s) in chain_walk(chain, x, seed, i).enumerate() {
                if tau.contains(s) {
                    return Outcome::Paid(reward + chain.h[s]);
                }
                if sigma.contains(s) {
                    return Outcome::Paid(reward + chain.g[s]);
                }
                if k == max_steps {
                    return Outcome::Truncated(reward + chain.g[s]);
                }
                reward += chain.r[s];
            }
            Outcome::Paid(reward)
        })
        .collect();
    Ok(summarize(&outcomes, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Buyer deviates: `J(τ̂, ρ)` must not exceed `J(τ̂, σ̂)`.
    Buyer,
    /// Seller deviates: `J(ρ, σ̂)` must not fall below `J(τ̂, σ̂)`.
    Seller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCheck {
    pub v_x0: f64,
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    pub stderr: f64,
    /// Allowed `|J_hat − v_x0|`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub rule: StoppingRule,
    pub side: Side,
    #[serde(rename = "J")]
    pub j: f64,
    pub stderr: f64,
    /// `sqrt(se_hat² + se²)`.
    pub combined_stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleMcReport {
    pub passes: bool,
    pub n_paths: usize,
    pub seed: u64,
    pub grid_tol: f64,
    pub truncation_fraction: f64,
    pub warning: bool,
    pub equilibrium: EquilibriumCheck,
    pub sweep: Vec<SweepEntry>,
}

impl SaddleMcReport {
    /// Flat table `rule,side,J,stderr,bound,pass`; the first row is the
    /// equilibrium pair.
    pub fn to_csv(&self) -> String {
        let e = &self.equilibrium;
        let mut out = String::from("rule,side,J,stderr,reference,pass\n");
        out.push_str(&format!("saddle,equilibrium,{:.12e},{:.12e},{:.12e},{}\n", e.j_hat, e.stderr, e.v_x0, e.pass));
        for s in &self.sweep {
            let side = match s.side {
                Side::Buyer => "buyer",
                Side::Seller => "seller",
            };
            out.push_str(&format!(
                "{},{side},{:.12e},{:.12e},{:.12e},{}\n",
                s.rule, s.j, s.combined_stderr, e.j_hat, s.pass
            ));
        }
        out
    }
}

/// Plays the contact-region pair of `sol` against every rule of `sweep` on
/// both sides. `grid_tol` is the relative allowance for `|J(τ̂, σ̂) − v(x0)|`.
#[allow(clippy::too_many_arguments)]
pub fn verify_saddle_mc(
    sol: &VISolution,
    grid: &Grid1D,
    spec: &ProcessSpec,
    data: &ObstacleData,
    sweep: &[StoppingRule],
    n_paths: usize,
    seed: u64,
    grid_tol: f64,
) -> Result<SaddleMcReport> {
    let (tau, sigma) = extract_saddle_regions(sol, data)?;
    let h = data.h.clone().ok_or_else(|| Error::invalid("saddle verification needs an upper obstacle"))?;
    let mut rules = vec![StoppingRule::HitRegion { region: tau }, StoppingRule::HitRegion { region: sigma }];
    rules.extend_from_slice(sweep);
    let mut pairs = vec![(0, 1)];
    for r in 2..rules.len() {
        pairs.push((0, r));
        pairs.push((r, 1));
    }
    let payoffs = GridPayoffs { grid, g: &data.g, h: &h };
    let est = estimate_pairs(spec, payoffs, &rules, &pairs, n_paths, seed)?;
    let hat = &est[0];
    let v_x0 = grid.interpolate(&sol.v, spec.x0);
    let bound = (grid_tol * v_x0.abs()).max(3.0 * hat.stderr);
    let equilibrium = EquilibriumCheck {
        v_x0,
        j_hat: hat.mean,
        stderr: hat.stderr,
        bound,
        pass: (hat.mean - v_x0).abs() <= bound,
    };
    let sweep_entries: Vec<SweepEntry> = sweep
        .iter()
        .enumerate()
        .flat_map(|(k, rule)| {
            [(Side::Buyer, &est[1 + 2 * k]), (Side::Seller, &est[2 + 2 * k])].map(|(side, e)| {
                let combined = (hat.stderr * hat.stderr + e.stderr * e.stderr).sqrt();
                let pass = match side {
                    Side::Buyer => e.mean <= hat.mean + 3.0 * combined,
                    Side::Seller => e.mean >= hat.mean - 3.0 * combined,
                };
                SweepEntry { rule: rule.clone(), side, j: e.mean, stderr: e.stderr, combined_stderr: combined, pass }
            })
        })
        .collect();
    let truncation_fraction = est.iter().map(|e| e.truncation_fraction).fold(0.0, f64::max);
    Ok(SaddleMcReport {
        passes: equilibrium.pass && sweep_entries.iter().all(|s| s.pass),
        n_paths,
        seed,
        grid_tol,
        truncation_fraction,
        warning: truncation_fraction > TRUNCATION_WARNING,
        equilibrium,
        sweep: sweep_entries,
    })
}
