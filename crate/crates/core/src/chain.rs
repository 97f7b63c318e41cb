//! Exact discrete-time Dynkin game on a finite substochastic chain.
//!
//! The chain is the Jacobi splitting `P = I − D⁻¹B` of a discrete form, so the
//! fixed point of `v = clamp(Pv + D⁻¹f, g, h)` is exactly the two-obstacle
//! solution of `B`. Payoff convention: the τ-player (seller) pays `h` when
//! stopping, the σ-player (buyer) receives `g`, ties pay `h`, killing pays 0.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{check_markov_structure, DiscreteForm};
use crate::linalg::{sup_norm, CsrMatrix};

/// Largest chain accepted by [`minimax_enumerate`].
pub const ENUMERATION_LIMIT: usize = 12;
/// Largest continuation set solved densely in [`strategy_payoffs`].
const DENSE_LIMIT: usize = 64;

#[derive(Debug, Clone)]
pub struct ChainGame {
    kernel: CsrMatrix,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    delta: f64,
}

impl ChainGame {
    pub fn new(kernel: CsrMatrix, r: Vec<f64>, g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let n = kernel.nrows();
        if kernel.ncols() != n || r.len() != n || g.len() != n || h.len() != n {
            return Err(Error::invalid("chain kernel and payoff vectors must share one dimension"));
        }
        if let Some((i, j, p)) = kernel.triplet_iter().find(|(_, _, p)| !(*p >= 0.0)) {
            return Err(Error::invalid(format!("negative transition probability P[{i}][{j}] = {p}")));
        }
        if let Some(i) = (0..n).find(|&i| !(g[i] <= h[i])) {
            return Err(Error::invalid(format!("g exceeds h at state {i}")));
        }
        let delta = kernel_killing(&kernel);
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("chain must kill at every state (margin {delta})")));
        }
        Ok(ChainGame { kernel, r, g, h, delta })
    }

    pub fn from_dense(p: &[Vec<f64>], r: Vec<f64>, g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let n = p.len();
        let t: Vec<_> = p
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .collect();
        Self::new(CsrMatrix::from_triplets(n, n, &t), r, g, h)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn kernel(&self) -> &CsrMatrix {
        &self.kernel
    }

    /// Uniform killing margin `min_i (1 − Σ_j P_ij)`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Same dynamics with payoffs scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| c * x).collect();
        ChainGame { kernel: self.kernel.clone(), r: s(&self.r), g: s(&self.g), h: s(&self.h), delta: self.delta }
    }

    pub fn to_document(&self) -> ChainDocument {
        ChainDocument {
            p_triplets: self.kernel.triplet_iter().collect(),
            r: self.r.clone(),
            g: self.g.clone(),
            h: self.h.clone(),
            delta: self.delta,
        }
    }

    pub fn from_document(doc: &ChainDocument) -> Result<Self> {
        let n = doc.g.len();
        if let Some((i, j, _)) = doc.p_triplets.iter().find(|(i, j, _)| *i >= n || *j >= n) {
            return Err(Error::invalid(format!("transition ({i}, {j}) out of range")));
        }
        Self::new(CsrMatrix::from_triplets(n, n, &doc.p_triplets), doc.r.clone(), doc.g.clone(), doc.h.clone())
    }
}

fn kernel_killing(kernel: &CsrMatrix) -> f64 {
    (0..kernel.nrows())
        .map(|i| 1.0 - kernel.row(i).values().iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDocument {
    #[serde(rename = "P_triplets")]
    pub p_triplets: Vec<(usize, usize, f64)>,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub delta: f64,
}

/// Jacobi splitting of `B`: `P = I − D⁻¹B` and the scaling `D = diag(B)`.
#[derive(Debug, Clone)]
pub struct ChainDynamics {
    pub kernel: CsrMatrix,
    pub diag: Vec<f64>,
    pub delta: f64,
}

pub fn chain_dynamics(form: &DiscreteForm) -> Result<ChainDynamics> {
    let report = check_markov_structure(form);
    if !report.passes {
        return Err(Error::invalid(format!(
            "form fails the Markov structural check ({} violations); no substochastic splitting",
            report.violations.len()
        )));
    }
    let diag = form.system_diag().to_vec();
    let t: Vec<_> = form
        .system()
        .triplet_iter()
        .filter(|(i, j, _)| i != j)
        .map(|(i, j, b)| (i, j, -b / diag[i]))
        .collect();
    let kernel = CsrMatrix::from_triplets(form.dim(), form.dim(), &t);
    let delta = kernel_killing(&kernel);
    if !(delta > 0.0) {
        return Err(Error::invalid("B has a zero row sum; the splitting does not kill"));
    }
    Ok(ChainDynamics { kernel, diag, delta })
}

/// Chain game of a form with obstacles `g ≤ h` and source `f` (`r = D⁻¹f`).
pub fn build_chain_from_form(form: &DiscreteForm, g: Vec<f64>, h: Vec<f64>, f: Vec<f64>) -> Result<ChainGame> {
    let dynamics = chain_dynamics(form)?;
    if f.len() != form.dim() {
        return Err(Error::invalid("source length differs from the form dimension"));
    }
    let r = f.iter().zip(&dynamics.diag).map(|(f, d)| f / d).collect();
    ChainGame::new(dynamics.kernel, r, g, h)
}

#[derive(Debug, Clone)]
pub struct ValueIterationRun {
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm increment of every step.
    pub increments: Vec<f64>,
}

/// Iterates `v ← clamp(Pv + r, g, h)` from `clamp(0, g, h)`. Stops once the
/// contraction bound `increment·(1−δ)/δ` falls below `tol`, or the increment
/// reaches roundoff level.
pub fn value_iteration(chain: &ChainGame, tol: f64) -> ValueIterationRun {
    let n = chain.dim();
    let q = 1.0 - chain.delta;
    let mut v: Vec<f64> = (0..n).map(|i| 0f64.max(chain.g[i]).min(chain.h[i])).collect();
    let mut next = vec![0.0; n];
    let mut increments = Vec::new();
    loop {
        for i in 0..n {
            let row = chain.kernel.row(i);
            let pv: f64 = row.col_indices().iter().zip(row.values()).map(|(&j, &p)| p * v[j]).sum();
            next[i] = (pv + chain.r[i]).max(chain.g[i]).min(chain.h[i]);
        }
        let inc = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        increments.push(inc);
        let floor = 8.0 * f64::EPSILON * (1.0 + sup_norm(&v));
        if inc * q / chain.delta < tol || inc <= floor {
            break;
        }
    }
    ValueIterationRun { iterations: increments.len(), v, increments }
}

/// First-hitting-time strategy of a set of states (time 0 included).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct RegionStrategy {
    pub stop_set: BTreeSet<usize>,
}

impl RegionStrategy {
    pub fn new(states: impl IntoIterator<Item = usize>) -> Self {
        RegionStrategy { stop_set: states.into_iter().collect() }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(n: usize) -> Self {
        Self::new(0..n)
    }

    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self::new((0..n).filter(|i| mask >> i & 1 == 1))
    }

    pub fn mask(&self) -> u64 {
        self.stop_set.iter().fold(0, |m, i| m | 1 << i)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.stop_set.contains(&i)
    }
}

impl fmt::Display for RegionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.stop_set.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", items.join(";"))
    }
}

/// Exact payoff of a pure region-strategy pair from every starting state.
pub fn strategy_payoffs(chain: &ChainGame, tau: &RegionStrategy, sigma: &RegionStrategy) -> Vec<f64> {
    let n = chain.dim();
    let mut u = vec![0.0; n];
    let mut cont = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        if tau.contains(i) {
            u[i] = chain.h[i];
        } else if sigma.contains(i) {
            u[i] = chain.g[i];
        } else {
            slot[i] = cont.len();
            cont.push(i);
        }
    }
    if cont.is_empty() {
        return u;
    }
    let m = cont.len();
    // (I − P_CC) u_C = r_C + P_CS u_S
    let mut rhs = DVector::zeros(m);
    let mut lhs = DMatrix::identity(m, m);
    for (a, &i) in cont.iter().enumerate() {
        rhs[a] = chain.r[i];
        let row = chain.kernel.row(i);
        for (&j, &p) in row.col_indices().iter().zip(row.values()) {
            if slot[j] == usize::MAX {
                rhs[a] += p * u[j];
            } else {
                lhs[(a, slot[j])] -= p;
            }
        }
    }
    let sol = if m <= DENSE_LIMIT {
        lhs.lu().solve(&rhs).expect("I − P_CC is nonsingular for a killing chain")
    } else {
        continuation_gauss_seidel(&lhs, &rhs)
    };
    for (a, &i) in cont.iter().enumerate() {
        u[i] = sol[a];
    }
    u
}

fn continuation_gauss_seidel(lhs: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let m = rhs.len();
    let mut x = DVector::<f64>::zeros(m);
    loop {
        let mut inc: f64 = 0.0;
        for a in 0..m {
            let mut s = rhs[a];
            for b in 0..m {
                if b != a {
                    s -= lhs[(a, b)] * x[b];
                }
            }
            let new = s / lhs[(a, a)];
            inc = inc.max((new - x[a]).abs());
            x[a] = new;
        }
        if inc <= 1e-15 * (1.0 + x.amax()) {
            return x;
        }
    }
}

pub fn strategy_payoff(chain: &ChainGame, tau: &RegionStrategy, sigma: &RegionStrategy, x: usize) -> f64 {
    strategy_payoffs(chain, tau, sigma)[x]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    /// `min over τ of max over σ`.
    pub value: f64,
    /// `max over σ of min over τ`.
    pub max_min: f64,
    pub value_iteration: f64,
    pub argmin_tau: RegionStrategy,
    pub argmax_sigma: RegionStrategy,
}

/// Full payoff table `J[τ-mask][σ-mask]` at state `x`.
pub fn payoff_table(chain: &ChainGame, x: usize) -> Result<Vec<Vec<f64>>> {
    let n = chain.dim();
    if n > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard(format!("enumeration needs n ≤ {ENUMERATION_LIMIT}, got {n}")));
    }
    if x >= n {
        return Err(Error::invalid(format!("state {x} out of range")));
    }
    let count = 1u64 << n;
    Ok((0..count)
        .into_par_iter()
        .map(|tm| {
            let tau = RegionStrategy::from_mask(tm, n);
            (0..count)
                .map(|sm| strategy_payoff(chain, &tau, &RegionStrategy::from_mask(sm, n), x))
                .collect()
        })
        .collect())
}

/// Brute-force min-max over all pairs of region strategies. Ties resolve to
/// the smallest mask.
pub fn minimax_enumerate(chain: &ChainGame, x: usize) -> Result<MinimaxResult> {
    let n = chain.dim();
    let table = payoff_table(chain, x)?;
    let count = table.len();
    let mut value = f64::INFINITY;
    let mut best_tau = 0;
    for (tm, row) in table.iter().enumerate() {
        let worst = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if worst < value {
            value = worst;
            best_tau = tm;
        }
    }
    let mut max_min = f64::NEG_INFINITY;
    let mut best_sigma = 0;
    for sm in 0..count {
        let best = table.iter().map(|row| row[sm]).fold(f64::INFINITY, f64::min);
        if best > max_min {
            max_min = best;
            best_sigma = sm;
        }
    }
    let vi = value_iteration(chain, 1e-13).v[x];
    if (value - max_min).abs() > 1e-10 {
        return Err(Error::Numeric(format!("min-max {value} differs from max-min {max_min}")));
    }
    if (value - vi).abs() > 1e-9 {
        return Err(Error::Numeric(format!("min-max {value} differs from value iteration {vi}")));
    }
    Ok(MinimaxResult {
        value,
        max_min,
        value_iteration: vi,
        argmin_tau: RegionStrategy::from_mask(best_tau as u64, n),
        argmax_sigma: RegionStrategy::from_mask(best_sigma as u64, n),
    })
}

/// Writes the payoff table as CSV rows `S_tau,S_sigma,payoff` (n ≤ 8).
pub fn enumeration_csv(chain: &ChainGame, x: usize) -> Result<String> {
    let n = chain.dim();
    if n > 8 {
        return Err(Error::SizeGuard(format!("enumeration CSV needs n ≤ 8, got {n}")));
    }
    let table = payoff_table(chain, x)?;
    let mut out = String::from("S_tau,S_sigma,payoff\n");
    for (tm, row) in table.iter().enumerate() {
        for (sm, j) in row.iter().enumerate() {
            let t = RegionStrategy::from_mask(tm as u64, n);
            let s = RegionStrategy::from_mask(sm as u64, n);
            out.push_str(&format!("{t},{s},{j:.17e}\n"));
        }
    }
    Ok(out)
}

/// Contact regions of a value vector: `v = h` for τ̂, `v = g` for σ̂.
pub fn contact_regions(chain: &ChainGame, v: &[f64], tol: f64) -> (RegionStrategy, RegionStrategy) {
    let n = chain.dim();
    let tau = RegionStrategy::new((0..n).filter(|&i| v[i] >= chain.h[i] - tol * (1.0 + chain.h[i].abs())));
    let sigma = RegionStrategy::new((0..n).filter(|&i| v[i] <= chain.g[i] + tol * (1.0 + chain.g[i].abs())));
    (tau, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub passes: bool,
    /// Largest `J(τ̂, ρ) − J(τ̂, σ̂)` over all ρ and states.
    pub worst_buyer_gain: f64,
    /// Largest `J(τ̂, σ̂) − J(ρ, σ̂)` over all ρ and states.
    pub worst_seller_gain: f64,
    /// `sup |J(τ̂, σ̂) − v|`.
    pub equilibrium_gap: f64,
}

/// Checks `J(τ̂, ρ) ≤ J(τ̂, σ̂) ≤ J(ρ, σ̂)` against every region strategy ρ,
/// at every state simultaneously.
pub fn check_saddle(chain: &ChainGame, v: &[f64], slack: f64) -> Result<SaddleReport> {
    let n = chain.dim();
    if n > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard(format!("saddle enumeration needs n ≤ {ENUMERATION_LIMIT}, got {n}")));
    }
    let (tau, sigma) = contact_regions(chain, v, 1e-12);
    let base = strategy_payoffs(chain, &tau, &sigma);
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
    let (buyer, seller) = (0..1u64 << n)
        .into_par_iter()
        .map(|m| {
            let rho = RegionStrategy::from_mask(m, n);
            let buyer = gap(&strategy_payoffs(chain, &tau, &rho), &base);
            let seller = gap(&base, &strategy_payoffs(chain, &rho, &sigma));
            (buyer, seller)
        })
        .reduce(|| (f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let equilibrium_gap = crate::linalg::sup_norm_diff(&base, v);
    Ok(SaddleReport {
        passes: buyer <= slack && seller <= slack && equilibrium_gap <= slack,
        worst_buyer_gain: buyer,
        worst_seller_gain: seller,
        equilibrium_gap,
    })
}
