#![allow(dead_code)]

use dynkin_core::forms::{
    assemble_drift_diffusion, assemble_jump_form, make_grid, DiscreteForm, DriftDiffusionCoeffs, JumpKernelSpec,
};
use dynkin_core::obstacle::{ObstacleData, SolverParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub enum Coeffs {
    Drift(DriftDiffusionCoeffs),
    Jump(JumpKernelSpec),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub coeffs: Coeffs,
    pub form: DiscreteForm,
    pub data: ObstacleData,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_drift(r: &mut impl Rng) -> DriftDiffusionCoeffs {
    DriftDiffusionCoeffs {
        a: r.random_range(0.2..2.0),
        b: r.random_range(-2.0..2.0),
        d_coef: r.random_range(-2.0..2.0),
        c: r.random_range(0.0..1.0),
    }
}

pub fn random_kernel(r: &mut impl Rng) -> JumpKernelSpec {
    JumpKernelSpec {
        kappa: r.random_range(0.2..2.0),
        beta_exp: r.random_range(0.3..1.7),
        eta: r.random_range(-0.8..0.8),
        radius: r.random_range(0.1..1.0),
    }
}

pub fn random_form(r: &mut impl Rng, n: usize, jump: bool) -> (Coeffs, DiscreteForm) {
    let grid = make_grid(-1.0, 1.0, n).unwrap();
    let alpha = r.random_range(0.1..2.0);
    if jump {
        let k = random_kernel(r);
        (Coeffs::Jump(k), assemble_jump_form(&grid, &k, alpha).unwrap())
    } else {
        let c = random_drift(r);
        (Coeffs::Drift(c), assemble_drift_diffusion(&grid, &c, alpha).unwrap())
    }
}

/// Smooth random profile plus node noise.
pub fn random_profile(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let amp = r.random_range(0.0..1.5);
    let freq = r.random_range(0.5..6.0);
    let phase = r.random_range(0.0..6.3);
    let noise = r.random_range(0.0..0.5);
    let shift = r.random_range(-0.5..0.5);
    (0..n)
        .map(|i| {
            let x = -1.0 + 2.0 * (i + 1) as f64 / (n + 1) as f64;
            shift + amp * (freq * x + phase).sin() + noise * r.random_range(-1.0..1.0)
        })
        .collect()
}

/// `g ≤ h` with a few pinned nodes.
pub fn random_obstacles(r: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let g = random_profile(r, n);
    let gap_scale = r.random_range(0.0..1.0);
    let h = g
        .iter()
        .map(|g| if r.random_bool(0.05) { *g } else { g + gap_scale * r.random_range(0.0..1.0) })
        .collect();
    (g, h)
}

pub fn random_instance(seed: u64, n: usize, jump: bool) -> Instance {
    let mut r = rng(seed);
    let (coeffs, form) = random_form(&mut r, n, jump);
    let (g, h) = random_obstacles(&mut r, n);
    Instance { coeffs, form, data: ObstacleData::double(g, h) }
}

/// 100 instances: drift-diffusion and jump forms alternating, n cycling
/// through 10, 25, 50.
pub fn corpus() -> Vec<Instance> {
    (0..100u64)
        .map(|k| random_instance(1000 + k, [10, 25, 50][(k % 3) as usize], k % 2 == 1))
        .collect()
}

pub fn tight() -> SolverParams {
    SolverParams {
        tol: 1e-13,
        max_iter: 2_000_000,
        penalty_eps_schedule: vec![1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12],
        ..SolverParams::default()
    }
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
