#![allow(dead_code)]

use himac::env::{EnvKind, TaskSpec};
use himac::optimize::HyperParams;
use himac::policy::{self, Blueprint, PolicyParams};
use himac::rollout::{self, ExecConfig, Plan, TaskInstance, Trajectory};
use himac::seed;
use rand::Rng;

/// Sokoban net with 387 parameters and weights large enough that the
/// softmaxes are far from uniform.
pub fn small_params(seed_value: u64) -> PolicyParams {
    let mut p = PolicyParams::init(EnvKind::Sokoban, 3, 3, seed_value);
    let mut rng = seed::rng(seed::derive(seed_value, 99));
    for w in p.theta.iter_mut() {
        *w = rng.gen_range(-0.8..0.8);
    }
    p
}

/// Copy of `p` with every weight moved by up to `scale`.
pub fn jitter(p: &PolicyParams, scale: f64, seed_value: u64) -> PolicyParams {
    let mut q = p.clone();
    let mut rng = seed::rng(seed_value);
    for w in q.theta.iter_mut() {
        *w += rng.gen_range(-scale..scale);
    }
    q
}

pub fn task(seed_value: u64) -> TaskInstance {
    let boxes = 1 + (seed_value % 2) as usize;
    let side = 5 + (seed_value % 3) as usize;
    TaskInstance::new(TaskSpec::sokoban(seed_value, side, side, boxes)).unwrap()
}

pub fn hyper(kl_sum: bool) -> HyperParams {
    HyperParams {
        k_max: 3,
        hidden: 3,
        beta_kl: 0.05,
        kl_reduction: if kl_sum {
            himac::optimize::KlReduction::SequenceSum
        } else {
            himac::optimize::KlReduction::TokenMean
        },
        ..HyperParams::default()
    }
}

pub fn blueprints(params: &PolicyParams, task: &TaskInstance, g: usize, seed_value: u64) -> Vec<Blueprint> {
    rollout::sample_blueprint_group(params, task, g, 1.0, seed_value).unwrap()
}

pub fn trajectories(
    params: &PolicyParams,
    task: &TaskInstance,
    plan: &Plan,
    m: usize,
    seed_value: u64,
) -> Vec<Trajectory> {
    rollout::sample_trajectory_group(task, params, plan, m, seed_value, &ExecConfig::default()).unwrap()
}

pub fn random_advantages(n: usize, seed_value: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_value);
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Sequence ratios of blueprints under `params` against their recorded log-probs.
pub fn macro_ratios(params: &PolicyParams, task: &TaskInstance, zs: &[Blueprint]) -> Vec<f64> {
    zs.iter()
        .map(|z| {
            let now: f64 = policy::macro_logprob(params, &task.features, z).unwrap().iter().sum();
            (now - z.logp()).exp()
        })
        .collect()
}

pub fn micro_ratios(params: &PolicyParams, trajs: &[Trajectory]) -> Vec<f64> {
    trajs
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .map(|s| {
                    policy::micro_forward(params, &s.input, t.allow_sub_done, s.action)
                        .unwrap()
                        .logp()
                        - s.logp
                })
                .sum::<f64>()
                .exp()
        })
        .collect()
}

/// True when some ratio sits so close to a clip edge that a finite
/// difference could straddle the kink.
pub fn near_kink(ratios: &[f64], clip_eps: f64) -> bool {
    ratios
        .iter()
        .any(|r| (r - (1.0 - clip_eps)).abs() < 1e-3 || (r - (1.0 + clip_eps)).abs() < 1e-3)
}

/// Central differences of `f` at `p`.
pub fn finite_differences(p: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.theta.len())
        .map(|i| {
            let x = q.theta[i];
            q.theta[i] = x + h;
            let up = f(&q);
            q.theta[i] = x - h;
            let down = f(&q);
            q.theta[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
