//! Training loops for the hierarchical method, its ablations, and the flat
//! baselines.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{flat_update, macro_objective, macro_update, micro_objective, micro_update, Adam, HyperParams, UpdateStats};
use crate::credit;
use crate::env::{Difficulty, EnvKind, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams};
use crate::rollout::{self, ExecConfig, Mode, Plan, SegmentRule, TaskInstance, Trajectory};
use crate::seed;

/// Seed schedule. Iteration `t` works from `derive(seed, t)`; each tag below
/// splits off one stream from it (initial parameters use `derive(seed, TAG_INIT)`).
pub const TAG_INIT: u64 = 0x1A17;
pub const TAG_TASK: u64 = 1;
pub const TAG_MACRO: u64 = 2;
pub const TAG_MICRO: u64 = 3;
pub const TAG_PICK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Alternating planner / executor updates.
    Himac,
    FlatGrpo,
    Rloo,
    /// Both levels sampled at the same parameters and updated in one step.
    Simultaneous,
    /// `sub_done` removed; each sub-goal gets exactly `t_limit` steps.
    FixedBudget,
    /// Executor trained under a uniformly chosen group member instead of the best.
    RandomBlueprint,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Himac,
        Method::FlatGrpo,
        Method::Rloo,
        Method::Simultaneous,
        Method::FixedBudget,
        Method::RandomBlueprint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Himac => "himac",
            Method::FlatGrpo => "flat_grpo",
            Method::Rloo => "rloo",
            Method::Simultaneous => "simultaneous",
            Method::FixedBudget => "fixed_budget",
            Method::RandomBlueprint => "random_blueprint",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        !matches!(self, Method::FlatGrpo | Method::Rloo)
    }

    pub fn exec_config(self, t_limit: usize) -> ExecConfig {
        ExecConfig {
            t_limit,
            rule: if self == Method::FixedBudget {
                SegmentRule::FixedBudget
            } else {
                SegmentRule::SubDone
            },
            ..ExecConfig::default()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `variant:<name>` as well as the bare name.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let norm = norm.strip_prefix("variant:").unwrap_or(&norm);
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Where training and held-out tasks come from. The two seed ranges must not overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskDistribution {
    pub env_kind: EnvKind,
    pub width: usize,
    pub height: usize,
    pub num_items: usize,
    /// Half-open range of generator seeds for training tasks.
    pub train_seeds: (u64, u64),
    /// First generator seed of the held-out set.
    pub eval_seed_start: u64,
    pub eval_tasks: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TaskDistribution {
    fn default() -> Self {
        Self {
            env_kind: EnvKind::Sokoban,
            width: 5,
            height: 5,
            num_items: 1,
            train_seeds: (0, 1_000_000),
            eval_seed_start: 1_000_000,
            eval_tasks: 64,
            max_steps: None,
        }
    }
}

impl TaskDistribution {
    pub fn validate(&self) -> Result<()> {
        Difficulty::new(self.width, self.height, self.num_items).validate(self.env_kind)?;
        let (lo, hi) = self.train_seeds;
        if lo >= hi {
            return Err(Error::InvalidConfig("train seed range is empty".into()));
        }
        if self.eval_tasks == 0 {
            return Err(Error::InvalidConfig("eval_tasks must be at least 1".into()));
        }
        let eval_end = self.eval_seed_start.saturating_add(self.eval_tasks as u64);
        if self.eval_seed_start < hi && lo < eval_end {
            return Err(Error::InvalidConfig(format!(
                "held-out seeds [{}, {eval_end}) overlap training seeds [{lo}, {hi})",
                self.eval_seed_start
            )));
        }
        Ok(())
    }

    pub fn spec(&self, gen_seed: u64) -> TaskSpec {
        let mut spec = match self.env_kind {
            EnvKind::Sokoban => TaskSpec::sokoban(gen_seed, self.width, self.height, self.num_items),
            EnvKind::Gridhouse => TaskSpec::gridhouse(gen_seed, self.width, self.height, self.num_items),
        };
        spec.max_steps = self.max_steps;
        spec
    }

    pub fn eval_set(&self) -> Result<Vec<TaskInstance>> {
        (0..self.eval_tasks as u64)
            .into_par_iter()
            .map(|i| TaskInstance::new(self.spec(self.eval_seed_start + i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub hyper: HyperParams,
    pub tasks: TaskDistribution,
    /// Held-out evaluation period in iterations.
    pub eval_every: usize,
    /// Held-out success rate that counts as "reached".
    pub target_success: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Himac,
            hyper: HyperParams::default(),
            tasks: TaskDistribution::default(),
            eval_every: 10,
            target_success: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.tasks.validate()?;
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Side outputs of a run.
#[derive(Default)]
pub struct TrainOptions {
    /// Save parameters every `checkpoint_every` iterations into this directory.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Receives every executor trajectory group as JSON lines.
    pub trajectory_sink: Option<Box<dyn Write + Send>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub task_seed: u64,
    /// Fraction of the executor group that solved the task.
    pub train_success: f64,
    pub train_return: f64,
    /// Index of the blueprint the executor was trained under.
    pub chosen_blueprint: Option<usize>,
    pub blueprint_returns: Vec<f64>,
    pub macro_stats: Option<UpdateStats>,
    pub micro_stats: Option<UpdateStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub success: f64,
    pub mean_return: f64,
    pub mean_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub iterations: Vec<IterationRow>,
    pub evaluations: Vec<EvalRow>,
    /// First evaluated iteration whose held-out success met the target.
    pub iters_to_target: Option<usize>,
    pub final_success: f64,
    pub final_return: f64,
    #[serde(skip)]
    pub params: Option<PolicyParams>,
}

/// Greedy decoding at both levels over a fixed task set.
pub fn evaluate_policy(
    params: &PolicyParams,
    tasks: &[TaskInstance],
    method: Method,
    t_limit: usize,
    iteration: usize,
) -> Result<EvalRow> {
    let cfg = method.exec_config(t_limit);
    let trajs = tasks
        .par_iter()
        .map(|task| {
            let plan = if method.is_hierarchical() {
                Plan::Blueprint(policy::macro_greedy(params, &task.features))
            } else {
                Plan::Flat
            };
            rollout::execute_blueprint(task, params, &plan, &cfg, Mode::Greedy)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = trajs.len().max(1) as f64;
    Ok(EvalRow {
        iteration,
        success: trajs.iter().filter(|t| t.solved()).count() as f64 / n,
        mean_return: trajs.iter().map(|t| t.total_return).sum::<f64>() / n,
        mean_length: trajs.iter().map(|t| t.steps.len() as f64).sum::<f64>() / n,
    })
}

fn group_summary(trajs: &[Trajectory]) -> (f64, f64) {
    let n = trajs.len() as f64;
    (
        trajs.iter().filter(|t| t.solved()).count() as f64 / n,
        trajs.iter().map(|t| t.total_return).sum::<f64>() / n,
    )
}

fn nan_guard(params: &PolicyParams, iteration: usize, phase: &str, stats: &UpdateStats) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("iteration {iteration}, {phase} update: {stats:?}")))
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    exec: ExecConfig,
    params: PolicyParams,
    reference: PolicyParams,
    macro_opt: Adam,
    micro_opt: Adam,
}

impl Trainer<'_> {
    fn task(&self, iteration: usize) -> Result<TaskInstance> {
        let (lo, hi) = self.cfg.tasks.train_seeds;
        let s = seed::derive(seed::derive(self.cfg.hyper.seed, iteration as u64), TAG_TASK);
        TaskInstance::new(self.cfg.tasks.spec(lo + s % (hi - lo)))
    }

    fn iteration(&mut self, t: usize, sink: &mut Option<Box<dyn Write + Send>>) -> Result<IterationRow> {
        let hp = &self.cfg.hyper;
        let it_seed = seed::derive(hp.seed, t as u64);
        let task = self.task(t)?;
        let mut row = IterationRow {
            iteration: t,
            task_seed: task.spec.gen_seed,
            train_success: 0.0,
            train_return: 0.0,
            chosen_blueprint: None,
            blueprint_returns: Vec::new(),
            macro_stats: None,
            micro_stats: None,
        };
        let method = self.cfg.method;
        let trajs = if !method.is_hierarchical() {
            let trajs = rollout::sample_trajectory_group(
                &task,
                &self.params,
                &Plan::Flat,
                hp.group_m,
                seed::derive(it_seed, TAG_MICRO),
                &self.exec,
            )?;
            let returns: Vec<f64> = trajs.iter().map(|t| t.total_return).collect();
            let adv = match method {
                Method::Rloo => credit::rloo_advantage(&returns)?,
                _ => credit::group_advantage(&returns, hp.adv_eps)?.values,
            };
            let stats = flat_update(&mut self.params, &self.reference, &trajs, &adv, hp, &mut self.micro_opt)?;
            nan_guard(&self.params, t, "flat", &stats)?;
            row.micro_stats = Some(stats);
            trajs
        } else {
            // Phase A: planner group, scored by greedy execution.
            let zs = rollout::sample_blueprint_group(
                &self.params,
                &task,
                hp.group_g,
                hp.temperature,
                seed::derive(it_seed, TAG_MACRO),
            )?;
            let returns = rollout::evaluate_blueprints(&task, &self.params, &zs, &self.exec)?;
            let idx = if method == Method::RandomBlueprint {
                seed::rng(seed::derive(it_seed, TAG_PICK)).gen_range(0..zs.len())
            } else {
                credit::select_best_blueprint(&zs, &returns)?.1
            };
            let plan = Plan::Blueprint(zs[idx].clone());
            row.chosen_blueprint = Some(idx);

            if method == Method::Simultaneous {
                let trajs = rollout::sample_trajectory_group(
                    &task,
                    &self.params,
                    &plan,
                    hp.group_m,
                    seed::derive(it_seed, TAG_MICRO),
                    &self.exec,
                )?;
                let macro_adv = credit::group_advantage(&returns, hp.adv_eps)?;
                let macro_obj = macro_objective(&self.params, &self.reference, &task, &zs, &macro_adv.values, hp)?;
                let micro_returns: Vec<f64> = trajs.iter().map(|t| t.total_return).collect();
                let micro_adv = credit::group_advantage(&micro_returns, hp.adv_eps)?;
                let micro_obj =
                    micro_objective(&self.params, &self.reference, &task, &plan, &trajs, &micro_adv.values, hp)?;
                let grad: Vec<f64> = macro_obj.grad.iter().zip(&micro_obj.grad).map(|(a, b)| a + b).collect();
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!("iteration {t}, joint gradient")));
                }
                self.micro_opt.ascend(&mut self.params.theta, &grad, hp.lr)?;
                nan_guard(&self.params, t, "joint", &micro_obj.stats)?;
                row.macro_stats = Some(macro_obj.stats);
                row.micro_stats = Some(micro_obj.stats);
                row.blueprint_returns = returns;
                trajs
            } else {
                if zs.len() >= 2 {
                    let stats = macro_update(
                        &mut self.params,
                        &self.reference,
                        &task,
                        &zs,
                        &returns,
                        hp,
                        &mut self.macro_opt,
                    )?;
                    nan_guard(&self.params, t, "macro", &stats)?;
                    row.macro_stats = Some(stats);
                }
                row.blueprint_returns = returns;

                // Phase B: executor group under the chosen blueprint.
                let trajs = rollout::sample_trajectory_group(
                    &task,
                    &self.params,
                    &plan,
                    hp.group_m,
                    seed::derive(it_seed, TAG_MICRO),
                    &self.exec,
                )?;
                let stats = micro_update(
                    &mut self.params,
                    &self.reference,
                    &task,
                    &plan,
                    &trajs,
                    hp,
                    &mut self.micro_opt,
                )?;
                nan_guard(&self.params, t, "micro", &stats)?;
                row.micro_stats = Some(stats);
                trajs
            }
        };
        (row.train_success, row.train_return) = group_summary(&trajs);
        if let Some(out) = sink.as_mut() {
            rollout::write_jsonl(&trajs, t, out)?;
        }
        Ok(row)
    }
}

/// Run one training job to completion.
pub fn train(cfg: &TrainConfig, mut opts: TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let hp = &cfg.hyper;
    let params = PolicyParams::init(
        cfg.tasks.env_kind,
        hp.hidden,
        hp.k_max,
        seed::derive(hp.seed, TAG_INIT),
    );
    let eval_tasks = cfg.tasks.eval_set()?;
    let mut trainer = Trainer {
        cfg,
        exec: cfg.method.exec_config(hp.t_limit),
        macro_opt: Adam::new(params.num_params()),
        micro_opt: Adam::new(params.num_params()),
        reference: params.clone(),
        params,
    };
    let mut evaluations = vec![evaluate_policy(&trainer.params, &eval_tasks, cfg.method, hp.t_limit, 0)?];
    let mut iterations = Vec::with_capacity(hp.iterations);
    for t in 1..=hp.iterations {
        iterations.push(trainer.iteration(t, &mut opts.trajectory_sink)?);
        if t % cfg.eval_every == 0 || t == hp.iterations {
            evaluations.push(evaluate_policy(&trainer.params, &eval_tasks, cfg.method, hp.t_limit, t)?);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if opts.checkpoint_every > 0 && t % opts.checkpoint_every == 0 {
                policy::save_checkpoint(&trainer.params, hp.seed, &dir.join(format!("iter_{t:05}.ckpt")))?;
            }
        }
    }
    if let Some(out) = opts.trajectory_sink.as_mut() {
        out.flush()?;
    }
    let last = evaluations.last().expect("initial evaluation");
    Ok(TrainReport {
        method: cfg.method,
        seed: hp.seed,
        iters_to_target: evaluations
            .iter()
            .find(|e| e.success >= cfg.target_success)
            .map(|e| e.iteration),
        final_success: last.success,
        final_return: last.mean_return,
        iterations,
        evaluations,
        params: Some(trainer.params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            hyper: HyperParams {
                iterations: 3,
                hidden: 8,
                group_g: 3,
                group_m: 3,
                seed: 5,
                ..HyperParams::default()
            },
            tasks: TaskDistribution {
                eval_tasks: 4,
                ..TaskDistribution::default()
            },
            eval_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Flat-GRPO".parse::<Method>().unwrap(), Method::FlatGrpo);
        assert_eq!("variant:fixed_budget".parse::<Method>().unwrap(), Method::FixedBudget);
        assert_eq!("ppo".parse::<Method>().unwrap_err().kind(), "unknown_variant");
    }

    #[test]
    fn overlapping_seed_ranges_rejected() {
        let mut cfg = tiny(Method::Himac);
        cfg.tasks.eval_seed_start = 10;
        assert_eq!(cfg.validate().unwrap_err().kind(), "invalid_config");
    }

    #[test]
    fn every_method_runs_and_reports() {
        for m in Method::ALL {
            let report = train(&tiny(m), TrainOptions::default()).unwrap();
            assert_eq!(report.iterations.len(), 3);
            let evals: Vec<usize> = report.evaluations.iter().map(|e| e.iteration).collect();
            assert_eq!(evals, vec![0, 2, 3]);
            assert_eq!(report.iterations[0].macro_stats.is_some(), m.is_hierarchical());
        }
    }

    #[test]
    fn zero_iterations_gives_initial_evaluation() {
        let mut cfg = tiny(Method::Himac);
        cfg.hyper.iterations = 0;
        let report = train(&cfg, TrainOptions::default()).unwrap();
        assert!(report.iterations.is_empty());
        assert_eq!(report.evaluations.len(), 1);
    }
}
