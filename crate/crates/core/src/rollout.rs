//! Blueprint-conditioned execution and group sampling.
//!
//! The executor runs the micro head under the active sub-goal `g_phi(t)`.
//! `sub_done` advances phi; a segment that reaches `t_limit` steps without
//! `sub_done` halts the episode with a penalty. Running past the last
//! sub-goal while the task is unsolved ends the episode as
//! `BlueprintExhausted`, charged the step cost of the unused episode budget
//! unless that charge is switched off.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, ActionToken, EnvState, TaskSpec};
use crate::error::Result;
use crate::policy::{self, Blueprint, Decode, FeatureVector, PolicyParams, SubGoalToken, TaskFeatures};
use crate::seed;

pub const DEFAULT_T_LIMIT: usize = 5;
pub const HALT_PENALTY: f64 = -1.0;

/// A task together with its generated initial state and planner features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    pub initial: EnvState,
    pub features: TaskFeatures,
}

impl TaskInstance {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        let initial = env::generate(&spec)?;
        Ok(Self {
            features: TaskFeatures::from_state(&initial),
            spec,
            initial,
        })
    }
}

/// What the executor is conditioned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    Blueprint(Blueprint),
    /// Null sub-goal for the whole episode; `sub_done` unavailable.
    Flat,
}

impl Plan {
    pub fn condition(&self, phi: usize) -> Option<SubGoalToken> {
        match self {
            Plan::Blueprint(z) => z.sub_goals().get(phi - 1).copied(),
            Plan::Flat => None,
        }
    }
}

/// How sub-goal segments end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRule {
    /// The executor emits `sub_done`; `t_limit` is a halting budget.
    SubDone,
    /// `sub_done` is removed and segments advance after exactly `t_limit` steps.
    FixedBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub t_limit: usize,
    pub rule: SegmentRule,
    pub halt_penalty: f64,
    /// Charge the step cost of the unused episode budget when a blueprint
    /// runs out before the task is solved. Without it, emitting `sub_done`
    /// K times in a row ends the episode at zero cost.
    pub exhaustion_charge: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            t_limit: DEFAULT_T_LIMIT,
            rule: SegmentRule::SubDone,
            halt_penalty: HALT_PENALTY,
            exhaustion_charge: true,
        }
    }
}

impl ExecConfig {
    pub fn allow_sub_done(&self, plan: &Plan) -> bool {
        matches!(plan, Plan::Blueprint(_)) && self.rule == SegmentRule::SubDone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Greedy,
    Sample(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    StepLimit,
    BudgetHalt,
    BlueprintExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Full executor input at this step.
    pub input: FeatureVector,
    pub action: ActionToken,
    /// Behaviour log-probability.
    pub logp: f64,
    pub reward: f64,
    /// 1-based active sub-goal index phi(t).
    pub subgoal_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub plan: Plan,
    pub allow_sub_done: bool,
    pub steps: Vec<Step>,
    pub status: Status,
    /// Added to the step rewards at termination: the halt penalty on budget
    /// halt, the charge for the unused step budget on blueprint exhaustion,
    /// otherwise zero.
    pub penalty: f64,
    pub total_return: f64,
}

impl Trajectory {
    pub fn solved(&self) -> bool {
        self.status == Status::Solved
    }

    /// Lengths of consecutive runs sharing a sub-goal index.
    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let mut last = None;
        for s in &self.steps {
            if last == Some(s.subgoal_index) {
                *out.last_mut().expect("non-empty") += 1;
            } else {
                out.push(1);
                last = Some(s.subgoal_index);
            }
        }
        out
    }
}

/// Run the executor under `plan` from the task's initial state.
pub fn execute_blueprint(
    task: &TaskInstance,
    params: &PolicyParams,
    plan: &Plan,
    cfg: &ExecConfig,
    mode: Mode,
) -> Result<Trajectory> {
    if let Plan::Blueprint(z) = plan {
        z.validate(params.kind, usize::MAX)?;
    }
    if cfg.t_limit == 0 {
        return Err(crate::Error::InvalidConfig("t_limit must be at least 1".into()));
    }
    let layout = params.layout();
    let allow_sub_done = cfg.allow_sub_done(plan);
    let num_goals = match plan {
        Plan::Blueprint(z) => z.num_sub_goals(),
        Plan::Flat => 1,
    };
    let mut rng = match mode {
        Mode::Sample(s) => Some(seed::rng(s)),
        Mode::Greedy => None,
    };
    let mut state = task.initial.clone();
    let mut steps = Vec::new();
    let mut phi = 1;
    let mut seg_steps = 0;
    let mut total = 0.0;
    let mut penalty = 0.0;
    let status = loop {
        let cond = plan.condition(phi);
        let progress = match plan {
            Plan::Blueprint(_) => seg_steps as f64 / cfg.t_limit as f64,
            Plan::Flat => 0.0,
        };
        let input = layout.micro_input(&state, cond, progress);
        let decode = match rng.as_mut() {
            Some(r) => Decode::Sample(r),
            None => Decode::Greedy,
        };
        let (action, logp, _) = policy::micro_step(params, &input, cond, allow_sub_done, decode)?;
        let (reward, done) = state.apply(action)?;
        total += reward;
        seg_steps += 1;
        steps.push(Step {
            input,
            action,
            logp,
            reward,
            subgoal_index: phi,
        });
        if done {
            break if state.is_solved() {
                Status::Solved
            } else {
                Status::StepLimit
            };
        }
        if matches!(plan, Plan::Flat) {
            continue;
        }
        let advance = match cfg.rule {
            SegmentRule::SubDone => action == ActionToken::SubDone,
            SegmentRule::FixedBudget => seg_steps == cfg.t_limit,
        };
        if advance {
            phi += 1;
            seg_steps = 0;
            if phi > num_goals {
                if cfg.exhaustion_charge {
                    penalty = state.kind.step_reward() * (state.max_steps - state.step_count) as f64;
                    total += penalty;
                }
                break Status::BlueprintExhausted;
            }
        } else if seg_steps >= cfg.t_limit {
            penalty = cfg.halt_penalty;
            total += penalty;
            break Status::BudgetHalt;
        }
    };
    Ok(Trajectory {
        plan: plan.clone(),
        allow_sub_done,
        steps,
        status,
        penalty,
        total_return: total,
    })
}

/// `G` macro samples with sub-seeds `seed+1 ..= seed+G`.
pub fn sample_blueprint_group(
    params: &PolicyParams,
    task: &TaskInstance,
    group: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<Vec<Blueprint>> {
    (1..=group as u64)
        .map(|i| policy::macro_sample(params, &task.features, temperature, rng_seed.wrapping_add(i)))
        .collect()
}

/// Greedy, gradient-free execution of each blueprint; returns `R(z_i)`.
pub fn evaluate_blueprints(
    task: &TaskInstance,
    params: &PolicyParams,
    blueprints: &[Blueprint],
    cfg: &ExecConfig,
) -> Result<Vec<f64>> {
    blueprints
        .par_iter()
        .map(|z| {
            execute_blueprint(task, params, &Plan::Blueprint(z.clone()), cfg, Mode::Greedy)
                .map(|t| t.total_return)
        })
        .collect()
}

/// `M` stochastic executions under a fixed plan, sub-seeds `seed+1 ..= seed+M`.
pub fn sample_trajectory_group(
    task: &TaskInstance,
    params: &PolicyParams,
    plan: &Plan,
    members: usize,
    rng_seed: u64,
    cfg: &ExecConfig,
) -> Result<Vec<Trajectory>> {
    (1..=members as u64)
        .into_par_iter()
        .map(|i| execute_blueprint(task, params, plan, cfg, Mode::Sample(rng_seed.wrapping_add(i))))
        .collect()
}

#[derive(Serialize)]
struct StepLine<'a> {
    iteration: usize,
    member: usize,
    t: usize,
    action: ActionToken,
    logp: f64,
    reward: f64,
    subgoal_index: usize,
    subgoal: Option<SubGoalToken>,
    status: &'a Status,
}

/// One JSON object per step, tagged with the training iteration.
pub fn write_jsonl(trajectories: &[Trajectory], iteration: usize, mut out: impl Write) -> Result<()> {
    for (member, traj) in trajectories.iter().enumerate() {
        for (t, s) in traj.steps.iter().enumerate() {
            let line = StepLine {
                iteration,
                member,
                t,
                action: s.action,
                logp: s.logp,
                reward: s.reward,
                subgoal_index: s.subgoal_index,
                subgoal: traj.plan.condition(s.subgoal_index),
                status: &traj.status,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
