//! Policy optimization: clipped group-relative objectives for the planner
//! and the executor, Adam ascent, and the training loops.

mod adam;
mod objective;
pub mod train;

pub use adam::Adam;
pub use objective::{clipped_term, kl_term, surrogate, MemberTokens, Objective, UpdateStats, LOG_RATIO_CLAMP};
pub use train::{
    evaluate_policy, train, EvalRow, IterationRow, Method, TaskDistribution, TrainConfig, TrainOptions, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::credit;
use crate::error::{Error, Result};
use crate::policy::{self, Blueprint, PolicyParams};
use crate::rollout::{Plan, TaskInstance, Trajectory};

/// How per-token KL terms are combined within one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    /// Mean over the sequence's tokens.
    #[default]
    TokenMean,
    SequenceSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub clip_eps: f64,
    pub beta_kl: f64,
    pub lr: f64,
    pub group_g: usize,
    pub group_m: usize,
    pub iterations: usize,
    pub t_limit: usize,
    pub k_max: usize,
    pub temperature: f64,
    pub seed: u64,
    pub hidden: usize,
    pub adv_eps: f64,
    pub kl_reduction: KlReduction,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            beta_kl: 0.01,
            lr: 3e-3,
            group_g: 8,
            group_m: 8,
            iterations: 300,
            t_limit: crate::rollout::DEFAULT_T_LIMIT,
            k_max: policy::DEFAULT_K_MAX,
            temperature: 1.0,
            seed: 0,
            hidden: policy::DEFAULT_HIDDEN,
            adv_eps: credit::DEFAULT_EPS,
            kl_reduction: KlReduction::TokenMean,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad("beta_kl must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.group_g == 0 {
            return bad("group_g must be at least 1");
        }
        if self.group_m < 2 {
            return bad("group_m must be at least 2");
        }
        if self.t_limit == 0 || self.k_max == 0 || self.hidden == 0 {
            return bad("t_limit, k_max and hidden must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.adv_eps > 0.0) {
            return bad("adv_eps must be positive");
        }
        Ok(())
    }
}

/// Planner objective over a group of blueprints sampled for one task.
///
/// `blueprints[i].token_logps` are the behaviour log-probabilities.
pub fn macro_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskInstance,
    blueprints: &[Blueprint],
    advantages: &[f64],
    hp: &HyperParams,
) -> Result<Objective> {
    if blueprints.len() != advantages.len() {
        return Err(Error::LengthMismatch {
            expected: blueprints.len(),
            got: advantages.len(),
        });
    }
    let members = blueprints
        .iter()
        .zip(advantages)
        .map(|(z, &a)| {
            let records = policy::macro_forward(params, &task.features, z)?;
            let ref_logps = policy::macro_logprob(reference, &task.features, z)?;
            Ok(MemberTokens {
                mask: vec![true; records.len()],
                old_logps: z.token_logps.clone(),
                ref_logps,
                records,
                advantage: a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    surrogate(params, &members, hp)
}

/// Executor objective over trajectories that all follow the same plan.
///
/// The plan's own tokens are carried with a zero mask, so no gradient reaches
/// the planner head through this objective.
pub fn micro_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskInstance,
    plan: &Plan,
    trajectories: &[Trajectory],
    advantages: &[f64],
    hp: &HyperParams,
) -> Result<Objective> {
    if trajectories.len() != advantages.len() {
        return Err(Error::LengthMismatch {
            expected: trajectories.len(),
            got: advantages.len(),
        });
    }
    if let Some(other) = trajectories.iter().find(|t| &t.plan != plan) {
        return Err(Error::HeterogeneousConditioning(format!(
            "expected {plan:?}, found {:?}",
            other.plan
        )));
    }
    let plan_records = match plan {
        Plan::Blueprint(z) => policy::macro_forward(params, &task.features, z)?,
        Plan::Flat => Vec::new(),
    };
    let members = trajectories
        .iter()
        .zip(advantages)
        .map(|(traj, &a)| {
            let mut m = MemberTokens {
                records: plan_records.clone(),
                mask: vec![false; plan_records.len()],
                old_logps: plan_records.iter().map(|r| r.logp()).collect(),
                ref_logps: plan_records.iter().map(|r| r.logp()).collect(),
                advantage: a,
            };
            for s in &traj.steps {
                m.records
                    .push(policy::micro_forward(params, &s.input, traj.allow_sub_done, s.action)?);
                m.mask.push(true);
                m.old_logps.push(s.logp);
                m.ref_logps
                    .push(policy::micro_forward(reference, &s.input, traj.allow_sub_done, s.action)?.logp());
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    surrogate(params, &members, hp)
}

/// Flat-policy objective: every recorded action token counts, nothing is
/// conditioned on a plan.
///
/// Computed on its own path (sequence sums built directly from the steps)
/// so that it can be cross-checked against the executor objective.
pub fn flat_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    trajectories: &[Trajectory],
    advantages: &[f64],
    hp: &HyperParams,
) -> Result<Objective> {
    let n = trajectories.len();
    if n == 0 {
        return Err(Error::GroupTooSmall { min: 1, got: 0 });
    }
    if advantages.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: advantages.len() });
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    let (mut ratio_sum, mut kl_sum, mut clipped) = (0.0, 0.0, 0usize);
    for (traj, &adv) in trajectories.iter().zip(advantages) {
        let fwd = traj
            .steps
            .iter()
            .map(|s| policy::micro_forward(params, &s.input, traj.allow_sub_done, s.action))
            .collect::<Result<Vec<_>>>()?;
        let ref_lp = traj
            .steps
            .iter()
            .map(|s| policy::micro_forward(reference, &s.input, traj.allow_sub_done, s.action).map(|r| r.logp()))
            .collect::<Result<Vec<_>>>()?;
        let len = fwd.len();
        let log_ratio: f64 = fwd.iter().zip(&traj.steps).map(|(r, s)| r.logp() - s.logp).sum();
        let ratio = log_ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp();
        let surr = clipped_term(ratio, adv, hp.clip_eps)?;
        let per_token = match hp.kl_reduction {
            KlReduction::TokenMean if len > 0 => 1.0 / len as f64,
            KlReduction::TokenMean => 0.0,
            KlReduction::SequenceSum => 1.0,
        };
        let kl: f64 = fwd.iter().zip(&ref_lp).map(|(r, &q)| kl_term(r.logp(), q)).sum::<f64>() * per_token;
        value += inv_n * (surr - hp.beta_kl * kl);
        ratio_sum += ratio;
        kl_sum += kl;
        // the surrogate is flat in rho once the clipped branch wins
        let unclipped_wins = ratio * adv <= surr && log_ratio.abs() < LOG_RATIO_CLAMP;
        if ratio * adv > surr {
            clipped += 1;
        }
        let g_ratio = if unclipped_wins { adv * ratio } else { 0.0 };
        for (r, &q) in fwd.iter().zip(&ref_lp) {
            let w = inv_n * (g_ratio - hp.beta_kl * per_token * (1.0 - (q - r.logp()).exp()));
            policy::net::accumulate_grad(&params.shape, &params.theta, r, w, &mut grad);
        }
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(Objective {
        value,
        grad,
        stats: UpdateStats {
            objective_value: value,
            mean_ratio: ratio_sum * inv_n,
            clip_fraction: clipped as f64 * inv_n,
            kl_value: kl_sum * inv_n,
            grad_norm,
        },
    })
}

/// Size-1 groups carry no relative signal and are evaluation-only.
fn require_group(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::GroupTooSmall { min: 2, got: n })
    } else {
        Ok(())
    }
}

fn apply(params: &mut PolicyParams, obj: &Objective, opt: &mut Adam, lr: f64) -> Result<UpdateStats> {
    if obj.grad.iter().any(|g| !g.is_finite()) || !obj.value.is_finite() {
        return Err(Error::NonFinite(format!("gradient or objective ({:?})", obj.stats)));
    }
    opt.ascend(&mut params.theta, &obj.grad, lr)?;
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after update ({:?})", obj.stats)));
    }
    Ok(obj.stats)
}

/// One ascent step on the planner objective. Advantages are whitened from
/// `returns` within the group.
pub fn macro_update(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    task: &TaskInstance,
    blueprints: &[Blueprint],
    returns: &[f64],
    hp: &HyperParams,
    opt: &mut Adam,
) -> Result<UpdateStats> {
    require_group(blueprints.len())?;
    let adv = credit::group_advantage(returns, hp.adv_eps)?;
    let obj = macro_objective(params, reference, task, blueprints, &adv.values, hp)?;
    apply(params, &obj, opt, hp.lr)
}

/// One ascent step on the executor objective for trajectories conditioned on `plan`.
pub fn micro_update(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    task: &TaskInstance,
    plan: &Plan,
    trajectories: &[Trajectory],
    hp: &HyperParams,
    opt: &mut Adam,
) -> Result<UpdateStats> {
    require_group(trajectories.len())?;
    let returns: Vec<f64> = trajectories.iter().map(|t| t.total_return).collect();
    let adv = credit::group_advantage(&returns, hp.adv_eps)?;
    let obj = micro_objective(params, reference, task, plan, trajectories, &adv.values, hp)?;
    apply(params, &obj, opt, hp.lr)
}

/// Flat-policy update with the given per-trajectory advantages.
pub fn flat_update(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    trajectories: &[Trajectory],
    advantages: &[f64],
    hp: &HyperParams,
    opt: &mut Adam,
) -> Result<UpdateStats> {
    let obj = flat_objective(params, reference, trajectories, advantages, hp)?;
    apply(params, &obj, opt, hp.lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskSpec;
    use crate::rollout::{self, ExecConfig};

    fn setup() -> (PolicyParams, TaskInstance) {
        let params = PolicyParams::init(crate::env::EnvKind::Sokoban, 16, 4, 3);
        let task = TaskInstance::new(TaskSpec::sokoban(11, 5, 5, 1)).unwrap();
        (params, task)
    }

    #[test]
    fn zero_advantage_at_reference_leaves_params() {
        let (mut params, task) = setup();
        let reference = params.clone();
        let hp = HyperParams::default();
        let zs = rollout::sample_blueprint_group(&params, &task, 4, 1.0, 5).unwrap();
        let before = params.theta.clone();
        let mut opt = Adam::new(params.num_params());
        let stats = macro_update(&mut params, &reference, &task, &zs, &[2.0; 4], &hp, &mut opt).unwrap();
        assert_eq!(params.theta, before);
        assert_eq!(stats.objective_value, 0.0);
        assert_eq!(stats.mean_ratio, 1.0);
        assert_eq!(stats.kl_value, 0.0);
    }

    #[test]
    fn heterogeneous_plans_rejected() {
        let (mut params, task) = setup();
        let reference = params.clone();
        let zs = rollout::sample_blueprint_group(&params, &task, 2, 1.0, 0).unwrap();
        let cfg = ExecConfig::default();
        let mut trajs = Vec::new();
        for z in &zs {
            let plan = Plan::Blueprint(z.clone());
            trajs.extend(rollout::sample_trajectory_group(&task, &params, &plan, 2, 9, &cfg).unwrap());
        }
        if zs[0] == zs[1] {
            return;
        }
        let mut opt = Adam::new(params.num_params());
        let err = micro_update(
            &mut params,
            &reference,
            &task,
            &Plan::Blueprint(zs[0].clone()),
            &trajs,
            &HyperParams::default(),
            &mut opt,
        )
        .unwrap_err();
        assert_eq!(err.kind(), "heterogeneous_conditioning");
    }

    #[test]
    fn singleton_groups_rejected() {
        let (mut params, task) = setup();
        let reference = params.clone();
        let zs = rollout::sample_blueprint_group(&params, &task, 1, 1.0, 5).unwrap();
        let mut opt = Adam::new(params.num_params());
        let err = macro_update(&mut params, &reference, &task, &zs, &[1.0], &HyperParams::default(), &mut opt);
        assert_eq!(err.unwrap_err().kind(), "group_too_small");
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut hp = HyperParams::default();
        assert!(hp.validate().is_ok());
        hp.clip_eps = 1.5;
        assert!(hp.validate().is_err());
        hp = HyperParams { lr: 0.0, ..Default::default() };
        assert!(hp.validate().is_err());
        hp = HyperParams { group_m: 0, ..Default::default() };
        assert!(hp.validate().is_err());
    }
}
