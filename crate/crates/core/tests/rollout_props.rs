mod common;

use himac::env::ActionToken;
use himac::policy::{self, Blueprint, SubGoalToken};
use himac::rollout::{
    evaluate_blueprints, execute_blueprint, sample_blueprint_group, sample_trajectory_group, ExecConfig, Mode, Plan,
    SegmentRule, Status, Trajectory,
};
use proptest::prelude::*;

fn check_structure(traj: &Trajectory, t_limit: usize) -> Result<(), TestCaseError> {
    let steps = &traj.steps;
    prop_assert!(!steps.is_empty());
    prop_assert_eq!(steps[0].subgoal_index, 1);
    for w in steps.windows(2) {
        let bump = w[1].subgoal_index - w[0].subgoal_index;
        prop_assert!(bump <= 1);
        prop_assert_eq!(bump == 1, w[0].action == ActionToken::SubDone);
    }
    for len in traj.segment_lengths() {
        prop_assert!(len <= t_limit);
    }
    let rewards: f64 = steps.iter().map(|s| s.reward).sum();
    prop_assert!((traj.total_return - (rewards + traj.penalty)).abs() < 1e-12);
    match traj.status {
        Status::BudgetHalt => prop_assert_eq!(traj.penalty, -1.0),
        Status::Solved | Status::StepLimit => prop_assert_eq!(traj.penalty, 0.0),
        Status::BlueprintExhausted => prop_assert!(traj.penalty <= 0.0),
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_rollouts_are_well_formed(p_seed in 0u64..1000, t_seed in 0u64..1000, r_seed in any::<u64>(), t_limit in 1usize..6) {
        let params = common::small_params(p_seed);
        let task = common::task(t_seed);
        let cfg = ExecConfig { t_limit, ..ExecConfig::default() };
        for z in common::blueprints(&params, &task, 3, r_seed) {
            let plan = Plan::Blueprint(z);
            for traj in sample_trajectory_group(&task, &params, &plan, 4, r_seed, &cfg).unwrap() {
                check_structure(&traj, t_limit)?;
                prop_assert_eq!(&traj.plan, &plan);
            }
        }
    }

    #[test]
    fn sub_done_never_moves_the_world(p_seed in 0u64..1000, t_seed in 0u64..1000, r_seed in any::<u64>()) {
        let params = common::small_params(p_seed);
        let task = common::task(t_seed);
        let z = common::blueprints(&params, &task, 1, r_seed).remove(0);
        let traj = execute_blueprint(&task, &params, &Plan::Blueprint(z), &ExecConfig::default(), Mode::Sample(r_seed)).unwrap();
        let mut with = task.initial.clone();
        let mut without = task.initial.clone();
        for s in &traj.steps {
            let before = with.clone();
            with.apply(s.action).unwrap();
            if s.action == ActionToken::SubDone {
                prop_assert_eq!(&with, &before);
            } else {
                without.apply(s.action).unwrap();
            }
        }
        prop_assert_eq!(with, without);
    }

    #[test]
    fn recorded_actions_replay_to_the_same_rewards(p_seed in 0u64..1000, t_seed in 0u64..1000, r_seed in any::<u64>()) {
        let params = common::small_params(p_seed);
        let task = common::task(t_seed);
        let z = common::blueprints(&params, &task, 1, r_seed).remove(0);
        let traj = execute_blueprint(&task, &params, &Plan::Blueprint(z), &ExecConfig::default(), Mode::Sample(r_seed)).unwrap();
        let mut s = task.initial.clone();
        for step in &traj.steps {
            let (r, _) = s.apply(step.action).unwrap();
            prop_assert_eq!(r.to_bits(), step.reward.to_bits());
        }
        prop_assert_eq!(s.is_solved(), traj.status == Status::Solved);
    }
}

#[test]
fn parallel_group_equals_sequential_execution() {
    let params = common::small_params(1);
    for t in 0..10 {
        let task = common::task(t);
        let z = common::blueprints(&params, &task, 1, t).remove(0);
        for plan in [Plan::Blueprint(z), Plan::Flat] {
            let cfg = ExecConfig::default();
            let group = sample_trajectory_group(&task, &params, &plan, 8, 500 + t, &cfg).unwrap();
            let seq: Vec<Trajectory> = (1..=8)
                .map(|i| execute_blueprint(&task, &params, &plan, &cfg, Mode::Sample(500 + t + i)).unwrap())
                .collect();
            assert_eq!(group, seq);
        }
    }
}

#[test]
fn recorded_logps_match_recomputation() {
    let params = common::small_params(2);
    for t in 0..10 {
        let task = common::task(t);
        let zs = sample_blueprint_group(&params, &task, 4, 1.0, t).unwrap();
        for z in &zs {
            let again = policy::macro_logprob(&params, &task.features, z).unwrap();
            assert_eq!(again, z.token_logps);
        }
        let trajs = common::trajectories(&params, &task, &Plan::Blueprint(zs[0].clone()), 4, t);
        for traj in &trajs {
            for s in &traj.steps {
                let rec = policy::micro_forward(&params, &s.input, traj.allow_sub_done, s.action).unwrap();
                assert!((rec.logp() - s.logp).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn blueprint_groups_follow_the_seed_schedule() {
    let params = common::small_params(3);
    let task = common::task(4);
    let one = sample_blueprint_group(&params, &task, 1, 1.0, 77).unwrap();
    assert_eq!(one.len(), 1);
    let eight = sample_blueprint_group(&params, &task, 8, 1.0, 77).unwrap();
    assert_eq!(eight.len(), 8);
    assert_eq!(eight, sample_blueprint_group(&params, &task, 8, 1.0, 77).unwrap());
    assert_eq!(one[0], eight[0]);
    for (i, z) in eight.iter().enumerate() {
        let direct = policy::macro_sample(&params, &task.features, 1.0, 78 + i as u64).unwrap();
        assert_eq!(&direct, z);
    }
}

#[test]
fn greedy_scores_match_direct_execution_and_leave_params_alone() {
    let params = common::small_params(4);
    let before = params.clone();
    let cfg = ExecConfig::default();
    for t in 0..10 {
        let task = common::task(t);
        let mut zs = common::blueprints(&params, &task, 5, t);
        zs.push(zs[0].clone());
        let returns = evaluate_blueprints(&task, &params, &zs, &cfg).unwrap();
        for (z, r) in zs.iter().zip(&returns) {
            let direct = execute_blueprint(&task, &params, &Plan::Blueprint(z.clone()), &cfg, Mode::Greedy).unwrap();
            assert_eq!(direct.total_return.to_bits(), r.to_bits());
            let twice = execute_blueprint(&task, &params, &Plan::Blueprint(z.clone()), &cfg, Mode::Greedy).unwrap();
            assert_eq!(direct, twice);
        }
        assert_eq!(returns[0].to_bits(), returns[5].to_bits());
    }
    assert_eq!(params, before);
}

#[test]
fn fixed_budget_segments_have_exactly_t_limit_steps() {
    let params = common::small_params(5);
    for t_limit in 1..=4 {
        let cfg = ExecConfig {
            t_limit,
            rule: SegmentRule::FixedBudget,
            ..ExecConfig::default()
        };
        for t in 0..10 {
            let task = common::task(t);
            let z = common::blueprints(&params, &task, 1, t).remove(0);
            let trajs = sample_trajectory_group(&task, &params, &Plan::Blueprint(z), 4, t, &cfg).unwrap();
            for traj in trajs {
                assert!(traj.steps.iter().all(|s| s.action != ActionToken::SubDone));
                let segs = traj.segment_lengths();
                let (last, full) = segs.split_last().unwrap();
                assert!(full.iter().all(|&l| l == t_limit), "{segs:?}");
                assert!(*last <= t_limit);
                if traj.status == Status::BlueprintExhausted {
                    assert_eq!(*last, t_limit);
                }
            }
        }
    }
}

#[test]
fn budget_halt_with_a_verify_blueprint() {
    let mut params = common::small_params(6);
    let sd = params.kind.action_index(ActionToken::SubDone).unwrap();
    let n = params.kind.num_actions();
    let bias = params.view_mut(policy::Block::MicroBias);
    assert_eq!(bias.len(), n);
    bias[sd] = -1e3;
    let z = Blueprint::from_tokens(vec![SubGoalToken::Verify, SubGoalToken::End]);
    let cfg = ExecConfig {
        t_limit: 3,
        ..ExecConfig::default()
    };
    for t in 0..10 {
        let task = common::task(t);
        let traj = execute_blueprint(&task, &params, &Plan::Blueprint(z.clone()), &cfg, Mode::Greedy).unwrap();
        if traj.status == Status::Solved {
            continue;
        }
        assert_eq!(traj.status, Status::BudgetHalt);
        assert_eq!(traj.steps.len(), 3);
        let rewards: f64 = traj.steps.iter().map(|s| s.reward).sum();
        assert!((traj.total_return - (rewards - 1.0)).abs() < 1e-12);
    }
}
