use himac::env::{generate, oracle_solve, reward, ActionToken, EnvKind, EnvState, TaskSpec};
use himac::seed;
use proptest::prelude::*;
use rand::Rng;

fn random_actions(kind: EnvKind, seed_value: u64, n: usize) -> Vec<ActionToken> {
    let actions = kind.actions();
    let mut rng = seed::rng(seed_value);
    (0..n).map(|_| actions[rng.gen_range(0..actions.len())]).collect()
}

/// Replays until the episode ends; returns per-step rewards and the final state.
fn replay(start: &EnvState, actions: &[ActionToken]) -> (Vec<f64>, EnvState) {
    let mut s = start.clone();
    let mut rewards = Vec::new();
    for &a in actions {
        if s.done {
            break;
        }
        let (r, _) = s.apply(a).unwrap();
        rewards.push(r);
    }
    (rewards, s)
}

#[test]
fn small_sokoban_solutions_fit_the_episode() {
    for gen_seed in 0..100 {
        let s = generate(&TaskSpec::sokoban(gen_seed, 5, 5, 1)).unwrap();
        let plan = oracle_solve(&s, 40).unwrap_or_else(|| panic!("seed {gen_seed} unsolvable"));
        assert!(plan.len() <= 15, "seed {gen_seed}: {} steps", plan.len());
        assert!(!plan.is_empty());
    }
}

#[test]
fn oracle_plans_solve_when_replayed() {
    let specs = (0..30)
        .map(|i| TaskSpec::sokoban(i, 5 + (i as usize % 4), 5 + (i as usize / 4 % 4), 1 + (i as usize % 2)))
        .chain((0..30).map(|i| TaskSpec::gridhouse(i, 5 + (i as usize % 4), 6, 1 + (i as usize % 2))));
    for spec in specs {
        let s = generate(&spec).unwrap();
        let plan = oracle_solve(&s, s.max_steps).unwrap();
        assert!(plan.len() <= s.max_steps);
        let (rewards, end) = replay(&s, &plan);
        assert_eq!(rewards.len(), plan.len());
        assert!(end.is_solved() && end.done, "{spec:?}");
    }
}

#[test]
fn observation_shape_is_constant_across_sizes() {
    let expected = EnvKind::Sokoban.observation_len();
    for w in 5..=8 {
        for h in 5..=8 {
            for gen_seed in 0..5 {
                let s = generate(&TaskSpec::sokoban(gen_seed, w, h, 1 + gen_seed as usize % 2)).unwrap();
                assert_eq!(s.observe().len(), expected);
                let (_, end) = replay(&s, &random_actions(EnvKind::Sokoban, gen_seed, 10));
                assert_eq!(end.observe().len(), expected);
            }
        }
    }
}

#[test]
fn solving_push_pays_step_toggle_and_bonus() {
    let s = generate(&TaskSpec::sokoban(7, 5, 5, 1)).unwrap();
    let plan = oracle_solve(&s, 40).unwrap();
    let (rewards, end) = replay(&s, &plan);
    assert!(end.is_solved());
    let last = *rewards.last().unwrap();
    let expected = reward::SOKOBAN_STEP + reward::SOKOBAN_BOX_ON + reward::SOKOBAN_SOLVED;
    assert!((last - 10.9).abs() < 1e-12 && (last - expected).abs() < 1e-12, "{last}");
}

#[test]
fn episodes_end_exactly_at_the_step_limit() {
    for gen_seed in 0..50 {
        let mut s = generate(&TaskSpec::sokoban(gen_seed, 6, 6, 2)).unwrap();
        for a in random_actions(EnvKind::Sokoban, gen_seed + 1000, 40) {
            let (_, done) = s.apply(a).unwrap();
            if done {
                break;
            }
            assert!(s.step_count < 15);
        }
        assert!(s.done);
        assert!(s.is_solved() || s.step_count == 15);
        assert!(s.apply(ActionToken::Up).is_err());
    }
}

fn toggles(rewards: &[f64], actions: &[ActionToken], solved: bool) -> f64 {
    let moves = actions[..rewards.len()].iter().filter(|&&a| a != ActionToken::SubDone).count();
    let total: f64 = rewards.iter().sum();
    let bonus = if solved { reward::SOKOBAN_SOLVED } else { 0.0 };
    total - moves as f64 * reward::SOKOBAN_STEP - bonus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn box_toggles_match_target_counts(gen_seed in 0u64..500, act_seed in any::<u64>(), boxes in 1usize..=2, w in 5usize..=8) {
        let s = generate(&TaskSpec::sokoban(gen_seed, w, w, boxes)).unwrap();
        let actions = random_actions(EnvKind::Sokoban, act_seed, 30);
        let (rewards, end) = replay(&s, &actions);
        let toggled = toggles(&rewards, &actions, end.is_solved());
        let delta = end.boxes_on_target() as f64 - s.boxes_on_target() as f64;
        prop_assert!((toggled - delta).abs() < 1e-9, "{} vs {}", toggled, delta);
    }

    #[test]
    fn replay_is_bit_identical(gen_seed in 0u64..500, act_seed in any::<u64>(), gridhouse in any::<bool>()) {
        let (kind, spec) = if gridhouse {
            (EnvKind::Gridhouse, TaskSpec::gridhouse(gen_seed, 6, 6, 2))
        } else {
            (EnvKind::Sokoban, TaskSpec::sokoban(gen_seed, 6, 6, 2))
        };
        let s = generate(&spec).unwrap();
        prop_assert_eq!(&s, &generate(&spec).unwrap());
        let actions = random_actions(kind, act_seed, 40);
        let (r1, e1) = replay(&s, &actions);
        let (r2, e2) = replay(&s, &actions);
        prop_assert_eq!(e1, e2);
        let bits = |r: &[f64]| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&r1), bits(&r2));
    }

    #[test]
    fn movables_stay_on_free_floor(gen_seed in 0u64..500, act_seed in any::<u64>()) {
        let s = generate(&TaskSpec::sokoban(gen_seed, 7, 7, 2)).unwrap();
        let mut cur = s.clone();
        for a in random_actions(EnvKind::Sokoban, act_seed, 40) {
            if cur.done {
                break;
            }
            cur.apply(a).unwrap();
            prop_assert!(!cur.is_wall(cur.agent));
            prop_assert!(cur.box_at(cur.agent).is_none());
            for (i, b) in cur.boxes.iter().enumerate() {
                prop_assert!(!cur.is_wall(*b));
                prop_assert!(cur.boxes[i + 1..].iter().all(|o| o != b));
            }
            prop_assert!(cur.step_count <= cur.max_steps);
        }
    }
}
