//! Hierarchical policy: a shared tanh trunk with a macro head that writes
//! blueprints token by token and a micro head that picks atomic actions
//! under the active sub-goal.
//!
//! All weights live in one flat vector ([`PolicyParams::theta`]) with named
//! views ([`Block`]). Gradients are computed analytically from recorded
//! forward passes; see [`backward`].

mod checkpoint;
pub mod features;
pub mod net;
pub mod subgoal;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionToken, EnvKind};
use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use features::{FeatureVector, Layout, TaskFeatures};
pub use net::{Allowed, Block, Head, Shape, TokenForward};
pub use subgoal::{Blueprint, SubGoalToken};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_K_MAX: usize = 6;
const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: EnvKind,
    pub shape: Shape,
    /// Maximum number of sub-goals per blueprint.
    pub k_max: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    /// Uniform `[-0.1, 0.1]` initialization from `seed`.
    pub fn init(kind: EnvKind, hidden: usize, k_max: usize, seed: u64) -> Self {
        let shape = Shape {
            input: Layout::new(kind).input_len(),
            hidden,
            n_macro: subgoal::vocab(kind).len(),
            n_micro: kind.num_actions(),
        };
        let mut rng = seed::rng(seed::derive(seed, 0x1417));
        let theta = (0..shape.num_params())
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self {
            kind,
            shape,
            k_max,
            theta,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.kind)
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn view(&self, block: Block) -> &[f64] {
        &self.theta[self.shape.range(block)]
    }

    pub fn view_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.shape.range(block);
        &mut self.theta[r]
    }

    pub fn forward(&self, head: Head, input: &FeatureVector, allowed: Allowed) -> TokenForward {
        net::forward(&self.shape, &self.theta, head, input.as_slice(), allowed)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Decoding mode for a single token.
pub enum Decode<'a> {
    Greedy,
    Sample(&'a mut ChaCha8Rng),
}

/// Admissible sub-goal tokens at `position` of a blueprint: END is barred at
/// position 0 and forced at position `k_max`.
pub fn macro_allowed(kind: EnvKind, k_max: usize, position: usize) -> Allowed {
    let n = subgoal::vocab(kind).len();
    let end = subgoal::end_index(kind);
    if position >= k_max {
        Allowed::only(end)
    } else if position == 0 {
        Allowed::all(n).without(end)
    } else {
        Allowed::all(n)
    }
}

/// Admissible actions; `sub_done` may be removed from the vocabulary.
pub fn micro_allowed(kind: EnvKind, allow_sub_done: bool) -> Allowed {
    let all = Allowed::all(kind.num_actions());
    if allow_sub_done {
        all
    } else {
        all.without(kind.action_index(ActionToken::SubDone).expect("sub_done in vocab"))
    }
}

/// Inverse-CDF draw from `softmax(logits / temperature)` over `allowed`.
fn sample_index(logits: &[f64], allowed: Allowed, temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let lp = net::log_softmax(&scaled, allowed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in lp.iter().enumerate() {
        if !allowed.contains(i) {
            continue;
        }
        acc += l.exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")))
    }
}

fn decode_blueprint(params: &PolicyParams, task: &TaskFeatures, mut pick: impl FnMut(&TokenForward) -> usize) -> (Blueprint, Vec<TokenForward>) {
    let layout = params.layout();
    let vocab = subgoal::vocab(params.kind);
    let mut tokens = Vec::new();
    let mut records = Vec::new();
    loop {
        let allowed = macro_allowed(params.kind, params.k_max, tokens.len()).and(task.admissible);
        let mut rec = params.forward(Head::Macro, &layout.macro_input(&task.values, &tokens), allowed);
        rec.chosen = pick(&rec);
        let token = vocab[rec.chosen];
        tokens.push(token);
        records.push(rec);
        if token == SubGoalToken::End {
            break;
        }
    }
    let token_logps = records.iter().map(TokenForward::logp).collect();
    (
        Blueprint {
            tokens,
            token_logps,
        },
        records,
    )
}

/// Sample a blueprint autoregressively at `temperature`. Recorded
/// log-probabilities are always under the temperature-1 policy.
pub fn macro_sample(params: &PolicyParams, task: &TaskFeatures, temperature: f64, rng_seed: u64) -> Result<Blueprint> {
    check_temperature(temperature)?;
    let mut rng = seed::rng(rng_seed);
    let (z, _) = decode_blueprint(params, task, |rec| {
        sample_index(&rec.logits, rec.allowed, temperature, &mut rng)
    });
    Ok(z)
}

/// Greedy (argmax) blueprint decoding.
pub fn macro_greedy(params: &PolicyParams, task: &TaskFeatures) -> Blueprint {
    decode_blueprint(params, task, TokenForward::argmax).0
}

/// Recompute forward records for every token of `z` (END included).
pub fn macro_forward(params: &PolicyParams, task: &TaskFeatures, z: &Blueprint) -> Result<Vec<TokenForward>> {
    z.validate(params.kind, params.k_max)?;
    let layout = params.layout();
    let mut records = Vec::with_capacity(z.tokens.len());
    for (pos, &token) in z.tokens.iter().enumerate() {
        let allowed = macro_allowed(params.kind, params.k_max, pos).and(task.admissible);
        let idx = subgoal::token_index(params.kind, token).expect("validated");
        if !allowed.contains(idx) {
            return Err(Error::MalformedBlueprint(format!(
                "{token:?} not admissible at position {pos}"
            )));
        }
        let mut rec = params.forward(Head::Macro, &layout.macro_input(&task.values, &z.tokens[..pos]), allowed);
        rec.chosen = idx;
        records.push(rec);
    }
    Ok(records)
}

/// Per-token log-probabilities of `z`; their sum is `log pi(z | x)`.
pub fn macro_logprob(params: &PolicyParams, task: &TaskFeatures, z: &Blueprint) -> Result<Vec<f64>> {
    Ok(macro_forward(params, task, z)?
        .iter()
        .map(TokenForward::logp)
        .collect())
}

/// Pick one atomic action under `subgoal` (`None` is the null condition).
pub fn micro_step(
    params: &PolicyParams,
    input: &FeatureVector,
    subgoal: Option<SubGoalToken>,
    allow_sub_done: bool,
    mode: Decode<'_>,
) -> Result<(ActionToken, f64, TokenForward)> {
    if subgoal == Some(SubGoalToken::End) {
        return Err(Error::EndAsSubGoal);
    }
    let allowed = micro_allowed(params.kind, allow_sub_done);
    let mut rec = params.forward(Head::Micro, input, allowed);
    rec.chosen = match mode {
        Decode::Greedy => rec.argmax(),
        Decode::Sample(rng) => sample_index(&rec.logits, allowed, 1.0, rng),
    };
    let action = params.kind.actions()[rec.chosen];
    Ok((action, rec.logp(), rec))
}

/// Forward record for a given action (used to recompute log-probabilities).
pub fn micro_forward(params: &PolicyParams, input: &FeatureVector, allow_sub_done: bool, action: ActionToken) -> Result<TokenForward> {
    let allowed = micro_allowed(params.kind, allow_sub_done);
    let idx = params
        .kind
        .action_index(action)
        .filter(|&i| allowed.contains(i))
        .ok_or(Error::InvalidAction {
            action,
            kind: params.kind,
        })?;
    let mut rec = params.forward(Head::Micro, input, allowed);
    rec.chosen = idx;
    Ok(rec)
}

/// Gradient of `sum_i mask_i * weight_i * logp_i` with respect to theta,
/// accumulated in token order. Masked-out terms touch no parameter.
pub fn backward(params: &PolicyParams, terms: &[(&TokenForward, f64)], mask: &[bool]) -> Result<Vec<f64>> {
    if mask.len() != terms.len() {
        return Err(Error::LengthMismatch {
            expected: terms.len(),
            got: mask.len(),
        });
    }
    let mut grad = vec![0.0; params.num_params()];
    for (&(rec, weight), &on) in terms.iter().zip(mask) {
        if on {
            net::accumulate_grad(&params.shape, &params.theta, rec, weight, &mut grad);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate, TaskSpec};

    fn sokoban_params(hidden: usize, k_max: usize, seed: u64) -> PolicyParams {
        PolicyParams::init(EnvKind::Sokoban, hidden, k_max, seed)
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = sokoban_params(8, 6, 1);
        assert_eq!(a, sokoban_params(8, 6, 1));
        assert_ne!(a.theta, sokoban_params(8, 6, 2).theta);
        assert!(a.theta.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn forced_end_has_zero_logp() {
        let p = sokoban_params(4, 1, 3);
        let tf = features::task_features(&TaskSpec::sokoban(1, 5, 5, 1)).unwrap();
        let z = macro_sample(&p, &tf, 1.0, 9).unwrap();
        assert_eq!(z.tokens.len(), 2);
        assert_eq!(z.token_logps[1], 0.0);
    }

    #[test]
    fn macro_sample_is_deterministic_and_consistent() {
        let p = sokoban_params(8, 6, 5);
        let tf = features::task_features(&TaskSpec::sokoban(2, 6, 6, 2)).unwrap();
        for s in 0..20 {
            let z = macro_sample(&p, &tf, 1.0, s).unwrap();
            assert_eq!(z, macro_sample(&p, &tf, 1.0, s).unwrap());
            z.validate(EnvKind::Sokoban, 6).unwrap();
            assert_eq!(macro_logprob(&p, &tf, &z).unwrap(), z.token_logps);
        }
    }

    #[test]
    fn token_after_end_rejected() {
        let p = sokoban_params(4, 6, 5);
        let tf = features::task_features(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        let z = Blueprint::from_tokens(vec![SubGoalToken::Verify, SubGoalToken::End, SubGoalToken::Verify]);
        assert!(matches!(macro_logprob(&p, &tf, &z), Err(Error::MalformedBlueprint(_))));
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let p = sokoban_params(8, 6, 11);
        for task_seed in 0..5 {
            let tf = features::task_features(&TaskSpec::sokoban(task_seed, 5, 5, 1)).unwrap();
            let greedy = macro_greedy(&p, &tf);
            for s in 0..5 {
                let z = macro_sample(&p, &tf, 1e-9, s).unwrap();
                assert_eq!(z.tokens, greedy.tokens);
            }
        }
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let p = sokoban_params(4, 6, 5);
        let tf = features::task_features(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        assert!(macro_sample(&p, &tf, 0.0, 1).is_err());
    }

    #[test]
    fn end_as_active_subgoal_rejected() {
        let p = sokoban_params(4, 6, 5);
        let s = generate(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        let x = p.layout().micro_input(&s, None, 0.0);
        let r = micro_step(&p, &x, Some(SubGoalToken::End), true, Decode::Greedy);
        assert!(matches!(r, Err(Error::EndAsSubGoal)));
    }

    #[test]
    fn zero_logits_greedy_picks_lowest_code() {
        let mut p = sokoban_params(4, 6, 5);
        p.view_mut(Block::MicroWeight).fill(0.0);
        p.view_mut(Block::MicroBias).fill(0.0);
        let s = generate(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        let x = p.layout().micro_input(&s, Some(SubGoalToken::Verify), 0.0);
        let (a, logp, _) = micro_step(&p, &x, Some(SubGoalToken::Verify), true, Decode::Greedy).unwrap();
        assert_eq!(a, ActionToken::Up);
        assert!((logp - (0.2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn sub_done_can_be_removed() {
        let mut p = sokoban_params(4, 6, 5);
        let sd = EnvKind::Sokoban.action_index(ActionToken::SubDone).unwrap();
        p.view_mut(Block::MicroBias)[sd] = 50.0;
        let s = generate(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        let x = p.layout().micro_input(&s, None, 0.0);
        let (a, _, _) = micro_step(&p, &x, None, true, Decode::Greedy).unwrap();
        assert_eq!(a, ActionToken::SubDone);
        let (a, _, rec) = micro_step(&p, &x, None, false, Decode::Greedy).unwrap();
        assert_ne!(a, ActionToken::SubDone);
        let total: f64 = rec.log_probs.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_length_mismatch() {
        let p = sokoban_params(4, 6, 5);
        let s = generate(&TaskSpec::sokoban(2, 5, 5, 1)).unwrap();
        let x = p.layout().micro_input(&s, None, 0.0);
        let rec = micro_forward(&p, &x, true, ActionToken::Up).unwrap();
        assert!(matches!(
            backward(&p, &[(&rec, 1.0)], &[true, false]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
