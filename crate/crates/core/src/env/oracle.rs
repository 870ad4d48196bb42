//! Breadth-first solvability oracle over the full (agent, movables) state.

use std::collections::{HashMap, VecDeque};

use super::{ActionToken, EnvState};

/// Deepest search the oracle will run.
pub const MAX_DEPTH: usize = 40;

/// Shortest atomic-action plan that solves `state` within `depth_limit`
/// moves, or `None`. Limits above [`MAX_DEPTH`] are clamped.
pub fn oracle_solve(state: &EnvState, depth_limit: usize) -> Option<Vec<ActionToken>> {
    let depth_limit = depth_limit.min(MAX_DEPTH);
    let root = normalize(state.clone());
    if root.is_solved() {
        return Some(Vec::new());
    }
    let actions: Vec<ActionToken> = state
        .kind
        .actions()
        .iter()
        .copied()
        .filter(|a| !matches!(a, ActionToken::SubDone | ActionToken::Look))
        .collect();

    // parent index and the action that led here
    let mut nodes: Vec<(usize, ActionToken)> = vec![(usize::MAX, ActionToken::SubDone)];
    let mut seen: HashMap<EnvState, usize> = HashMap::new();
    seen.insert(root.clone(), 0);
    let mut queue = VecDeque::from([(root, 0usize, 0usize)]);
    while let Some((s, idx, depth)) = queue.pop_front() {
        if depth == depth_limit {
            continue;
        }
        for &a in &actions {
            let mut child = s.clone();
            if child.apply(a).is_err() {
                continue;
            }
            let child = normalize(child);
            if seen.contains_key(&child) {
                continue;
            }
            let child_idx = nodes.len();
            nodes.push((idx, a));
            if child.is_solved() {
                return Some(backtrack(&nodes, child_idx));
            }
            seen.insert(child.clone(), child_idx);
            queue.push_back((child, child_idx, depth + 1));
        }
    }
    None
}

fn normalize(mut s: EnvState) -> EnvState {
    s.step_count = 0;
    s.max_steps = usize::MAX;
    s.done = false;
    s
}

fn backtrack(nodes: &[(usize, ActionToken)], mut idx: usize) -> Vec<ActionToken> {
    let mut plan = Vec::new();
    while idx != 0 {
        let (parent, a) = nodes[idx];
        plan.push(a);
        idx = parent;
    }
    plan.reverse();
    plan
}
