//! Gridhouse: a pick-and-place household gridworld.
//!
//! Receptacles and loose objects block movement. Interactions target the
//! four neighbouring cells; when several candidates qualify the lowest id
//! wins.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    oracle, reward, ActionToken, EnvKind, EnvState, Goal, ObjectLoc, Pos, Receptacle, TaskSpec,
    MAX_GEN_ATTEMPTS, NUM_RECEPTACLES,
};
use crate::error::{Error, Result};
use crate::seed;

pub(super) fn generate(spec: &TaskSpec) -> Result<EnvState> {
    let limit = spec.step_limit();
    let Goal::Bindings { pairs } = &spec.goal else {
        unreachable!("validated by TaskSpec::validate");
    };
    let d = spec.difficulty;
    let tag = 1 << 40 | (d.width as u64) << 16 | (d.height as u64) << 8 | d.num_items as u64;
    for attempt in 0..MAX_GEN_ATTEMPTS {
        let mut rng = seed::rng(seed::derive(spec.gen_seed, tag << 10 ^ attempt as u64));
        let state = layout(spec, pairs, limit, &mut rng);
        if state.is_solved() {
            continue;
        }
        if let Some(plan) = oracle::oracle_solve(&state, limit) {
            if !plan.is_empty() {
                return Ok(state);
            }
        }
    }
    Err(Error::GenerationFailed {
        seed: spec.gen_seed,
        attempts: MAX_GEN_ATTEMPTS,
    })
}

fn layout(spec: &TaskSpec, pairs: &[(usize, usize)], limit: usize, rng: &mut impl Rng) -> EnvState {
    let d = spec.difficulty;
    let mut state = EnvState::empty(EnvKind::Gridhouse, d.width, d.height, limit);
    state.bindings = pairs.to_vec();
    let mut cells = state.floor_cells();
    cells.shuffle(rng);
    let mut cells = cells.into_iter();
    state.receptacles = (0..NUM_RECEPTACLES)
        .map(|_| Receptacle {
            pos: cells.next().expect("interior has at least 9 cells"),
            open: rng.gen_bool(0.5),
        })
        .collect();
    state.objects = pairs
        .iter()
        .map(|&(_, goal_recep)| {
            if rng.gen_bool(0.5) {
                // inside the other receptacle
                ObjectLoc::In((goal_recep + 1) % NUM_RECEPTACLES)
            } else {
                ObjectLoc::Floor(cells.next().expect("interior has at least 9 cells"))
            }
        })
        .collect();
    state.agent = cells.next().expect("interior has at least 9 cells");
    state
}

fn blocked(state: &EnvState, p: Pos) -> bool {
    state.is_wall(p) || state.receptacle_at(p).is_some() || state.floor_object_at(p).is_some()
}

fn adjacent_receptacle(state: &EnvState, want_open: bool) -> Option<usize> {
    let nbrs = state.agent.neighbors();
    state
        .receptacles
        .iter()
        .position(|r| r.open == want_open && nbrs.contains(&r.pos))
}

pub(super) fn transition(state: &mut EnvState, action: ActionToken) -> (f64, bool) {
    let before = state.bindings_satisfied() as f64;
    match action {
        ActionToken::Up | ActionToken::Down | ActionToken::Left | ActionToken::Right => {
            let next = state.agent.offset(action.direction().expect("move"));
            if !blocked(state, next) {
                state.agent = next;
            }
        }
        ActionToken::Open => {
            if let Some(r) = adjacent_receptacle(state, false) {
                state.receptacles[r].open = true;
            }
        }
        ActionToken::Take => {
            if state.held_object().is_none() {
                let nbrs = state.agent.neighbors();
                let on_floor = state
                    .objects
                    .iter()
                    .position(|o| matches!(o, ObjectLoc::Floor(p) if nbrs.contains(p)));
                let in_open = || {
                    state.objects.iter().position(|o| {
                        matches!(o, ObjectLoc::In(r)
                            if state.receptacles[*r].open && nbrs.contains(&state.receptacles[*r].pos))
                    })
                };
                if let Some(obj) = on_floor.or_else(in_open) {
                    state.objects[obj] = ObjectLoc::Held;
                }
            }
        }
        ActionToken::Put => {
            if let (Some(obj), Some(r)) = (state.held_object(), adjacent_receptacle(state, true)) {
                state.objects[obj] = ObjectLoc::In(r);
            }
        }
        ActionToken::Look | ActionToken::SubDone => {}
    }
    let after = state.bindings_satisfied() as f64;
    let r = reward::GRIDHOUSE_STEP + reward::GRIDHOUSE_BINDING * (after - before);
    (r, state.is_solved())
}

pub(super) fn encode_cell(state: &EnvState, p: Pos, cell: &mut [f64]) {
    for (obj, loc) in state.objects.iter().enumerate().take(2) {
        let visible = match *loc {
            ObjectLoc::Floor(q) => q == p,
            ObjectLoc::In(r) => state.receptacles[r].open && state.receptacles[r].pos == p,
            ObjectLoc::Held => false,
        };
        if visible {
            cell[1 + obj] = 1.0;
        }
    }
    if let Some(r) = state.receptacle_at(p) {
        cell[3 + r.min(1)] = 1.0;
        if state.receptacles[r].open {
            cell[5] = 1.0;
        }
    }
}
