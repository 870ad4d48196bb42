//! Sokoban dynamics and reverse-play generation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{oracle, reward, ActionToken, EnvKind, EnvState, Pos, TaskSpec, DIRS, MAX_GEN_ATTEMPTS};
use crate::error::{Error, Result};
use crate::seed;

pub(super) fn generate(spec: &TaskSpec) -> Result<EnvState> {
    let limit = spec.step_limit();
    let d = spec.difficulty;
    let tag = (d.width as u64) << 16 | (d.height as u64) << 8 | d.num_items as u64;
    for attempt in 0..MAX_GEN_ATTEMPTS {
        let mut rng = seed::rng(seed::derive(spec.gen_seed, tag << 20 | attempt as u64));
        let Some(state) = reverse_play(spec, limit, &mut rng) else {
            continue;
        };
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

/// Start from a solved layout and pull boxes away from their targets.
fn reverse_play(spec: &TaskSpec, limit: usize, rng: &mut impl Rng) -> Option<EnvState> {
    let d = spec.difficulty;
    let mut state = EnvState::empty(EnvKind::Sokoban, d.width, d.height, limit);
    let interior = (d.width - 2) * (d.height - 2);
    if interior >= 16 {
        let n_walls = rng.gen_range(0..=interior / 8);
        let mut cells = state.floor_cells();
        cells.shuffle(rng);
        for p in cells.into_iter().take(n_walls) {
            state.walls[p.y as usize * d.width + p.x as usize] = true;
        }
        if !connected(&state) {
            return None;
        }
    }
    let mut cells = state.floor_cells();
    if cells.len() < d.num_items + 2 {
        return None;
    }
    cells.shuffle(rng);
    state.targets = cells[..d.num_items].to_vec();
    state.boxes = state.targets.clone();
    state.agent = cells[d.num_items];

    let pulls = rng.gen_range(4..=20);
    for _ in 0..pulls {
        let dir = DIRS[rng.gen_range(0..4)];
        let next = state.agent.offset(dir);
        if state.is_wall(next) || state.box_at(next).is_some() {
            continue;
        }
        let behind = state.agent.offset((-dir.0, -dir.1));
        if let Some(b) = state.box_at(behind) {
            if rng.gen_bool(0.75) {
                state.boxes[b] = state.agent;
            }
        }
        state.agent = next;
    }
    if state.is_solved() {
        return None;
    }
    Some(state)
}

fn connected(state: &EnvState) -> bool {
    let floor = state.floor_cells();
    let Some(&start) = floor.first() else {
        return false;
    };
    let mut seen = vec![start];
    let mut frontier = vec![start];
    while let Some(p) = frontier.pop() {
        for n in p.neighbors() {
            if !state.is_wall(n) && !seen.contains(&n) {
                seen.push(n);
                frontier.push(n);
            }
        }
    }
    seen.len() == floor.len()
}

/// Move or push; returns `(reward, solved)` excluding the solve bonus.
pub(super) fn transition(state: &mut EnvState, action: ActionToken) -> (f64, bool) {
    let mut r = reward::SOKOBAN_STEP;
    let dir = action
        .direction()
        .expect("sokoban actions other than sub_done are moves");
    let next = state.agent.offset(dir);
    if state.is_wall(next) {
        return (r, state.is_solved());
    }
    match state.box_at(next) {
        Some(b) => {
            let beyond = next.offset(dir);
            if !state.is_wall(beyond) && state.box_at(beyond).is_none() {
                let was_on = state.is_target(next);
                let now_on = state.is_target(beyond);
                state.boxes[b] = beyond;
                state.agent = next;
                if now_on && !was_on {
                    r += reward::SOKOBAN_BOX_ON;
                } else if was_on && !now_on {
                    r += reward::SOKOBAN_BOX_OFF;
                }
            }
        }
        None => state.agent = next,
    }
    (r, state.is_solved())
}

pub(super) fn encode_cell(state: &EnvState, p: Pos, cell: &mut [f64]) {
    if state.box_at(p).is_some() {
        cell[1] = 1.0;
    }
    if state.is_target(p) {
        cell[2] = 1.0;
    }
}
