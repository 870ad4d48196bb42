//! Trunk input vectors.
//!
//! Both heads read the same input layout:
//!
//! ```text
//! [ observation or task features | sub-goal one-hot | grounding | segment progress | prefix counts | macro flag ]
//! ```
//!
//! Micro inputs fill the first four sections from the current state, the
//! active sub-goal and the fraction of the segment budget already used.
//! Macro inputs use the task's initial observation and the bag-of-tokens
//! summary of the blueprint prefix.

use serde::{Deserialize, Serialize};

use super::net::Allowed;
use super::subgoal::{self, SubGoalToken};
use crate::env::{self, EnvKind, EnvState, ObjectLoc, Pos, TaskSpec};
use crate::error::Result;

/// `[ref_dx, ref_dy, aux_dx, aux_dy, satisfied, valid]`
pub const GROUND_LEN: usize = 6;

/// Fixed-length trunk input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub kind: EnvKind,
}

impl Layout {
    pub fn new(kind: EnvKind) -> Self {
        Self { kind }
    }

    fn obs_len(&self) -> usize {
        self.kind.observation_len()
    }

    fn n_sub(&self) -> usize {
        subgoal::vocab(self.kind).len()
    }

    pub fn input_len(&self) -> usize {
        self.obs_len() + 2 * self.n_sub() + GROUND_LEN + 2
    }

    /// Executor input for the current state under `condition` (`None` is the
    /// null condition used by flat policies). `progress` is the share of the
    /// current segment's step budget spent so far.
    pub fn micro_input(&self, state: &EnvState, condition: Option<SubGoalToken>, progress: f64) -> FeatureVector {
        let mut x = Vec::with_capacity(self.input_len());
        state.observe().flatten_into(&mut x);
        let mut onehot = vec![0.0; self.n_sub()];
        let mut ground = [0.0; GROUND_LEN];
        if let Some(token) = condition {
            if let Some(i) = subgoal::token_index(self.kind, token) {
                onehot[i] = 1.0;
            }
            ground = grounding(state, token);
        }
        x.extend_from_slice(&onehot);
        x.extend_from_slice(&ground);
        x.push(progress);
        x.extend(std::iter::repeat_n(0.0, self.n_sub() + 1));
        FeatureVector(x)
    }

    /// Planner input: task features plus the prefix token counts.
    pub fn macro_input(&self, task: &FeatureVector, prefix: &[SubGoalToken]) -> FeatureVector {
        debug_assert_eq!(task.len(), self.obs_len());
        let mut x = Vec::with_capacity(self.input_len());
        x.extend_from_slice(task.as_slice());
        x.extend(std::iter::repeat_n(0.0, self.n_sub() + GROUND_LEN + 1));
        let mut counts = vec![0.0; self.n_sub()];
        for &t in prefix {
            if let Some(i) = subgoal::token_index(self.kind, t) {
                counts[i] += 1.0;
            }
        }
        x.extend_from_slice(&counts);
        x.push(1.0);
        FeatureVector(x)
    }
}

/// What the planner sees of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    /// Flattened initial observation.
    pub values: FeatureVector,
    /// Sub-goal tokens whose referents exist in this task.
    pub admissible: Allowed,
}

impl TaskFeatures {
    pub fn from_state(state: &EnvState) -> Self {
        let mut x = Vec::new();
        state.observe().flatten_into(&mut x);
        let mut admissible = Allowed::all(subgoal::vocab(state.kind).len());
        for (i, &t) in subgoal::vocab(state.kind).iter().enumerate() {
            if !subgoal::referent_exists(state, t) {
                admissible = admissible.without(i);
            }
        }
        Self {
            values: FeatureVector(x),
            admissible,
        }
    }
}

pub fn task_features(spec: &TaskSpec) -> Result<TaskFeatures> {
    Ok(TaskFeatures::from_state(&env::generate(spec)?))
}

fn rel(state: &EnvState, from: Pos, to: Pos) -> (f64, f64) {
    let sx = (state.width - 1) as f64;
    let sy = (state.height - 1) as f64;
    ((to.x - from.x) as f64 / sx, (to.y - from.y) as f64 / sy)
}

fn adjacent(a: Pos, b: Pos) -> bool {
    a.manhattan(b) == 1
}

fn quadrant_of(state: &EnvState, p: Pos) -> u8 {
    let mid_x = (state.width as i32 - 1) / 2;
    let mid_y = (state.height as i32 - 1) / 2;
    (if p.x > mid_x { 1 } else { 0 }) + (if p.y > mid_y { 2 } else { 0 })
}

fn quadrant_center(state: &EnvState, q: u8) -> Pos {
    let w = state.width as i32;
    let h = state.height as i32;
    let mid_x = (w - 1) / 2;
    let mid_y = (h - 1) / 2;
    let x = if q & 1 == 0 { (1 + mid_x) / 2 } else { (mid_x + 1 + w - 2) / 2 };
    let y = if q & 2 == 0 { (1 + mid_y) / 2 } else { (mid_y + 1 + h - 2) / 2 };
    Pos::new(x, y)
}

/// Where a gridhouse object can be reached from.
fn object_anchor(state: &EnvState, obj: usize) -> Option<Pos> {
    match *state.objects.get(obj)? {
        ObjectLoc::Floor(p) => Some(p),
        ObjectLoc::In(r) => Some(state.receptacles[r].pos),
        ObjectLoc::Held => Some(state.agent),
    }
}

/// Relative offsets and completion flag for the referent of a sub-goal.
pub fn grounding(state: &EnvState, token: SubGoalToken) -> [f64; GROUND_LEN] {
    let mut g = [0.0; GROUND_LEN];
    let agent = state.agent;
    let mut set = |r: (f64, f64), a: (f64, f64), satisfied: bool| {
        g = [r.0, r.1, a.0, a.1, f64::from(u8::from(satisfied)), 1.0];
    };
    match token {
        SubGoalToken::Nav { quadrant } => {
            let c = quadrant_center(state, quadrant);
            set(rel(state, agent, c), (0.0, 0.0), quadrant_of(state, agent) == quadrant);
        }
        SubGoalToken::Push { box_id, target_id } => {
            let (b, t) = (box_id as usize, target_id as usize);
            if let (Some(&bp), Some(&tp)) = (state.boxes.get(b), state.targets.get(t)) {
                set(rel(state, agent, bp), rel(state, bp, tp), bp == tp);
            }
        }
        SubGoalToken::Find { obj } => {
            if let Some(p) = object_anchor(state, obj as usize) {
                let found = p == agent || adjacent(p, agent);
                set(rel(state, agent, p), (0.0, 0.0), found);
            }
        }
        SubGoalToken::Take { obj } => {
            if let Some(p) = object_anchor(state, obj as usize) {
                set(rel(state, agent, p), (0.0, 0.0), state.held_object() == Some(obj as usize));
            }
        }
        SubGoalToken::Goto { recep } => {
            if let Some(r) = state.receptacles.get(recep as usize) {
                set(rel(state, agent, r.pos), (0.0, 0.0), adjacent(r.pos, agent));
            }
        }
        SubGoalToken::Put { obj, recep } => {
            let (o, r) = (obj as usize, recep as usize);
            if let (Some(op), Some(rc)) = (object_anchor(state, o), state.receptacles.get(r)) {
                set(rel(state, agent, rc.pos), rel(state, agent, op), state.binding_satisfied((o, r)));
            }
        }
        SubGoalToken::Verify => set((0.0, 0.0), (0.0, 0.0), state.is_solved()),
        SubGoalToken::End => {}
    }
    g
}
