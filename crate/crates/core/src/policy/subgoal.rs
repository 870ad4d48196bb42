//! Discrete sub-goal vocabulary and blueprints.

use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, EnvState};
use crate::error::{Error, Result};

/// One planning step. `End` terminates a blueprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum SubGoalToken {
    /// Go to a quadrant: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    Nav { quadrant: u8 },
    Push { box_id: u8, target_id: u8 },
    Find { obj: u8 },
    Take { obj: u8 },
    Goto { recep: u8 },
    Put { obj: u8, recep: u8 },
    Verify,
    End,
}

use SubGoalToken::*;

const SOKOBAN_VOCAB: [SubGoalToken; 10] = [
    Nav { quadrant: 0 },
    Nav { quadrant: 1 },
    Nav { quadrant: 2 },
    Nav { quadrant: 3 },
    Push { box_id: 0, target_id: 0 },
    Push { box_id: 0, target_id: 1 },
    Push { box_id: 1, target_id: 0 },
    Push { box_id: 1, target_id: 1 },
    Verify,
    End,
];

const GRIDHOUSE_VOCAB: [SubGoalToken; 12] = [
    Find { obj: 0 },
    Find { obj: 1 },
    Take { obj: 0 },
    Take { obj: 1 },
    Goto { recep: 0 },
    Goto { recep: 1 },
    Put { obj: 0, recep: 0 },
    Put { obj: 0, recep: 1 },
    Put { obj: 1, recep: 0 },
    Put { obj: 1, recep: 1 },
    Verify,
    End,
];

/// Fixed sub-goal vocabulary per environment kind; `End` is last.
pub fn vocab(kind: EnvKind) -> &'static [SubGoalToken] {
    match kind {
        EnvKind::Sokoban => &SOKOBAN_VOCAB,
        EnvKind::Gridhouse => &GRIDHOUSE_VOCAB,
    }
}

pub fn token_index(kind: EnvKind, token: SubGoalToken) -> Option<usize> {
    vocab(kind).iter().position(|&t| t == token)
}

/// Whether every entity the token names is present in `state`.
pub fn referent_exists(state: &EnvState, token: SubGoalToken) -> bool {
    let (boxes, objects, receps) = (state.boxes.len(), state.objects.len(), state.receptacles.len());
    match token {
        Push { box_id, target_id } => (box_id as usize) < boxes && (target_id as usize) < state.targets.len(),
        Find { obj } | Take { obj } => (obj as usize) < objects,
        Goto { recep } => (recep as usize) < receps,
        Put { obj, recep } => (obj as usize) < objects && (recep as usize) < receps,
        Nav { .. } | Verify | End => true,
    }
}

pub fn end_index(kind: EnvKind) -> usize {
    vocab(kind).len() - 1
}

/// An ordered plan `g_1 .. g_K, END` with the log-probabilities recorded when
/// it was sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub tokens: Vec<SubGoalToken>,
    pub token_logps: Vec<f64>,
}

impl Blueprint {
    /// Blueprint without sampling log-probabilities (all zero).
    pub fn from_tokens(tokens: Vec<SubGoalToken>) -> Self {
        let token_logps = vec![0.0; tokens.len()];
        Self {
            tokens,
            token_logps,
        }
    }

    /// Sub-goals without the trailing `End`.
    pub fn sub_goals(&self) -> &[SubGoalToken] {
        match self.tokens.split_last() {
            Some((End, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn num_sub_goals(&self) -> usize {
        self.sub_goals().len()
    }

    pub fn logp(&self) -> f64 {
        self.token_logps.iter().sum()
    }

    /// Check `1 <= K <= k_max`, a single trailing `End`, and vocabulary
    /// membership.
    pub fn validate(&self, kind: EnvKind, k_max: usize) -> Result<()> {
        let malformed = |msg: String| Err(Error::MalformedBlueprint(msg));
        let Some(end_pos) = self.tokens.iter().position(|&t| t == End) else {
            return malformed("missing END".into());
        };
        if end_pos + 1 != self.tokens.len() {
            return malformed(format!("token after END at position {end_pos}"));
        }
        if end_pos == 0 || end_pos > k_max {
            return malformed(format!("{end_pos} sub-goals, expected 1..={k_max}"));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| token_index(kind, t).is_none()) {
            return malformed(format!("{t:?} not in the {kind:?} vocabulary"));
        }
        if self.token_logps.len() != self.tokens.len() {
            return malformed("token_logps length differs from tokens".into());
        }
        Ok(())
    }
}
