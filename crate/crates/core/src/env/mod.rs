//! Goal-conditioned gridworld environments.
//!
//! Two task families share one state representation:
//!
//! * **Sokoban**: push every box onto a target. Instances are built by
//!   reverse play from a solved layout, so every instance is solvable.
//! * **Gridhouse**: a pick-and-place household analogue. Objects start on
//!   the floor or inside (possibly closed) receptacles and must be carried
//!   to the receptacle named by each goal binding.
//!
//! States are plain values. [`EnvState::step`] is a pure function of the
//! state and the action; [`EnvState::apply`] is the in-place variant used by
//! the rollout engine.

mod gridhouse;
mod oracle;
mod sokoban;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use oracle::oracle_solve;

/// Egocentric crop radius. A radius of 2 gives a 5x5 view.
pub const VIEW_RADIUS: i32 = 2;
pub const VIEW_SIDE: usize = (2 * VIEW_RADIUS + 1) as usize;
/// Number of goal slots encoded in every observation (max boxes / objects).
pub const GOAL_SLOTS: usize = 2;
/// Number of receptacles in every gridhouse instance.
pub const NUM_RECEPTACLES: usize = 2;
/// Generation gives up after this many attempts.
pub const MAX_GEN_ATTEMPTS: usize = 1000;

pub const SOKOBAN_STEP_LIMIT: usize = 15;
pub const GRIDHOUSE_STEP_LIMIT: usize = 30;

pub mod reward {
    pub const SOKOBAN_STEP: f64 = -0.1;
    pub const SOKOBAN_BOX_ON: f64 = 1.0;
    pub const SOKOBAN_BOX_OFF: f64 = -1.0;
    pub const SOKOBAN_SOLVED: f64 = 10.0;
    pub const GRIDHOUSE_STEP: f64 = -0.05;
    pub const GRIDHOUSE_BINDING: f64 = 2.0;
    pub const GRIDHOUSE_SOLVED: f64 = 10.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sokoban,
    Gridhouse,
}

impl EnvKind {
    /// Cost of one atomic step.
    pub fn step_reward(self) -> f64 {
        match self {
            EnvKind::Sokoban => reward::SOKOBAN_STEP,
            EnvKind::Gridhouse => reward::GRIDHOUSE_STEP,
        }
    }

    pub fn default_step_limit(self) -> usize {
        match self {
            EnvKind::Sokoban => SOKOBAN_STEP_LIMIT,
            EnvKind::Gridhouse => GRIDHOUSE_STEP_LIMIT,
        }
    }

    /// Atomic action vocabulary, `SubDone` last.
    pub fn actions(self) -> &'static [ActionToken] {
        use ActionToken::*;
        match self {
            EnvKind::Sokoban => &[Up, Down, Left, Right, SubDone],
            EnvKind::Gridhouse => &[Up, Down, Left, Right, Open, Take, Put, Look, SubDone],
        }
    }

    pub fn num_actions(self) -> usize {
        self.actions().len()
    }

    pub fn action_index(self, action: ActionToken) -> Option<usize> {
        self.actions().iter().position(|&a| a == action)
    }

    /// Width of [`Observation::local_view`].
    pub fn view_channels(self) -> usize {
        match self {
            // wall, box, target
            EnvKind::Sokoban => 3,
            // wall, obj0, obj1, recep0, recep1, open
            EnvKind::Gridhouse => 6,
        }
    }

    pub fn goal_len(self) -> usize {
        2 * GOAL_SLOTS
    }

    pub fn aux_len(self) -> usize {
        match self {
            EnvKind::Sokoban => 1,
            EnvKind::Gridhouse => 4,
        }
    }

    /// Total flattened observation length.
    pub fn observation_len(self) -> usize {
        VIEW_SIDE * VIEW_SIDE * self.view_channels() + self.goal_len() + self.aux_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Difficulty {
    pub width: usize,
    pub height: usize,
    /// Boxes (sokoban) or objects (gridhouse).
    pub num_items: usize,
}

impl Difficulty {
    pub fn new(width: usize, height: usize, num_items: usize) -> Self {
        Self {
            width,
            height,
            num_items,
        }
    }

    pub fn validate(&self, kind: EnvKind) -> Result<()> {
        let dims_ok = (5..=8).contains(&self.width) && (5..=8).contains(&self.height);
        let items_ok = (1..=GOAL_SLOTS).contains(&self.num_items);
        if dims_ok && items_ok {
            Ok(())
        } else {
            Err(Error::UnsupportedDifficulty(format!(
                "{kind:?} {}x{} with {} items (supported: 5..=8 per side, 1..=2 items)",
                self.width, self.height, self.num_items
            )))
        }
    }
}

/// Structured goal descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Goal {
    AllBoxesOnTargets,
    /// `(object, receptacle)` pairs; object ids are `0..num_items`.
    Bindings { pairs: Vec<(usize, usize)> },
}

/// The task instruction: environment identity, goal, and generation seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env_kind: EnvKind,
    pub goal: Goal,
    pub gen_seed: u64,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TaskSpec {
    pub fn sokoban(gen_seed: u64, width: usize, height: usize, boxes: usize) -> Self {
        Self {
            env_kind: EnvKind::Sokoban,
            goal: Goal::AllBoxesOnTargets,
            gen_seed,
            difficulty: Difficulty::new(width, height, boxes),
            max_steps: None,
        }
    }

    /// Gridhouse task whose bindings are derived from the seed.
    pub fn gridhouse(gen_seed: u64, width: usize, height: usize, objects: usize) -> Self {
        let mut state = crate::seed::derive(gen_seed, 0x60A1);
        let pairs = (0..objects)
            .map(|obj| {
                state = crate::seed::splitmix(state);
                (obj, (state % NUM_RECEPTACLES as u64) as usize)
            })
            .collect();
        Self {
            env_kind: EnvKind::Gridhouse,
            goal: Goal::Bindings { pairs },
            gen_seed,
            difficulty: Difficulty::new(width, height, objects),
            max_steps: None,
        }
    }

    /// Same task family, different instance.
    pub fn with_seed(&self, gen_seed: u64) -> Self {
        match self.env_kind {
            EnvKind::Sokoban => Self {
                gen_seed,
                ..self.clone()
            },
            EnvKind::Gridhouse => {
                let mut spec = Self::gridhouse(
                    gen_seed,
                    self.difficulty.width,
                    self.difficulty.height,
                    self.difficulty.num_items,
                );
                spec.max_steps = self.max_steps;
                spec
            }
        }
    }

    pub fn step_limit(&self) -> usize {
        self.max_steps
            .unwrap_or_else(|| self.env_kind.default_step_limit())
    }

    pub fn validate(&self) -> Result<()> {
        self.difficulty.validate(self.env_kind)?;
        let limit = self.step_limit();
        if limit == 0 || limit > oracle::MAX_DEPTH {
            return Err(Error::UnsupportedDifficulty(format!(
                "step limit {limit} outside 1..={}",
                oracle::MAX_DEPTH
            )));
        }
        match (&self.goal, self.env_kind) {
            (Goal::AllBoxesOnTargets, EnvKind::Sokoban) => Ok(()),
            (Goal::Bindings { pairs }, EnvKind::Gridhouse) => {
                let n = self.difficulty.num_items;
                let ids_ok = pairs.len() == n
                    && pairs
                        .iter()
                        .enumerate()
                        .all(|(i, &(o, r))| o == i && r < NUM_RECEPTACLES);
                if ids_ok {
                    Ok(())
                } else {
                    Err(Error::UnsupportedDifficulty(format!(
                        "bindings {pairs:?} do not match {n} objects"
                    )))
                }
            }
            (goal, kind) => Err(Error::UnsupportedDifficulty(format!(
                "goal {goal:?} does not apply to {kind:?}"
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, (dx, dy): (i32, i32)) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn neighbors(self) -> [Pos; 4] {
        DIRS.map(|d| self.offset(d))
    }
}

/// Up, down, left, right.
pub const DIRS: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionToken {
    Up,
    Down,
    Left,
    Right,
    Open,
    Take,
    Put,
    Look,
    SubDone,
}

impl ActionToken {
    pub fn direction(self) -> Option<(i32, i32)> {
        match self {
            ActionToken::Up => Some(DIRS[0]),
            ActionToken::Down => Some(DIRS[1]),
            ActionToken::Left => Some(DIRS[2]),
            ActionToken::Right => Some(DIRS[3]),
            _ => None,
        }
    }
}

/// Where a gridhouse object currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLoc {
    Floor(Pos),
    In(usize),
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Receptacle {
    pub pos: Pos,
    pub open: bool,
}

/// Full hidden state behind an observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    /// Row-major wall flags.
    pub walls: Vec<bool>,
    /// Sokoban targets; index is the target id.
    pub targets: Vec<Pos>,
    pub agent: Pos,
    /// Sokoban boxes; index is the box id.
    pub boxes: Vec<Pos>,
    pub receptacles: Vec<Receptacle>,
    pub objects: Vec<ObjectLoc>,
    pub bindings: Vec<(usize, usize)>,
    pub step_count: usize,
    pub max_steps: usize,
    pub done: bool,
}

/// Result of a single transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub observation: Observation,
}

/// Egocentric partial observation with fixed dimensionality per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `VIEW_SIDE x VIEW_SIDE x channels`, row-major, channel innermost.
    pub local_view: Vec<f64>,
    pub goal_channel: Vec<f64>,
    pub aux: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.local_view.len() + self.goal_channel.len() + self.aux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.local_view);
        out.extend_from_slice(&self.goal_channel);
        out.extend_from_slice(&self.aux);
    }
}

/// Build the initial state for a task.
pub fn generate(spec: &TaskSpec) -> Result<EnvState> {
    spec.validate()?;
    match spec.env_kind {
        EnvKind::Sokoban => sokoban::generate(spec),
        EnvKind::Gridhouse => gridhouse::generate(spec),
    }
}

/// Pure transition function.
pub fn step(state: &EnvState, action: ActionToken) -> Result<StepOutcome> {
    let mut next = state.clone();
    let (reward, done) = next.apply(action)?;
    let observation = next.observe();
    Ok(StepOutcome {
        state: next,
        reward,
        done,
        observation,
    })
}

pub fn observe(state: &EnvState) -> Observation {
    state.observe()
}

impl EnvState {
    pub(crate) fn empty(kind: EnvKind, width: usize, height: usize, max_steps: usize) -> Self {
        let mut walls = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    walls[y * width + x] = true;
                }
            }
        }
        Self {
            kind,
            width,
            height,
            walls,
            targets: Vec::new(),
            agent: Pos::new(1, 1),
            boxes: Vec::new(),
            receptacles: Vec::new(),
            objects: Vec::new(),
            bindings: Vec::new(),
            step_count: 0,
            max_steps,
            done: false,
        }
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        !self.in_bounds(p) || self.walls[p.y as usize * self.width + p.x as usize]
    }

    /// Interior floor cells in row-major order.
    pub fn floor_cells(&self) -> Vec<Pos> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let p = Pos::new(x, y);
                if !self.is_wall(p) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn box_at(&self, p: Pos) -> Option<usize> {
        self.boxes.iter().position(|&b| b == p)
    }

    pub fn is_target(&self, p: Pos) -> bool {
        self.targets.contains(&p)
    }

    pub fn boxes_on_target(&self) -> usize {
        self.boxes.iter().filter(|&&b| self.is_target(b)).count()
    }

    pub fn receptacle_at(&self, p: Pos) -> Option<usize> {
        self.receptacles.iter().position(|r| r.pos == p)
    }

    pub fn floor_object_at(&self, p: Pos) -> Option<usize> {
        self.objects
            .iter()
            .position(|&o| o == ObjectLoc::Floor(p))
    }

    pub fn held_object(&self) -> Option<usize> {
        self.objects.iter().position(|&o| o == ObjectLoc::Held)
    }

    pub fn binding_satisfied(&self, (obj, recep): (usize, usize)) -> bool {
        self.objects.get(obj) == Some(&ObjectLoc::In(recep))
    }

    pub fn bindings_satisfied(&self) -> usize {
        self.bindings
            .iter()
            .filter(|&&b| self.binding_satisfied(b))
            .count()
    }

    pub fn is_solved(&self) -> bool {
        match self.kind {
            EnvKind::Sokoban => self.boxes.iter().all(|&b| self.is_target(b)),
            EnvKind::Gridhouse => self.bindings_satisfied() == self.bindings.len(),
        }
    }

    /// Apply an action in place, returning `(reward, done)`.
    pub fn apply(&mut self, action: ActionToken) -> Result<(f64, bool)> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if self.kind.action_index(action).is_none() {
            return Err(Error::InvalidAction {
                action,
                kind: self.kind,
            });
        }
        if action == ActionToken::SubDone {
            return Ok((0.0, false));
        }
        let (mut reward, solved) = match self.kind {
            EnvKind::Sokoban => sokoban::transition(self, action),
            EnvKind::Gridhouse => gridhouse::transition(self, action),
        };
        self.step_count += 1;
        if solved {
            reward += match self.kind {
                EnvKind::Sokoban => reward::SOKOBAN_SOLVED,
                EnvKind::Gridhouse => reward::GRIDHOUSE_SOLVED,
            };
        }
        self.done = solved || self.step_count >= self.max_steps;
        Ok((reward, self.done))
    }

    pub fn step(&self, action: ActionToken) -> Result<StepOutcome> {
        step(self, action)
    }

    pub fn observe(&self) -> Observation {
        let channels = self.kind.view_channels();
        let mut local_view = vec![0.0; VIEW_SIDE * VIEW_SIDE * channels];
        for (row, dy) in (-VIEW_RADIUS..=VIEW_RADIUS).enumerate() {
            for (col, dx) in (-VIEW_RADIUS..=VIEW_RADIUS).enumerate() {
                let base = (row * VIEW_SIDE + col) * channels;
                let p = self.agent.offset((dx, dy));
                let cell = &mut local_view[base..base + channels];
                if self.is_wall(p) {
                    cell[0] = 1.0;
                    continue;
                }
                match self.kind {
                    EnvKind::Sokoban => sokoban::encode_cell(self, p, cell),
                    EnvKind::Gridhouse => gridhouse::encode_cell(self, p, cell),
                }
            }
        }
        let mut goal_channel = vec![0.0; self.kind.goal_len()];
        let mut aux = vec![0.0; self.kind.aux_len()];
        match self.kind {
            EnvKind::Sokoban => {
                for (slot, &b) in self.boxes.iter().enumerate().take(GOAL_SLOTS) {
                    goal_channel[2 * slot] = 1.0;
                    goal_channel[2 * slot + 1] = if self.is_target(b) { 0.0 } else { 1.0 };
                }
            }
            EnvKind::Gridhouse => {
                for (slot, &b) in self.bindings.iter().enumerate().take(GOAL_SLOTS) {
                    goal_channel[2 * slot] = 1.0;
                    goal_channel[2 * slot + 1] = if self.binding_satisfied(b) { 0.0 } else { 1.0 };
                }
                if let Some(obj) = self.held_object() {
                    aux[0] = 1.0;
                    aux[1 + obj.min(GOAL_SLOTS - 1)] = 1.0;
                }
            }
        }
        let last = aux.len() - 1;
        aux[last] = self.step_count as f64 / self.max_steps.max(1) as f64;
        Observation {
            local_view,
            goal_channel,
            aux,
        }
    }

    /// Debug rendering, one character per cell.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let p = Pos::new(x, y);
                let c = if self.is_wall(p) {
                    '#'
                } else if p == self.agent {
                    '@'
                } else if let Some(b) = self.box_at(p) {
                    if self.is_target(p) {
                        '*'
                    } else {
                        char::from(b'A' + b as u8)
                    }
                } else if self.is_target(p) {
                    '.'
                } else if let Some(r) = self.receptacle_at(p) {
                    if self.receptacles[r].open {
                        char::from(b'0' + r as u8)
                    } else {
                        char::from(b'a' + r as u8)
                    }
                } else if let Some(o) = self.floor_object_at(p) {
                    char::from(b'o' + o as u8)
                } else {
                    ' '
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}
