//! Deterministic episodic gridworld with collectible balls, lava and a goal.
//!
//! Coordinates put `(0, 0)` in the top-left corner; `N` decreases `y`.
//! Balls block forward movement and are collected with `Pickup` from the
//! adjacent cell the agent faces. Lava is traversable: every entry into a
//! lava cell produces one lava event. An episode ends on reaching the goal
//! or after [`MAX_STEPS`] actions.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Episode length cap.
pub const MAX_STEPS: u32 = 70;

/// Ball subsets are bitmasks, so boards hold at most this many balls.
pub const MAX_BALLS: usize = 16;

pub const BOARD_SCHEMA_VERSION: u32 = 1;

/// Attempts made by [`generate_board`] before giving up.
pub const GENERATION_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: u8,
    pub y: u8,
}

impl Pos {
    pub const fn new(x: u8, y: u8) -> Self {
        Pos { x, y }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn right(self) -> Dir {
        match self {
            Dir::N => Dir::E,
            Dir::E => Dir::S,
            Dir::S => Dir::W,
            Dir::W => Dir::N,
        }
    }

    pub fn left(self) -> Dir {
        match self {
            Dir::N => Dir::W,
            Dir::W => Dir::S,
            Dir::S => Dir::E,
            Dir::E => Dir::N,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Green,
    Red,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Blue, Color::Green, Color::Red];
}

/// The four actions. Declaration order is the tie-breaking order used
/// everywhere a choice between equally good actions is made.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnRight,
    TurnLeft,
    Pickup,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::TurnRight,
        Action::TurnLeft,
        Action::Pickup,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Pos,
    pub dir: Dir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ball {
    pub pos: Pos,
    pub color: Color,
}

/// Immutable, validated board layout. Construct with [`BoardSpec::new`] or
/// by deserializing a board document; both paths check every invariant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "BoardDoc", try_from = "BoardDoc")]
pub struct BoardSpec {
    id: String,
    width: u8,
    height: u8,
    balls: Vec<Ball>,
    lava: BTreeSet<Pos>,
    goal: Pos,
    start: Pose,
}

impl BoardSpec {
    pub fn new(
        id: impl Into<String>,
        width: u8,
        height: u8,
        balls: Vec<Ball>,
        lava: impl IntoIterator<Item = Pos>,
        goal: Pos,
        start: Pose,
    ) -> Result<Self> {
        let lava_list: Vec<Pos> = lava.into_iter().collect();
        let mut violations = Vec::new();
        let lava_set: BTreeSet<Pos> = lava_list.iter().copied().collect();
        if lava_set.len() != lava_list.len() {
            violations.push("duplicate lava tiles".to_string());
        }
        let board = BoardSpec {
            id: id.into(),
            width,
            height,
            balls,
            lava: lava_set,
            goal,
            start,
        };
        violations.extend(board.violations());
        if violations.is_empty() {
            Ok(board)
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Lists every violated invariant; empty for a valid board.
    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.width == 0 || self.height == 0 {
            v.push(format!("board dimensions {}x{} must be positive", self.width, self.height));
            return v;
        }
        if self.id.is_empty() {
            v.push("board id must be non-empty".into());
        }
        let in_bounds = |p: Pos| p.x < self.width && p.y < self.height;
        if !in_bounds(self.goal) {
            v.push(format!("goal {} out of bounds", self.goal));
        }
        if !in_bounds(self.start.pos) {
            v.push(format!("start {} out of bounds", self.start.pos));
        }
        for b in &self.balls {
            if !in_bounds(b.pos) {
                v.push(format!("ball {} out of bounds", b.pos));
            }
        }
        for l in &self.lava {
            if !in_bounds(*l) {
                v.push(format!("lava {l} out of bounds"));
            }
        }
        if self.balls.is_empty() {
            v.push("board needs at least one ball".into());
        }
        if self.balls.len() > MAX_BALLS {
            v.push(format!("board has {} balls, at most {MAX_BALLS} supported", self.balls.len()));
        }

        let mut occupied: Vec<(Pos, &str)> = vec![(self.goal, "goal"), (self.start.pos, "start")];
        occupied.extend(self.balls.iter().map(|b| (b.pos, "ball")));
        occupied.extend(self.lava.iter().map(|&l| (l, "lava")));
        let mut seen = HashSet::new();
        for (p, what) in &occupied {
            if !seen.insert(*p) {
                v.push(format!("{what} at {p} overlaps another object"));
            }
        }

        if v.is_empty() && !self.goal_reachable() {
            v.push(format!(
                "goal {} not reachable from start within {MAX_STEPS} forward/turn moves",
                self.goal
            ));
        }
        v
    }

    /// Breadth-first search over (position, heading) using only Forward and
    /// turns, with balls as obstacles and the episode step cap as budget.
    fn goal_reachable(&self) -> bool {
        let w = self.width as usize;
        let idx = |p: Pos, d: Dir| (p.y as usize * w + p.x as usize) * 4 + d.index();
        let mut dist = vec![u32::MAX; w * self.height as usize * 4];
        let mut queue = VecDeque::new();
        dist[idx(self.start.pos, self.start.dir)] = 0;
        queue.push_back((self.start.pos, self.start.dir));
        while let Some((p, d)) = queue.pop_front() {
            let here = dist[idx(p, d)];
            if p == self.goal {
                return true;
            }
            if here >= MAX_STEPS {
                continue;
            }
            let mut next = vec![(p, d.right()), (p, d.left())];
            if let Some(f) = self.ahead(p, d) {
                if !self.balls.iter().any(|b| b.pos == f) {
                    next.push((f, d));
                }
            }
            for (np, nd) in next {
                let i = idx(np, nd);
                if dist[i] == u32::MAX {
                    dist[i] = here + 1;
                    queue.push_back((np, nd));
                }
            }
        }
        false
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn height(&self) -> u8 {
        self.height
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn lava(&self) -> &BTreeSet<Pos> {
        &self.lava
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn start(&self) -> Pose {
        self.start
    }

    pub fn is_lava(&self, p: Pos) -> bool {
        self.lava.contains(&p)
    }

    /// Index of the ball occupying `p`, if any.
    pub fn ball_at(&self, p: Pos) -> Option<usize> {
        self.balls.iter().position(|b| b.pos == p)
    }

    /// The in-bounds cell adjacent to `p` in direction `d`.
    pub fn ahead(&self, p: Pos, d: Dir) -> Option<Pos> {
        let (dx, dy) = d.delta();
        let x = p.x as i32 + dx;
        let y = p.y as i32 + dy;
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            None
        } else {
            Some(Pos::new(x as u8, y as u8))
        }
    }

    /// Same board under a different identifier.
    pub fn with_id(&self, id: impl Into<String>) -> BoardSpec {
        BoardSpec {
            id: id.into(),
            ..self.clone()
        }
    }

    /// Two boards share a layout when they differ at most in their id.
    pub fn same_layout(&self, other: &BoardSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.balls == other.balls
            && self.lava == other.lava
            && self.goal == other.goal
            && self.start == other.start
    }

    pub fn from_json(s: &str) -> Result<BoardSpec> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("board serialization is infallible")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct XyDoc {
    x: u8,
    y: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BallDoc {
    x: u8,
    y: u8,
    color: Color,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StartDoc {
    x: u8,
    y: u8,
    dir: Dir,
}

/// On-disk board document.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BoardDoc {
    #[serde(default = "board_schema_version")]
    version: u32,
    id: String,
    width: u8,
    height: u8,
    balls: Vec<BallDoc>,
    #[serde(default)]
    lava: Vec<XyDoc>,
    goal: XyDoc,
    start: StartDoc,
}

fn board_schema_version() -> u32 {
    BOARD_SCHEMA_VERSION
}

impl From<BoardSpec> for BoardDoc {
    fn from(b: BoardSpec) -> Self {
        BoardDoc {
            version: BOARD_SCHEMA_VERSION,
            id: b.id,
            width: b.width,
            height: b.height,
            balls: b
                .balls
                .iter()
                .map(|ball| BallDoc {
                    x: ball.pos.x,
                    y: ball.pos.y,
                    color: ball.color,
                })
                .collect(),
            lava: b.lava.iter().map(|p| XyDoc { x: p.x, y: p.y }).collect(),
            goal: XyDoc {
                x: b.goal.x,
                y: b.goal.y,
            },
            start: StartDoc {
                x: b.start.pos.x,
                y: b.start.pos.y,
                dir: b.start.dir,
            },
        }
    }
}

impl TryFrom<BoardDoc> for BoardSpec {
    type Error = Error;

    fn try_from(d: BoardDoc) -> Result<Self> {
        if d.version != BOARD_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported board schema version {} (expected {BOARD_SCHEMA_VERSION})",
                d.version
            )));
        }
        BoardSpec::new(
            d.id,
            d.width,
            d.height,
            d.balls
                .into_iter()
                .map(|b| Ball {
                    pos: Pos::new(b.x, b.y),
                    color: b.color,
                })
                .collect(),
            d.lava.into_iter().map(|p| Pos::new(p.x, p.y)),
            Pos::new(d.goal.x, d.goal.y),
            Pose {
                pos: Pos::new(d.start.x, d.start.y),
                dir: d.start.dir,
            },
        )
    }
}

/// Subset of a board's balls, bit `i` set while ball `i` remains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BallSet(u32);

impl BallSet {
    pub fn full(n: usize) -> BallSet {
        BallSet(if n >= 32 { u32::MAX } else { (1u32 << n) - 1 })
    }

    pub fn from_bits(bits: u32) -> BallSet {
        BallSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn without(self, i: usize) -> BallSet {
        BallSet(self.0 & !(1 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: BallSet) -> bool {
        self.0 & !other.0 == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub pos: Pos,
    pub dir: Dir,
    pub remaining: BallSet,
    pub steps: u32,
    pub terminated: bool,
}

/// What happened during one transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepEvents {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picked: Option<Color>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lava: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub goal: bool,
}

pub fn reset(board: &BoardSpec) -> Result<State> {
    let violations = board.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let start = board.start();
    Ok(State {
        pos: start.pos,
        dir: start.dir,
        remaining: BallSet::full(board.balls().len()),
        steps: 0,
        terminated: false,
    })
}

pub fn step(state: &State, action: Action, board: &BoardSpec) -> Result<(State, StepEvents)> {
    if state.terminated {
        return Err(Error::usage("step called on a terminated state"));
    }
    let mut next = *state;
    let mut events = StepEvents::default();
    match action {
        Action::Forward => {
            if let Some(target) = board.ahead(state.pos, state.dir) {
                let blocked = board
                    .ball_at(target)
                    .is_some_and(|i| state.remaining.contains(i));
                if !blocked {
                    next.pos = target;
                    events.lava = board.is_lava(target);
                    events.goal = target == board.goal();
                }
            }
        }
        Action::TurnRight => next.dir = state.dir.right(),
        Action::TurnLeft => next.dir = state.dir.left(),
        Action::Pickup => {
            if let Some(target) = board.ahead(state.pos, state.dir) {
                if let Some(i) = board.ball_at(target) {
                    if state.remaining.contains(i) {
                        next.remaining = state.remaining.without(i);
                        events.picked = Some(board.balls()[i].color);
                    }
                }
            }
        }
    }
    next.steps = state.steps + 1;
    next.terminated = next.pos == board.goal() || next.steps >= MAX_STEPS;
    Ok((next, events))
}

/// Anything that picks an action for a board state.
pub trait Agent {
    fn act(&self, board: &BoardSpec, state: &State) -> Result<Action>;
}

/// Adapts a closure into an [`Agent`].
pub struct FnAgent<F>(pub F);

impl<F> Agent for FnAgent<F>
where
    F: Fn(&BoardSpec, &State) -> Action,
{
    fn act(&self, board: &BoardSpec, state: &State) -> Result<Action> {
        Ok((self.0)(board, state))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: State,
    pub action: Action,
    #[serde(default)]
    pub events: StepEvents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub board_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub terminal: State,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.steps.iter().map(|s| s.action)
    }

    /// Re-applies every action on `board` and checks the recorded states
    /// and events.
    pub fn verify(&self, board: &BoardSpec) -> Result<()> {
        if self.board_id != board.id() {
            return Err(Error::Data(format!(
                "trajectory is for board {}, not {}",
                self.board_id,
                board.id()
            )));
        }
        let mut state = reset(board)?;
        for (i, s) in self.steps.iter().enumerate() {
            if s.state != state {
                return Err(Error::Data(format!("state mismatch at step {i}")));
            }
            let (next, events) = step(&state, s.action, board)?;
            if events != s.events {
                return Err(Error::Data(format!("event mismatch at step {i}")));
            }
            state = next;
        }
        if state != self.terminal {
            return Err(Error::Data("terminal state mismatch".into()));
        }
        Ok(())
    }
}

pub fn rollout(agent: &(impl Agent + ?Sized), board: &BoardSpec) -> Result<Trajectory> {
    let mut state = reset(board)?;
    let mut steps = Vec::new();
    while !state.terminated {
        let action = agent.act(board, &state)?;
        let (next, events) = step(&state, action, board)?;
        steps.push(TrajectoryStep {
            state,
            action,
            events,
        });
        state = next;
    }
    Ok(Trajectory {
        board_id: board.id().to_string(),
        steps,
        terminal: state,
    })
}

/// Inclusive count range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u8,
    pub max: u8,
}

impl CountRange {
    pub const fn exactly(n: u8) -> Self {
        CountRange { min: n, max: n }
    }

    pub const fn between(min: u8, max: u8) -> Self {
        CountRange { min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub width: u8,
    pub height: u8,
    pub blue: CountRange,
    pub green: CountRange,
    pub red: CountRange,
    /// Lava tiles, grown as contiguous patches.
    pub lava: CountRange,
    #[serde(default = "default_lava_patches")]
    pub lava_patches: CountRange,
}

fn default_lava_patches() -> CountRange {
    CountRange::between(1, 2)
}

impl Default for GenParams {
    /// 8x8 single room with one ball per color and a few lava patches.
    fn default() -> Self {
        GenParams {
            width: 8,
            height: 8,
            blue: CountRange::exactly(1),
            green: CountRange::exactly(1),
            red: CountRange::exactly(1),
            lava: CountRange::between(3, 8),
            lava_patches: default_lava_patches(),
        }
    }
}

impl GenParams {
    fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.width < 2 || self.height < 2 {
            v.push(format!("board {}x{} too small", self.width, self.height));
        }
        for (name, r) in [
            ("blue", self.blue),
            ("green", self.green),
            ("red", self.red),
            ("lava", self.lava),
            ("lava_patches", self.lava_patches),
        ] {
            if r.min > r.max {
                v.push(format!("{name} range {}..={} is empty", r.min, r.max));
            }
        }
        let max_balls = self.blue.max as usize + self.green.max as usize + self.red.max as usize;
        if max_balls == 0 {
            v.push("parameters allow no balls".into());
        }
        let min_balls = self.blue.min as usize + self.green.min as usize + self.red.min as usize;
        if min_balls > MAX_BALLS {
            v.push(format!("at least {min_balls} balls requested, cap is {MAX_BALLS}"));
        }
        let min_cells = min_balls + self.lava.min as usize + 2;
        if min_cells > self.width as usize * self.height as usize {
            v.push("requested objects do not fit on the board".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Seeded board generation; identical `(seed, params)` give identical boards.
pub fn generate_board(seed: u64, params: &GenParams) -> Result<BoardSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_board_with(&mut rng, params, &format!("gen-{seed:016x}"))
}

/// Draws boards from `rng` until one validates, up to [`GENERATION_ATTEMPTS`].
pub fn generate_board_with<R: Rng + ?Sized>(
    rng: &mut R,
    params: &GenParams,
    id: &str,
) -> Result<BoardSpec> {
    params.check().map_err(|e| Error::Generation {
        attempts: 0,
        reason: e.to_string(),
    })?;
    let mut last = String::from("no candidate drawn");
    for _ in 0..GENERATION_ATTEMPTS {
        match sample_board(rng, params, id) {
            Ok(b) => return Ok(b),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Generation {
        attempts: GENERATION_ATTEMPTS,
        reason: last,
    })
}

fn sample_board<R: Rng + ?Sized>(rng: &mut R, params: &GenParams, id: &str) -> Result<BoardSpec> {
    let (w, h) = (params.width, params.height);
    let mut cells: Vec<Pos> = (0..h).flat_map(|y| (0..w).map(move |x| Pos::new(x, y))).collect();
    cells.shuffle(rng);
    let mut free: BTreeSet<Pos> = cells.iter().copied().collect();

    let start_pos = cells[0];
    free.remove(&start_pos);
    let start = Pose {
        pos: start_pos,
        dir: Dir::from_index(rng.gen_range(0..4)),
    };
    let goal = cells[1];
    free.remove(&goal);

    let lava_target = rng.gen_range(params.lava.min..=params.lava.max) as usize;
    let patches = rng
        .gen_range(params.lava_patches.min..=params.lava_patches.max)
        .max(1) as usize;
    let mut lava = BTreeSet::new();
    let mut frontier: Vec<Pos> = Vec::new();
    let mut patches_started = 0;
    while lava.len() < lava_target {
        let grow = patches_started >= patches || (!frontier.is_empty() && rng.gen_bool(0.75));
        let next = if grow && !frontier.is_empty() {
            let i = rng.gen_range(0..frontier.len());
            frontier.swap_remove(i)
        } else {
            patches_started += 1;
            let pool: Vec<Pos> = free.iter().copied().collect();
            match pool.choose(rng) {
                Some(p) => *p,
                None => break,
            }
        };
        if !free.contains(&next) {
            continue;
        }
        free.remove(&next);
        lava.insert(next);
        for d in Dir::ALL {
            let (dx, dy) = d.delta();
            let x = next.x as i32 + dx;
            let y = next.y as i32 + dy;
            if x >= 0 && y >= 0 && x < w as i32 && y < h as i32 {
                let p = Pos::new(x as u8, y as u8);
                if free.contains(&p) {
                    frontier.push(p);
                }
            }
        }
    }

    let mut balls = Vec::new();
    for (color, range) in [
        (Color::Blue, params.blue),
        (Color::Green, params.green),
        (Color::Red, params.red),
    ] {
        let n = rng.gen_range(range.min..=range.max);
        for _ in 0..n {
            let pool: Vec<Pos> = free.iter().copied().collect();
            let p = *pool
                .choose(rng)
                .ok_or_else(|| Error::invalid("no free cell for ball"))?;
            free.remove(&p);
            balls.push(Ball { pos: p, color });
        }
    }

    BoardSpec::new(id, w, h, balls, lava, goal, start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> BoardSpec {
        // . . . G
        // . B L .
        BoardSpec::new(
            "corridor",
            4,
            2,
            vec![Ball {
                pos: Pos::new(1, 1),
                color: Color::Blue,
            }],
            [Pos::new(2, 1)],
            Pos::new(3, 0),
            Pose {
                pos: Pos::new(0, 0),
                dir: Dir::E,
            },
        )
        .unwrap()
    }

    #[test]
    fn reset_gives_start_state() {
        let b = corridor();
        let s = reset(&b).unwrap();
        assert_eq!(s.pos, Pos::new(0, 0));
        assert_eq!(s.dir, Dir::E);
        assert_eq!(s.steps, 0);
        assert!(!s.terminated);
        assert_eq!(s.remaining.len(), 1);
    }

    #[test]
    fn reset_counts_three_balls() {
        let b = BoardSpec::new(
            "three",
            4,
            4,
            vec![
                Ball { pos: Pos::new(1, 1), color: Color::Blue },
                Ball { pos: Pos::new(2, 2), color: Color::Green },
                Ball { pos: Pos::new(3, 1), color: Color::Red },
            ],
            [],
            Pos::new(3, 3),
            Pose { pos: Pos::new(0, 0), dir: Dir::S },
        )
        .unwrap();
        assert_eq!(reset(&b).unwrap().remaining.len(), 3);
    }

    #[test]
    fn unreachable_goal_rejected() {
        // 1-wide corridor with a ball between start and goal.
        let err = BoardSpec::new(
            "blocked",
            4,
            1,
            vec![Ball { pos: Pos::new(1, 0), color: Color::Red }],
            [],
            Pos::new(3, 0),
            Pose { pos: Pos::new(0, 0), dir: Dir::E },
        )
        .unwrap_err();
        assert!(err.to_string().contains("not reachable"), "{err}");

        // Goal beyond the step budget.
        let err = BoardSpec::new(
            "far",
            80,
            1,
            vec![Ball { pos: Pos::new(0, 0), color: Color::Red }],
            [],
            Pos::new(79, 0),
            Pose { pos: Pos::new(1, 0), dir: Dir::E },
        )
        .unwrap_err();
        assert!(err.to_string().contains("not reachable"), "{err}");
    }

    #[test]
    fn overlap_and_bounds_listed() {
        let err = BoardSpec::new(
            "bad",
            3,
            3,
            vec![Ball { pos: Pos::new(2, 2), color: Color::Red }],
            [Pos::new(2, 2), Pos::new(5, 5)],
            Pos::new(2, 2),
            Pose { pos: Pos::new(0, 0), dir: Dir::E },
        )
        .unwrap_err();
        let Error::Validation(v) = err else { panic!() };
        assert!(v.iter().any(|m| m.contains("out of bounds")));
        assert!(v.iter().any(|m| m.contains("overlaps")));
    }

    #[test]
    fn no_balls_rejected() {
        let err = BoardSpec::new(
            "empty",
            3,
            3,
            vec![],
            [],
            Pos::new(2, 2),
            Pose { pos: Pos::new(0, 0), dir: Dir::E },
        )
        .unwrap_err();
        assert!(err.to_string().contains("at least one ball"));
    }

    #[test]
    fn forward_into_wall_counts_step() {
        let b = corridor();
        let s = State {
            pos: Pos::new(0, 0),
            dir: Dir::N,
            ..reset(&b).unwrap()
        };
        let (n, ev) = step(&s, Action::Forward, &b).unwrap();
        assert_eq!(n.pos, s.pos);
        assert_eq!(n.steps, 1);
        assert_eq!(ev, StepEvents::default());
    }

    #[test]
    fn pickup_facing_blue() {
        let b = corridor();
        let s = State {
            pos: Pos::new(0, 1),
            dir: Dir::E,
            ..reset(&b).unwrap()
        };
        let (n, ev) = step(&s, Action::Pickup, &b).unwrap();
        assert_eq!(ev.picked, Some(Color::Blue));
        assert!(n.remaining.is_empty());
        // Nothing left to pick.
        let (n2, ev2) = step(&n, Action::Pickup, &b).unwrap();
        assert_eq!(ev2.picked, None);
        assert_eq!(n2.remaining, n.remaining);
    }

    #[test]
    fn balls_block_forward() {
        let b = corridor();
        let s = State {
            pos: Pos::new(0, 1),
            dir: Dir::E,
            ..reset(&b).unwrap()
        };
        let (n, _) = step(&s, Action::Forward, &b).unwrap();
        assert_eq!(n.pos, Pos::new(0, 1));
    }

    #[test]
    fn lava_entry_emits_event_once() {
        let b = corridor();
        let s = State {
            pos: Pos::new(3, 1),
            dir: Dir::W,
            ..reset(&b).unwrap()
        };
        let (on_lava, ev) = step(&s, Action::Forward, &b).unwrap();
        assert!(ev.lava);
        assert!(!on_lava.terminated);
        let (turned, ev) = step(&on_lava, Action::TurnLeft, &b).unwrap();
        assert!(!ev.lava);
        assert_eq!(turned.pos, on_lava.pos);
    }

    #[test]
    fn reaching_goal_terminates() {
        let b = corridor();
        let s = State {
            pos: Pos::new(2, 0),
            dir: Dir::E,
            ..reset(&b).unwrap()
        };
        let (n, ev) = step(&s, Action::Forward, &b).unwrap();
        assert!(n.terminated);
        assert!(ev.goal);
        assert!(step(&n, Action::Forward, &b).is_err());
    }

    #[test]
    fn always_turn_right_runs_full_episode() {
        let b = corridor();
        let t = rollout(&FnAgent(|_: &BoardSpec, _: &State| Action::TurnRight), &b).unwrap();
        assert_eq!(t.len(), MAX_STEPS as usize);
        assert!(t.steps.iter().all(|s| s.events == StepEvents::default()));
        assert!(t.terminal.terminated);
        t.verify(&b).unwrap();
    }

    #[test]
    fn board_json_round_trip_and_validation() {
        let b = corridor();
        let json = b.to_json();
        assert_eq!(BoardSpec::from_json(&json).unwrap(), b);

        let bad = json.replace("\"width\": 4", "\"width\": 2");
        assert!(BoardSpec::from_json(&bad).is_err());
    }

    #[test]
    fn board_document_shape() {
        let v: serde_json::Value = serde_json::to_value(corridor()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["balls"][0]["color"], "blue");
        assert_eq!(v["start"]["dir"], "E");
        assert_eq!(v["goal"], serde_json::json!({"x": 3, "y": 0}));
        assert_eq!(v["lava"][0], serde_json::json!({"x": 2, "y": 1}));
    }

    #[test]
    fn generation_is_seeded() {
        let p = GenParams::default();
        let a = generate_board(7, &p).unwrap();
        let b = generate_board(7, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_board(8, &p).unwrap());
        assert_eq!(a.balls().len(), 3);
        assert!(!a.lava().is_empty());
        for c in Color::ALL {
            assert_eq!(a.balls().iter().filter(|b| b.color == c).count(), 1);
        }
    }

    #[test]
    fn generation_with_zero_balls_fails() {
        let p = GenParams {
            blue: CountRange::exactly(0),
            green: CountRange::exactly(0),
            red: CountRange::exactly(0),
            ..GenParams::default()
        };
        assert!(matches!(generate_board(1, &p), Err(Error::Generation { .. })));
    }
}
