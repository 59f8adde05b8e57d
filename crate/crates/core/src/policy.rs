//! Preference-parameterized policies backed by exact finite-horizon planning.
//!
//! A [`Policy`] owns a preference vector and a discount. The first time it
//! acts on a board it solves that board by backward induction over every
//! `(position, heading, remaining balls, steps taken)` state and memoizes the
//! resulting action table. Ties between actions resolve to the earliest
//! action in [`Action::ALL`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Agent, BoardSpec, Dir, State, MAX_STEPS};
use crate::reward::{PreferenceVector, EVALUATION_WEIGHTS};
use crate::util::fingerprint;

pub const DEFAULT_GAMMA: f64 = 0.99;

/// Upper bound on `states x horizon` entries in one action table.
pub const DEFAULT_TABLE_CAP: usize = 32_000_000;

/// Boards memoized per policy before the cache is flushed.
pub const DEFAULT_CACHE_BOARDS: usize = 128;

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyId(pub u32);

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pi{}", self.0)
    }
}

/// Optimal action table for one board.
#[derive(Debug)]
pub struct Plan {
    width: usize,
    height: usize,
    horizon: u32,
    n_states: usize,
    actions: Vec<u8>,
    start_value: f64,
}

impl Plan {
    fn index(&self, s: &State) -> usize {
        ((s.remaining.bits() as usize * self.height + s.pos.y as usize) * self.width + s.pos.x as usize)
            * 4
            + s.dir.index()
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Optimal discounted return from the board's start state.
    pub fn start_value(&self) -> f64 {
        self.start_value
    }

    pub fn action(&self, s: &State) -> Result<Action> {
        if s.terminated {
            return Err(Error::usage("no action for a terminated state"));
        }
        if s.steps >= self.horizon {
            return Err(Error::usage(format!(
                "state at step {} is beyond the planning horizon {}",
                s.steps, self.horizon
            )));
        }
        let i = s.steps as usize * self.n_states + self.index(s);
        self.actions
            .get(i)
            .and_then(|&a| Action::from_index(a as usize))
            .ok_or_else(|| Error::usage("state does not belong to the planned board"))
    }
}

/// Per-cell lookup for the planner's transition function.
struct CellMap {
    width: usize,
    height: usize,
    ball: Vec<Option<u8>>,
    lava: Vec<bool>,
    goal: usize,
}

impl CellMap {
    fn new(board: &BoardSpec) -> Self {
        let width = board.width() as usize;
        let height = board.height() as usize;
        let mut ball = vec![None; width * height];
        for (i, b) in board.balls().iter().enumerate() {
            ball[b.pos.y as usize * width + b.pos.x as usize] = Some(i as u8);
        }
        let mut lava = vec![false; width * height];
        for p in board.lava() {
            lava[p.y as usize * width + p.x as usize] = true;
        }
        let g = board.goal();
        CellMap {
            width,
            height,
            ball,
            lava,
            goal: g.y as usize * width + g.x as usize,
        }
    }

    fn ahead(&self, x: usize, y: usize, d: Dir) -> Option<(usize, usize)> {
        match d {
            Dir::N if y > 0 => Some((x, y - 1)),
            Dir::S if y + 1 < self.height => Some((x, y + 1)),
            Dir::E if x + 1 < self.width => Some((x + 1, y)),
            Dir::W if x > 0 => Some((x - 1, y)),
            _ => None,
        }
    }
}

/// Solves `board` under `prefs` by backward induction over `horizon` steps.
pub fn plan(board: &BoardSpec, prefs: &PreferenceVector, gamma: f64, horizon: u32) -> Result<Plan> {
    plan_with_cap(board, prefs, gamma, horizon, DEFAULT_TABLE_CAP)
}

pub fn plan_with_cap(
    board: &BoardSpec,
    prefs: &PreferenceVector,
    gamma: f64,
    horizon: u32,
    cap: usize,
) -> Result<Plan> {
    check_gamma(gamma)?;
    prefs.validate()?;
    if horizon == 0 || horizon > MAX_STEPS {
        return Err(Error::usage(format!("horizon must be in 1..={MAX_STEPS}, got {horizon}")));
    }
    let cells = CellMap::new(board);
    let (w, h) = (cells.width, cells.height);
    let n_masks = 1usize << board.balls().len();
    let n_states = n_masks * h * w * 4;
    let needed = n_states.saturating_mul(horizon as usize);
    if needed > cap {
        return Err(Error::Resource {
            what: "planner action table",
            needed,
            cap,
        });
    }
    let ball_value: Vec<f64> = board.balls().iter().map(|b| prefs.ball(b.color)).collect();
    let index = |mask: usize, x: usize, y: usize, d: usize| ((mask * h + y) * w + x) * 4 + d;

    let mut actions = vec![0u8; needed];
    let mut next_value = vec![0.0f64; n_states];
    let mut value = vec![0.0f64; n_states];
    for t in (0..horizon as usize).rev() {
        let layer = &mut actions[t * n_states..(t + 1) * n_states];
        for mask in 0..n_masks {
            for y in 0..h {
                for x in 0..w {
                    let cell = y * w + x;
                    for d in 0..4 {
                        let si = index(mask, x, y, d);
                        if cell == cells.goal {
                            value[si] = 0.0;
                            layer[si] = 0;
                            continue;
                        }
                        let dir = Dir::from_index(d);
                        let mut best = f64::NEG_INFINITY;
                        let mut best_a = 0u8;
                        for a in Action::ALL {
                            let (ni, reward, at_goal) = match a {
                                Action::Forward => match cells.ahead(x, y, dir) {
                                    Some((nx, ny)) => {
                                        let nc = ny * w + nx;
                                        let blocked = cells.ball[nc]
                                            .is_some_and(|b| mask & (1 << b) != 0);
                                        if blocked {
                                            (si, prefs.step, false)
                                        } else {
                                            let r = if cells.lava[nc] {
                                                prefs.step + prefs.lava
                                            } else {
                                                prefs.step
                                            };
                                            (index(mask, nx, ny, d), r, nc == cells.goal)
                                        }
                                    }
                                    None => (si, prefs.step, false),
                                },
                                Action::TurnRight => {
                                    (index(mask, x, y, dir.right().index()), prefs.step, false)
                                }
                                Action::TurnLeft => {
                                    (index(mask, x, y, dir.left().index()), prefs.step, false)
                                }
                                Action::Pickup => match cells.ahead(x, y, dir) {
                                    Some((nx, ny)) => match cells.ball[ny * w + nx] {
                                        Some(b) if mask & (1 << b) != 0 => (
                                            index(mask & !(1 << b), x, y, d),
                                            prefs.step + ball_value[b as usize],
                                            false,
                                        ),
                                        _ => (si, prefs.step, false),
                                    },
                                    None => (si, prefs.step, false),
                                },
                            };
                            let future = if at_goal { 0.0 } else { next_value[ni] };
                            let q = reward + gamma * future;
                            if q > best {
                                best = q;
                                best_a = a.index() as u8;
                            }
                        }
                        value[si] = best;
                        layer[si] = best_a;
                    }
                }
            }
        }
        std::mem::swap(&mut value, &mut next_value);
    }

    let start = board.start();
    let start_idx = index(
        n_masks - 1,
        start.pos.x as usize,
        start.pos.y as usize,
        start.dir.index(),
    );
    Ok(Plan {
        width: w,
        height: h,
        horizon,
        n_states,
        actions,
        start_value: next_value[start_idx],
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

/// A deterministic policy: plans per board under its own preferences.
pub struct Policy {
    id: PolicyId,
    preferences: PreferenceVector,
    gamma: f64,
    horizon: u32,
    cache_cap: usize,
    cache: RwLock<HashMap<BoardSpec, Arc<Plan>>>,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("id", &self.id)
            .field("preferences", &self.preferences)
            .field("gamma", &self.gamma)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl Policy {
    pub fn new(id: PolicyId, preferences: PreferenceVector, gamma: f64) -> Result<Policy> {
        check_gamma(gamma)?;
        preferences.validate()?;
        Ok(Policy {
            id,
            preferences,
            gamma,
            horizon: MAX_STEPS,
            cache_cap: DEFAULT_CACHE_BOARDS,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Planner that optimizes the evaluation weights.
    pub fn evaluation_optimal(gamma: f64) -> Result<Policy> {
        Policy::new(PolicyId(0), EVALUATION_WEIGHTS, gamma)
    }

    pub fn with_cache_cap(mut self, boards: usize) -> Self {
        self.cache_cap = boards.max(1);
        self
    }

    pub fn id(&self) -> PolicyId {
        self.id
    }

    pub fn preferences(&self) -> PreferenceVector {
        self.preferences
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Memoized plan for `board`. Concurrent first use may plan twice; the
    /// first inserted table wins and both are identical.
    pub fn plan_for(&self, board: &BoardSpec) -> Result<Arc<Plan>> {
        if let Some(p) = self.cache.read().expect("plan cache poisoned").get(board) {
            return Ok(Arc::clone(p));
        }
        let fresh = Arc::new(plan(board, &self.preferences, self.gamma, self.horizon)?);
        let mut cache = self.cache.write().expect("plan cache poisoned");
        if cache.len() >= self.cache_cap && !cache.contains_key(board) {
            cache.clear();
        }
        Ok(Arc::clone(cache.entry(board.clone()).or_insert(fresh)))
    }

    pub fn clear_cache(&self) {
        self.cache.write().expect("plan cache poisoned").clear();
    }

    pub fn cached_boards(&self) -> usize {
        self.cache.read().expect("plan cache poisoned").len()
    }
}

impl Agent for Policy {
    fn act(&self, board: &BoardSpec, state: &State) -> Result<Action> {
        self.plan_for(board)?.action(state)
    }
}

/// Topology of the neighborhood relation between bank policies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    FullyConnected,
    /// Policy `i` neighbors `i - 1` and `i + 1`, wrapping around.
    Ring,
    Explicit(Vec<(PolicyId, PolicyId)>),
}

/// The six default training vectors with short labels. These are chosen
/// for this artifact to span lava aversion and ball preferences; they are
/// not published values.
pub fn default_bank_vectors() -> [(&'static str, PreferenceVector); 6] {
    [
        ("aligned", PreferenceVector::new(4.0, 2.0, -2.0, -3.0, -0.1)),
        ("weak-lava-aversion", PreferenceVector::new(4.0, 2.0, -2.0, -0.5, -0.1)),
        ("green-preferring", PreferenceVector::new(2.0, 4.0, -2.0, -3.0, -0.1)),
        ("red-attracted", PreferenceVector::new(4.0, 2.0, 2.0, -3.0, -0.1)),
        ("lava-averse-indifferent", PreferenceVector::new(1.0, 1.0, -2.0, -6.0, -0.1)),
        ("haste", PreferenceVector::new(4.0, 2.0, -2.0, -3.0, -1.0)),
    ]
}

#[derive(Debug)]
pub struct PolicyBank {
    policies: Vec<Arc<Policy>>,
    adjacency: BTreeMap<PolicyId, BTreeSet<PolicyId>>,
}

/// Builds one policy per vector with ids `1..=k`.
pub fn build_bank(vectors: &[PreferenceVector], gamma: f64, topology: &Topology) -> Result<PolicyBank> {
    let entries: Vec<PolicyEntry> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| PolicyEntry {
            id: PolicyId(i as u32 + 1),
            preferences: *v,
            gamma,
        })
        .collect();
    let edges = match topology {
        Topology::FullyConnected => {
            let mut e = Vec::new();
            for a in &entries {
                for b in &entries {
                    if a.id < b.id {
                        e.push((a.id, b.id));
                    }
                }
            }
            e
        }
        Topology::Ring => {
            let k = entries.len();
            (0..k)
                .filter(|_| k >= 2)
                .map(|i| (entries[i].id, entries[(i + 1) % k].id))
                .filter(|(a, b)| a != b)
                .collect()
        }
        Topology::Explicit(e) => e.clone(),
    };
    PolicyBank::from_parts(entries, edges)
}

pub fn default_bank(gamma: f64) -> Result<PolicyBank> {
    let vectors: Vec<PreferenceVector> = default_bank_vectors().iter().map(|(_, v)| *v).collect();
    build_bank(&vectors, gamma, &Topology::FullyConnected)
}

impl PolicyBank {
    pub fn from_parts(entries: Vec<PolicyEntry>, edges: Vec<(PolicyId, PolicyId)>) -> Result<PolicyBank> {
        let mut v = Vec::new();
        if entries.len() < 2 {
            v.push(format!("bank needs at least 2 policies, got {}", entries.len()));
        }
        let mut ids = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !ids.insert(e.id) {
                v.push(format!("duplicate policy id {}", e.id));
            }
            if entries[..i].iter().any(|o| o.preferences == e.preferences) {
                v.push(format!("policy {} duplicates the preference vector {}", e.id, e.preferences));
            }
        }
        let mut adjacency: BTreeMap<PolicyId, BTreeSet<PolicyId>> =
            ids.iter().map(|&id| (id, BTreeSet::new())).collect();
        for (a, b) in edges {
            if a == b {
                v.push(format!("self-loop on {a}"));
                continue;
            }
            if !ids.contains(&a) || !ids.contains(&b) {
                v.push(format!("edge {a}-{b} references an unknown policy"));
                continue;
            }
            adjacency.get_mut(&a).unwrap().insert(b);
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        for (id, n) in &adjacency {
            if n.is_empty() {
                v.push(format!("{id} has no neighbors"));
            }
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let mut policies = Vec::with_capacity(entries.len());
        for e in entries {
            policies.push(Arc::new(Policy::new(e.id, e.preferences, e.gamma)?));
        }
        policies.sort_by_key(|p| p.id());
        Ok(PolicyBank {
            policies,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// Policies in ascending id order.
    pub fn policies(&self) -> &[Arc<Policy>] {
        &self.policies
    }

    pub fn ids(&self) -> impl Iterator<Item = PolicyId> + '_ {
        self.policies.iter().map(|p| p.id())
    }

    pub fn get(&self, id: PolicyId) -> Result<&Arc<Policy>> {
        self.policies
            .iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::usage(format!("policy {id} is not in the bank")))
    }

    /// Neighbors of `current` in ascending id order; never contains `current`.
    pub fn neighborhood(&self, current: PolicyId) -> Result<Vec<Arc<Policy>>> {
        let n = self
            .adjacency
            .get(&current)
            .ok_or_else(|| Error::usage(format!("policy {current} is not in the bank")))?;
        n.iter().map(|&id| self.get(id).cloned()).collect()
    }

    pub fn manifest(&self) -> BankManifest {
        let mut adjacency = Vec::new();
        for (a, ns) in &self.adjacency {
            for b in ns {
                if a < b {
                    adjacency.push((*a, *b));
                }
            }
        }
        BankManifest {
            version: BANK_SCHEMA_VERSION,
            policies: self
                .policies
                .iter()
                .map(|p| PolicyEntry {
                    id: p.id(),
                    preferences: p.preferences(),
                    gamma: p.gamma(),
                })
                .collect(),
            adjacency,
        }
    }

    pub fn from_manifest(m: BankManifest) -> Result<PolicyBank> {
        if m.version != BANK_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported bank manifest version {}",
                m.version
            )));
        }
        PolicyBank::from_parts(m.policies, m.adjacency)
    }

    /// Stable content hash of the manifest.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.manifest())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub id: PolicyId,
    pub preferences: PreferenceVector,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub version: u32,
    pub policies: Vec<PolicyEntry>,
    pub adjacency: Vec<(PolicyId, PolicyId)>,
}
