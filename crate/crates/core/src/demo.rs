//! Demonstration strategies, the curated evaluation pool and side-by-side
//! demo assembly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{generate_board_with, rollout, BoardSpec, GenParams, Trajectory};
use crate::policy::{Policy, PolicyBank, PolicyId};
use crate::reward::{trajectory_score, EVALUATION_WEIGHTS};
use crate::util::{fingerprint, rng_stream};

/// Number of boards in the evaluation pool.
pub const POOL_SIZE: usize = 18;

pub const POOL_SCHEMA_VERSION: u32 = 1;

/// Candidate boards drawn per pool slot before giving up.
pub const POOL_ATTEMPTS_PER_BOARD: usize = 1000;

const POOL_STREAM: u64 = 1;
const FEEDBACK_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Control,
    Same,
    Random,
    SalientContrast,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Control,
        Strategy::Same,
        Strategy::Random,
        Strategy::SalientContrast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Control => "control",
            Strategy::Same => "same",
            Strategy::Random => "random",
            Strategy::SalientContrast => "salient_contrast",
        }
    }

    /// Whether the participant sees a demo and makes an adopt/reject choice.
    pub fn shows_demo(self) -> bool {
        self != Strategy::Control
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "control" => Ok(Strategy::Control),
            "same" => Ok(Strategy::Same),
            "random" => Ok(Strategy::Random),
            "salient_contrast" | "salient" => Ok(Strategy::SalientContrast),
            other => Err(Error::usage(format!("unknown strategy {other:?}"))),
        }
    }
}

/// How the salient-contrast strategy measures the score gap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// `|score_new - score_old|`
    #[default]
    Absolute,
    /// `score_new - score_old`
    Signed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolDoc", into = "PoolDoc")]
pub struct EvalPool {
    id: String,
    seed: u64,
    params: GenParams,
    boards: Vec<BoardSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoolDoc {
    version: u32,
    id: String,
    seed: u64,
    params: GenParams,
    boards: Vec<BoardSpec>,
}

impl From<EvalPool> for PoolDoc {
    fn from(p: EvalPool) -> Self {
        PoolDoc {
            version: POOL_SCHEMA_VERSION,
            id: p.id,
            seed: p.seed,
            params: p.params,
            boards: p.boards,
        }
    }
}

impl TryFrom<PoolDoc> for EvalPool {
    type Error = Error;

    fn try_from(d: PoolDoc) -> Result<Self> {
        if d.version != POOL_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported pool manifest version {}", d.version)));
        }
        EvalPool::new(d.id, d.seed, d.params, d.boards)
    }
}

impl EvalPool {
    pub fn new(id: String, seed: u64, params: GenParams, boards: Vec<BoardSpec>) -> Result<EvalPool> {
        let mut v = Vec::new();
        if boards.len() != POOL_SIZE {
            v.push(format!("pool must hold {POOL_SIZE} boards, got {}", boards.len()));
        }
        for (i, b) in boards.iter().enumerate() {
            for (j, o) in boards[..i].iter().enumerate() {
                if b.same_layout(o) {
                    v.push(format!("pool boards {j} and {i} share a layout"));
                }
                if b.id() == o.id() {
                    v.push(format!("pool boards {j} and {i} share id {}", b.id()));
                }
            }
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        Ok(EvalPool {
            id,
            seed,
            params,
            boards,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    pub fn boards(&self) -> &[BoardSpec] {
        &self.boards
    }

    pub fn len(&self) -> usize {
        self.boards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boards.is_empty()
    }

    /// Checks that every board separates at least one pair of bank policies
    /// by evaluation score.
    pub fn verify_distinguishing(&self, bank: &PolicyBank) -> Result<()> {
        let mut v = Vec::new();
        for (i, b) in self.boards.iter().enumerate() {
            if !distinguishes(b, bank)? {
                v.push(format!("pool board {i} ({}) does not separate any policy pair", b.id()));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serialization is infallible")
    }
}

fn distinguishes(board: &BoardSpec, bank: &PolicyBank) -> Result<bool> {
    let mut first = None;
    for p in bank.policies() {
        let s = trajectory_score(&rollout(p.as_ref(), board)?, &EVALUATION_WEIGHTS);
        match first {
            None => first = Some(s),
            Some(f) if f != s => return Ok(true),
            Some(_) => {}
        }
    }
    Ok(false)
}

/// Draws the evaluation pool. Candidates that repeat an accepted layout or
/// on which every bank policy scores the same are redrawn.
pub fn build_pool(seed: u64, params: &GenParams, bank: &PolicyBank) -> Result<EvalPool> {
    let mut rng = rng_stream(seed, POOL_STREAM);
    let mut boards: Vec<BoardSpec> = Vec::with_capacity(POOL_SIZE);
    for i in 0..POOL_SIZE {
        let id = format!("pool-{i:02}");
        let mut accepted = None;
        for _ in 0..POOL_ATTEMPTS_PER_BOARD {
            let b = generate_board_with(&mut rng, params, &id)?;
            if boards.iter().any(|o| o.same_layout(&b)) {
                continue;
            }
            if distinguishes(&b, bank)? {
                accepted = Some(b);
                break;
            }
        }
        boards.push(accepted.ok_or_else(|| Error::Generation {
            attempts: POOL_ATTEMPTS_PER_BOARD,
            reason: format!("no distinguishing board found for pool slot {i}"),
        })?);
    }
    let id = format!("pool-{}", fingerprint(&(seed, params, &boards)));
    EvalPool::new(id, seed, params.clone(), boards)
}

/// Fixed per-round feedback boards generated alongside a pool.
pub fn build_feedback_boards(seed: u64, params: &GenParams, count: usize) -> Result<Vec<BoardSpec>> {
    let mut rng = rng_stream(seed, FEEDBACK_STREAM);
    (0..count)
        .map(|i| generate_board_with(&mut rng, params, &format!("feedback-{i}")))
        .collect()
}

/// A board chosen for demonstration and where it came from.
#[derive(Clone, Copy, Debug)]
pub struct SelectedBoard<'a> {
    pub board: &'a BoardSpec,
    pub pool_index: Option<usize>,
}

/// Evaluation-score gap of `new` over `old` on every pool board.
pub fn pool_gaps(pool: &EvalPool, old: &Policy, new: &Policy, mode: GapMode) -> Result<Vec<f64>> {
    pool.boards()
        .iter()
        .map(|b| {
            let so = trajectory_score(&rollout(old, b)?, &EVALUATION_WEIGHTS);
            let sn = trajectory_score(&rollout(new, b)?, &EVALUATION_WEIGHTS);
            Ok(match mode {
                GapMode::Absolute => (sn - so).abs(),
                GapMode::Signed => sn - so,
            })
        })
        .collect()
}

pub fn select_board<'a, R: Rng + ?Sized>(
    strategy: Strategy,
    feedback_board: &'a BoardSpec,
    pool: &'a EvalPool,
    old: &Policy,
    new: &Policy,
    rng: &mut R,
    mode: GapMode,
) -> Result<Option<SelectedBoard<'a>>> {
    match strategy {
        Strategy::Control => Ok(None),
        Strategy::Same => Ok(Some(SelectedBoard {
            board: feedback_board,
            pool_index: None,
        })),
        Strategy::Random => {
            if pool.is_empty() {
                return Err(Error::usage("random demonstration needs a non-empty pool"));
            }
            let i = rng.gen_range(0..pool.len());
            Ok(Some(SelectedBoard {
                board: &pool.boards()[i],
                pool_index: Some(i),
            }))
        }
        Strategy::SalientContrast => {
            if pool.is_empty() {
                return Err(Error::usage("salient-contrast demonstration needs a non-empty pool"));
            }
            let gaps = pool_gaps(pool, old, new, mode)?;
            let mut best = 0;
            for (i, g) in gaps.iter().enumerate() {
                if *g > gaps[best] {
                    best = i;
                }
            }
            Ok(Some(SelectedBoard {
                board: &pool.boards()[best],
                pool_index: Some(best),
            }))
        }
    }
}

/// Side-by-side rollouts of the incumbent and candidate on one board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoPair {
    pub strategy: Strategy,
    pub board: BoardSpec,
    pub pool_index: Option<usize>,
    pub old_policy: PolicyId,
    pub new_policy: PolicyId,
    pub traj_old: Trajectory,
    pub traj_new: Trajectory,
    pub score_old: f64,
    pub score_new: f64,
}

impl DemoPair {
    /// Re-derives both trajectories' scores and checks the board binding.
    pub fn verify(&self) -> Result<()> {
        self.traj_old.verify(&self.board)?;
        self.traj_new.verify(&self.board)?;
        let so = trajectory_score(&self.traj_old, &EVALUATION_WEIGHTS);
        let sn = trajectory_score(&self.traj_new, &EVALUATION_WEIGHTS);
        if so != self.score_old || sn != self.score_new {
            return Err(Error::Data("demo scores do not match their trajectories".into()));
        }
        Ok(())
    }
}

pub fn make_demo<R: Rng + ?Sized>(
    strategy: Strategy,
    feedback_board: &BoardSpec,
    pool: &EvalPool,
    old: &Policy,
    new: &Policy,
    rng: &mut R,
    mode: GapMode,
) -> Result<Option<DemoPair>> {
    let Some(sel) = select_board(strategy, feedback_board, pool, old, new, rng, mode)? else {
        return Ok(None);
    };
    let traj_old = rollout(old, sel.board)?;
    let traj_new = rollout(new, sel.board)?;
    Ok(Some(DemoPair {
        strategy,
        board: sel.board.clone(),
        pool_index: sel.pool_index,
        old_policy: old.id(),
        new_policy: new.id(),
        score_old: trajectory_score(&traj_old, &EVALUATION_WEIGHTS),
        score_new: trajectory_score(&traj_new, &EVALUATION_WEIGHTS),
        traj_old,
        traj_new,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{default_bank, DEFAULT_GAMMA};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn fixture() -> &'static (PolicyBank, EvalPool) {
        static F: OnceLock<(PolicyBank, EvalPool)> = OnceLock::new();
        F.get_or_init(|| {
            let bank = default_bank(DEFAULT_GAMMA).unwrap();
            let pool = build_pool(42, &GenParams::default(), &bank).unwrap();
            (bank, pool)
        })
    }

    #[test]
    fn pool_is_valid_and_deterministic() {
        let (bank, pool) = fixture();
        assert_eq!(pool.len(), POOL_SIZE);
        pool.verify_distinguishing(bank).unwrap();
        let again = build_pool(42, &GenParams::default(), bank).unwrap();
        assert_eq!(again.to_json(), pool.to_json());
        let parsed: EvalPool = serde_json::from_str(&pool.to_json()).unwrap();
        assert_eq!(&parsed, pool);
    }

    #[test]
    fn pool_manifest_rejects_wrong_size() {
        let (_, pool) = fixture();
        let mut v: serde_json::Value = serde_json::from_str(&pool.to_json()).unwrap();
        v["boards"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<EvalPool>(v).is_err());
    }

    #[test]
    fn strategy_board_choice() {
        let (bank, pool) = fixture();
        let fb = crate::gridworld::generate_board(99, &GenParams::default()).unwrap();
        let old = bank.get(PolicyId(1)).unwrap();
        let new = bank.get(PolicyId(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = GapMode::Absolute;
        assert!(select_board(Strategy::Control, &fb, pool, old, new, &mut rng, m).unwrap().is_none());
        let same = select_board(Strategy::Same, &fb, pool, old, new, &mut rng, m).unwrap().unwrap();
        assert_eq!(same.board, &fb);
        assert_eq!(same.pool_index, None);
        let r = select_board(Strategy::Random, &fb, pool, old, new, &mut rng, m).unwrap().unwrap();
        assert!(r.pool_index.unwrap() < POOL_SIZE);
    }

    #[test]
    fn salient_with_identical_policies_takes_first_board() {
        let (bank, pool) = fixture();
        let fb = &pool.boards()[3];
        let p = bank.get(PolicyId(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_board(Strategy::SalientContrast, fb, pool, p, p, &mut rng, GapMode::Absolute)
            .unwrap()
            .unwrap();
        assert_eq!(s.pool_index, Some(0));
    }

    #[test]
    fn demo_pairs_are_consistent() {
        let (bank, pool) = fixture();
        let fb = crate::gridworld::generate_board(5, &GenParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let old = bank.get(PolicyId(6)).unwrap();
        let new = bank.get(PolicyId(2)).unwrap();
        assert!(make_demo(Strategy::Control, &fb, pool, old, new, &mut rng, GapMode::Absolute)
            .unwrap()
            .is_none());
        for s in [Strategy::Same, Strategy::Random, Strategy::SalientContrast] {
            let d = make_demo(s, &fb, pool, old, new, &mut rng, GapMode::Absolute).unwrap().unwrap();
            assert_eq!(d.traj_old.board_id, d.traj_new.board_id);
            d.verify().unwrap();
        }
    }

    #[test]
    fn signed_gap_prefers_improvement() {
        let (bank, pool) = fixture();
        let old = bank.get(PolicyId(1)).unwrap();
        let new = bank.get(PolicyId(4)).unwrap();
        let gaps = pool_gaps(pool, old, new, GapMode::Signed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_board(Strategy::SalientContrast, &pool.boards()[0], pool, old, new, &mut rng, GapMode::Signed)
            .unwrap()
            .unwrap();
        let max = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(gaps[s.pool_index.unwrap()], max);
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
