//! Three-stage study protocol: five feedback rounds followed by the
//! delegation and questionnaire stage.
//!
//! A [`Session`] is a phase machine. Each round moves through
//! `Observe -> Correct -> Demo -> Choose`; after the last round the session
//! waits in `Stage3` and then becomes `Complete`. Simulated runs and the
//! HTTP service drive the same machine, and [`replay`] re-drives it from a
//! stored record's participant inputs.

mod batch;
pub mod server;
mod store;

use std::collections::HashMap;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{build_feedback_boards, build_pool, make_demo, DemoPair, EvalPool, GapMode, Strategy};
use crate::error::{Error, Result};
use crate::eval::{Choice, Direction, RoundRecord, SessionSummary, Stage3Answers};
use crate::feedback::{select_update, Correction, FeedbackLog};
use crate::gridworld::{generate_board_with, rollout, BoardSpec, GenParams, Trajectory};
use crate::policy::{default_bank, Policy, PolicyBank, PolicyId, DEFAULT_GAMMA};
use crate::reward::{policy_value, trajectory_score, EVALUATION_WEIGHTS};
use crate::simuser::{ChoiceContext, SimUser, SimUserConfig, Stage3Context};
use crate::util::rng_stream;

pub use batch::{load_records, run_batch, summarize, BatchSpec};
pub use store::{SessionStore, DATA_DIR_ENV};

pub const SESSION_SCHEMA_VERSION: u32 = 1;
pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ROUNDS: u32 = 5;
/// Seed for generated labs when no manifests are given.
pub const DEFAULT_LAB_SEED: u64 = 2024;
pub const DEFAULT_IDLE_TIMEOUT_SECS: u64 = 30 * 60;

/// Shown before every demonstration.
pub const DISCLOSURE: &str = "Policy updates can improve or degrade performance.";

/// Shown instead of a demonstration in the control condition.
pub const CONTROL_NOTICE: &str = "The agent has been updated.";

const DEMO_STREAM: u64 = 3;
const INITIAL_POLICY_STREAM: u64 = 4;
const FEEDBACK_BOARD_STREAM: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackBoardMode {
    /// The lab's fixed feedback boards, cycled if there are fewer than rounds.
    #[default]
    Fixed,
    /// Fresh boards drawn from the session seed.
    PerSession,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Simulated { user: SimUserConfig },
    Live,
}

/// Everything that determines one session apart from participant input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub condition: Strategy,
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Drawn uniformly from the bank with the session seed when absent.
    #[serde(default)]
    pub initial_policy: Option<PolicyId>,
    #[serde(default)]
    pub feedback_boards: FeedbackBoardMode,
    #[serde(default)]
    pub gap_mode: GapMode,
    /// Pool score a participant is assumed to reach playing themselves.
    /// Defaults to the evaluation-optimal planner's pool score.
    #[serde(default)]
    pub self_play_baseline: Option<f64>,
    pub mode: Mode,
}

fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}

impl SessionConfig {
    pub fn simulated(condition: Strategy, seed: u64, user: SimUserConfig) -> Self {
        SessionConfig {
            condition,
            seed,
            rounds: DEFAULT_ROUNDS,
            initial_policy: None,
            feedback_boards: FeedbackBoardMode::Fixed,
            gap_mode: GapMode::Absolute,
            self_play_baseline: None,
            mode: Mode::Simulated { user },
        }
    }

    pub fn live(condition: Strategy, seed: u64) -> Self {
        SessionConfig {
            mode: Mode::Live,
            ..SessionConfig::simulated(condition, seed, SimUserConfig::new(crate::simuser::UserModel::Oracle))
        }
    }
}

/// Experiment config file: resource manifests plus the session template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub bank: String,
    pub pool: String,
    pub feedback_boards: String,
    pub session: SessionConfig,
    /// Conditions assigned to new live sessions in rotation; defaults to
    /// the template's condition.
    #[serde(default)]
    pub assign_conditions: Vec<Strategy>,
    #[serde(default = "default_timeout")]
    pub idle_timeout_secs: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_IDLE_TIMEOUT_SECS
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if cfg.version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported experiment config version {}", cfg.version)));
        }
        Ok(cfg)
    }

    /// Loads the manifests, resolving relative paths against `base`.
    pub fn lab(&self, base: &std::path::Path) -> Result<Lab> {
        Lab::from_files(
            &base.join(&self.bank),
            &base.join(&self.pool),
            &base.join(&self.feedback_boards),
        )
    }
}

/// Shared, read-only experiment resources: bank, pool, fixed feedback
/// boards and cached pool scores.
#[derive(Debug)]
pub struct Lab {
    bank: PolicyBank,
    pool: EvalPool,
    feedback_boards: Vec<BoardSpec>,
    evaluator: Policy,
    pool_values: RwLock<HashMap<PolicyId, f64>>,
}

impl Lab {
    pub fn new(bank: PolicyBank, pool: EvalPool, feedback_boards: Vec<BoardSpec>) -> Result<Lab> {
        if feedback_boards.is_empty() {
            return Err(Error::invalid("at least one feedback board is required"));
        }
        let mut ids: Vec<&str> = feedback_boards.iter().map(|b| b.id()).collect();
        ids.extend(pool.boards().iter().map(|b| b.id()));
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::invalid("feedback and pool board ids must be unique"));
        }
        Ok(Lab {
            bank,
            pool,
            feedback_boards,
            evaluator: Policy::evaluation_optimal(DEFAULT_GAMMA)?,
            pool_values: RwLock::new(HashMap::new()),
        })
    }

    /// Reads a bank manifest, a pool manifest and a JSON array of boards.
    pub fn from_files(bank: &std::path::Path, pool: &std::path::Path, feedback: &std::path::Path) -> Result<Lab> {
        let read = |p: &std::path::Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let bank = PolicyBank::from_manifest(serde_json::from_str(&read(bank)?)?)?;
        let pool: EvalPool = serde_json::from_str(&read(pool)?)?;
        let boards: Vec<BoardSpec> = serde_json::from_str(&read(feedback)?)?;
        Lab::new(bank, pool, boards)
    }

    /// Default bank, a pool and five feedback boards, all from `seed`.
    pub fn generate(seed: u64, params: &GenParams) -> Result<Lab> {
        let bank = default_bank(DEFAULT_GAMMA)?;
        let pool = build_pool(seed, params, &bank)?;
        let boards = build_feedback_boards(seed, params, DEFAULT_ROUNDS as usize)?;
        Lab::new(bank, pool, boards)
    }

    pub fn bank(&self) -> &PolicyBank {
        &self.bank
    }

    pub fn pool(&self) -> &EvalPool {
        &self.pool
    }

    pub fn feedback_boards(&self) -> &[BoardSpec] {
        &self.feedback_boards
    }

    /// Planner optimal under the evaluation weights.
    pub fn evaluator(&self) -> &Policy {
        &self.evaluator
    }

    pub fn bank_id(&self) -> String {
        self.bank.fingerprint()
    }

    /// Mean evaluation score of a bank policy over the pool, memoized.
    pub fn pool_value(&self, id: PolicyId) -> Result<f64> {
        if let Some(v) = self.pool_values.read().expect("pool value cache poisoned").get(&id) {
            return Ok(*v);
        }
        let v = policy_value(self.bank.get(id)?.as_ref(), self.pool.boards(), &EVALUATION_WEIGHTS)?;
        self.pool_values.write().expect("pool value cache poisoned").insert(id, v);
        Ok(v)
    }

    pub fn evaluator_pool_value(&self) -> Result<f64> {
        policy_value(&self.evaluator, self.pool.boards(), &EVALUATION_WEIGHTS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Observe,
    Correct,
    Demo,
    Choose,
    Stage3,
    Complete,
    Abandoned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Pending {
    observed: Trajectory,
    corrections: usize,
    new_policy: Option<PolicyId>,
    agreements: Vec<(PolicyId, usize)>,
    empty_log: bool,
    demo: Option<DemoPair>,
}

/// What the participant sees before choosing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoView {
    pub round: u32,
    pub disclosure: String,
    pub notice: Option<String>,
    pub demo: Option<DemoPair>,
}

/// Full audit of one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub version: u32,
    pub session_id: String,
    pub config: SessionConfig,
    pub bank_id: String,
    pub pool_id: String,
    pub initial_policy: PolicyId,
    pub feedback_boards: Vec<BoardSpec>,
    pub rounds: Vec<RoundRecord>,
    pub log: FeedbackLog,
    pub stage3: Option<Stage3Answers>,
    pub current_policy: PolicyId,
    pub final_generalized_score: Option<f64>,
    pub phase: Phase,
    pub complete: bool,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

impl SessionRecord {
    /// The record without wall-clock fields, as compared by [`replay`].
    pub fn derived_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("records serialize");
        if let Some(o) = v.as_object_mut() {
            o.remove("created_at_ms");
            o.remove("updated_at_ms");
        }
        serde_json::to_string(&v).expect("records serialize")
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct Session {
    id: String,
    config: SessionConfig,
    bank_id: String,
    pool_id: String,
    demo_rng: ChaCha8Rng,
    initial_policy: PolicyId,
    current: PolicyId,
    boards: Vec<BoardSpec>,
    log: FeedbackLog,
    rounds: Vec<RoundRecord>,
    phase: Phase,
    pending: Option<Pending>,
    stage3: Option<Stage3Answers>,
    final_score: Option<f64>,
    created_at_ms: u64,
    updated_at_ms: u64,
}

impl Session {
    pub fn new(lab: &Lab, id: impl Into<String>, config: SessionConfig) -> Result<Session> {
        if config.rounds == 0 {
            return Err(Error::invalid("a session needs at least one round"));
        }
        if let Mode::Simulated { user } = &config.mode {
            user.model.validate()?;
        }
        let initial_policy = match config.initial_policy {
            Some(id) => lab.bank().get(id)?.id(),
            None => {
                let ids: Vec<PolicyId> = lab.bank().ids().collect();
                let mut rng = rng_stream(config.seed, INITIAL_POLICY_STREAM);
                ids[rng.gen_range(0..ids.len())]
            }
        };
        let boards = match config.feedback_boards {
            FeedbackBoardMode::Fixed => {
                let fixed = lab.feedback_boards();
                (0..config.rounds as usize).map(|i| fixed[i % fixed.len()].clone()).collect()
            }
            FeedbackBoardMode::PerSession => {
                let mut rng = rng_stream(config.seed, FEEDBACK_BOARD_STREAM);
                let params = lab.pool().params().clone();
                (0..config.rounds)
                    .map(|i| generate_board_with(&mut rng, &params, &format!("s{}-feedback-{i}", config.seed)))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let now = now_ms();
        Ok(Session {
            id: id.into(),
            bank_id: lab.bank_id(),
            pool_id: lab.pool().id().to_string(),
            demo_rng: rng_stream(config.seed, DEMO_STREAM),
            initial_policy,
            current: initial_policy,
            boards,
            log: FeedbackLog::new(),
            rounds: Vec::new(),
            phase: Phase::Observe,
            pending: None,
            stage3: None,
            final_score: None,
            created_at_ms: now,
            updated_at_ms: now,
            config,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// 1-based index of the round in progress (or the next one).
    pub fn round(&self) -> u32 {
        self.rounds.len() as u32 + 1
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn current_policy(&self) -> PolicyId {
        self.current
    }

    pub fn feedback_board(&self) -> Option<&BoardSpec> {
        self.boards.get(self.rounds.len())
    }

    pub fn observed(&self) -> Option<&Trajectory> {
        self.pending.as_ref().map(|p| &p.observed)
    }

    fn expect_phase(&self, want: Phase, what: &str) -> Result<()> {
        if self.phase == want {
            Ok(())
        } else {
            Err(Error::State(format!(
                "{what} requires phase {want:?}, session is in {:?}",
                self.phase
            )))
        }
    }

    fn touch(&mut self) {
        self.updated_at_ms = now_ms();
    }

    /// Runs the incumbent on this round's feedback board.
    pub fn observe(&mut self, lab: &Lab) -> Result<&Trajectory> {
        self.expect_phase(Phase::Observe, "observe")?;
        let board = self.feedback_board().expect("observe phase implies a remaining round");
        let observed = rollout(lab.bank().get(self.current)?.as_ref(), board)?;
        self.pending = Some(Pending {
            observed,
            corrections: 0,
            new_policy: None,
            agreements: Vec::new(),
            empty_log: false,
            demo: None,
        });
        self.phase = Phase::Correct;
        self.touch();
        Ok(&self.pending.as_ref().unwrap().observed)
    }

    /// Appends this round's corrections, selects the update and prepares
    /// the demonstration.
    pub fn submit_corrections(&mut self, lab: &Lab, corrections: Vec<Correction>) -> Result<usize> {
        self.expect_phase(Phase::Correct, "submitting corrections")?;
        let board = self.boards[self.rounds.len()].clone();
        let pending = self.pending.as_ref().expect("correct phase implies an observed episode");
        let mut seen = std::collections::HashSet::new();
        for c in &corrections {
            let step = pending
                .observed
                .steps
                .get(c.step)
                .ok_or_else(|| Error::usage(format!("correction step {} beyond the episode", c.step)))?;
            if c.board_id != board.id()
                || c.state != step.state
                || c.agent_action != step.action
                || c.preferred_action == c.agent_action
                || !seen.insert(c.step)
            {
                return Err(Error::usage(format!("correction for step {} does not match the episode", c.step)));
            }
        }
        let n = corrections.len();
        self.log.extend(corrections);
        let selection = select_update(lab.bank(), self.current, &self.log, &self.boards)?;
        let old = lab.bank().get(self.current)?;
        let demo = make_demo(
            self.config.condition,
            &board,
            lab.pool(),
            old,
            &selection.chosen,
            &mut self.demo_rng,
            self.config.gap_mode,
        )?;
        let pending = self.pending.as_mut().unwrap();
        pending.corrections = n;
        pending.new_policy = Some(selection.chosen.id());
        pending.agreements = selection.agreements;
        pending.empty_log = selection.empty_log;
        pending.demo = demo;
        self.phase = Phase::Demo;
        self.touch();
        Ok(n)
    }

    /// The demonstration (or control notice). Moves `Demo -> Choose`; may be
    /// repeated while choosing.
    pub fn view_demo(&mut self) -> Result<DemoView> {
        if self.phase != Phase::Choose {
            self.expect_phase(Phase::Demo, "viewing the demonstration")?;
            self.phase = Phase::Choose;
            self.touch();
        }
        let pending = self.pending.as_ref().expect("demo phase implies a pending round");
        Ok(DemoView {
            round: self.round(),
            disclosure: DISCLOSURE.to_string(),
            notice: (!self.config.condition.shows_demo()).then(|| CONTROL_NOTICE.to_string()),
            demo: pending.demo.clone(),
        })
    }

    pub fn choice_context(&self, lab: &Lab) -> Result<ChoiceContext> {
        let pending = self.pending.as_ref().ok_or_else(|| Error::State("no pending round".into()))?;
        let new = pending.new_policy.ok_or_else(|| Error::State("no update selected yet".into()))?;
        Ok(ChoiceContext {
            generalized_old: lab.pool_value(self.current)?,
            generalized_new: lab.pool_value(new)?,
        })
    }

    pub fn choose(&mut self, lab: &Lab, choice: Choice) -> Result<&RoundRecord> {
        self.expect_phase(Phase::Choose, "choosing")?;
        match (self.config.condition.shows_demo(), choice) {
            (false, Choice::Auto) | (true, Choice::Adopt | Choice::Reject) => {}
            (false, _) => return Err(Error::usage("control rounds advance automatically")),
            (true, Choice::Auto) => return Err(Error::usage("choose adopt or reject")),
        }
        let pending = self.pending.take().expect("choose phase implies a pending round");
        let new_id = pending.new_policy.expect("update selected before choosing");
        let board = &self.boards[self.rounds.len()];
        let local_old = trajectory_score(&pending.observed, &EVALUATION_WEIGHTS);
        let local_new = trajectory_score(&rollout(lab.bank().get(new_id)?.as_ref(), board)?, &EVALUATION_WEIGHTS);
        let generalized_old = lab.pool_value(self.current)?;
        let generalized_new = lab.pool_value(new_id)?;
        let record = RoundRecord {
            round: self.round(),
            old_policy: self.current,
            new_policy: new_id,
            feedback_board_id: board.id().to_string(),
            observed: pending.observed,
            corrections: pending.corrections,
            empty_log: pending.empty_log,
            agreements: pending.agreements,
            demo: pending.demo,
            choice,
            local_old,
            local_new,
            generalized_old,
            generalized_new,
            direction: Direction::of(generalized_old, generalized_new),
        };
        self.current = record.resulting_policy();
        self.rounds.push(record);
        self.phase = if self.rounds.len() as u32 >= self.config.rounds {
            Phase::Stage3
        } else {
            Phase::Observe
        };
        self.touch();
        Ok(self.rounds.last().unwrap())
    }

    pub fn stage3_context(&self, lab: &Lab) -> Result<Stage3Context> {
        let last = self.rounds.last().ok_or_else(|| Error::State("no rounds played".into()))?;
        let last_board = self
            .boards
            .iter()
            .find(|b| b.id() == last.feedback_board_id)
            .expect("round boards belong to the session");
        let final_local_last = trajectory_score(
            &rollout(lab.bank().get(self.current)?.as_ref(), last_board)?,
            &EVALUATION_WEIGHTS,
        );
        let baseline_local_last = trajectory_score(&rollout(lab.evaluator(), last_board)?, &EVALUATION_WEIGHTS);
        let baseline = match self.config.self_play_baseline {
            Some(b) => b,
            None => lab.evaluator_pool_value()?,
        };
        let demos: Vec<&DemoPair> = self.rounds.iter().filter_map(|r| r.demo.as_ref()).collect();
        Ok(Stage3Context {
            condition: self.config.condition,
            final_policy: self.current,
            final_generalized: lab.pool_value(self.current)?,
            baseline_generalized: baseline,
            final_local_last,
            baseline_local_last,
            demos_shown: demos.len(),
            demos_with_difference: demos.iter().filter(|d| d.score_new != d.score_old).count(),
        })
    }

    pub fn submit_stage3(&mut self, lab: &Lab, answers: Stage3Answers) -> Result<()> {
        self.expect_phase(Phase::Stage3, "stage-3 answers")?;
        answers.validate(self.config.condition)?;
        self.final_score = Some(lab.pool_value(self.current)?);
        self.stage3 = Some(answers);
        self.phase = Phase::Complete;
        self.touch();
        Ok(())
    }

    /// Marks an unfinished session as abandoned.
    pub fn abandon(&mut self) {
        if self.phase != Phase::Complete {
            self.phase = Phase::Abandoned;
            self.pending = None;
            self.touch();
        }
    }

    pub fn record(&self) -> SessionRecord {
        SessionRecord {
            version: SESSION_SCHEMA_VERSION,
            session_id: self.id.clone(),
            config: self.config.clone(),
            bank_id: self.bank_id.clone(),
            pool_id: self.pool_id.clone(),
            initial_policy: self.initial_policy,
            feedback_boards: self.boards.clone(),
            rounds: self.rounds.clone(),
            log: self.log.clone(),
            stage3: self.stage3.clone(),
            current_policy: self.current,
            final_generalized_score: self.final_score,
            phase: self.phase,
            complete: self.phase == Phase::Complete,
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
        }
    }
}

/// A source of participant decisions for [`run_round`] and [`run_session`].
pub trait Participant {
    fn corrections(&mut self, board: &BoardSpec, observed: &Trajectory) -> Result<Vec<Correction>>;
    fn choose(&mut self, demo: Option<&DemoPair>, ctx: &ChoiceContext) -> Result<Choice>;
    fn stage3(&mut self, ctx: &Stage3Context) -> Result<Stage3Answers>;
}

impl Participant for SimUser {
    fn corrections(&mut self, board: &BoardSpec, observed: &Trajectory) -> Result<Vec<Correction>> {
        self.sim_feedback(observed, board)
    }

    fn choose(&mut self, demo: Option<&DemoPair>, ctx: &ChoiceContext) -> Result<Choice> {
        self.sim_choice(demo, ctx)
    }

    fn stage3(&mut self, ctx: &Stage3Context) -> Result<Stage3Answers> {
        Ok(self.sim_stage3(ctx))
    }
}

/// Feeds a stored record's participant inputs back in order.
pub struct Replayer {
    corrections: std::vec::IntoIter<Vec<Correction>>,
    choices: std::vec::IntoIter<Choice>,
    stage3: Option<Stage3Answers>,
}

impl Replayer {
    pub fn from_record(record: &SessionRecord) -> Result<Replayer> {
        let mut per_round = Vec::with_capacity(record.rounds.len());
        let mut rest = record.log.as_slice();
        for r in &record.rounds {
            if r.corrections > rest.len() {
                return Err(Error::Data("round correction counts exceed the log".into()));
            }
            let (now, later) = rest.split_at(r.corrections);
            per_round.push(now.to_vec());
            rest = later;
        }
        Ok(Replayer {
            corrections: per_round.into_iter(),
            choices: record.rounds.iter().map(|r| r.choice).collect::<Vec<_>>().into_iter(),
            stage3: record.stage3.clone(),
        })
    }
}

impl Participant for Replayer {
    fn corrections(&mut self, _: &BoardSpec, _: &Trajectory) -> Result<Vec<Correction>> {
        self.corrections
            .next()
            .ok_or_else(|| Error::Data("record has no corrections for this round".into()))
    }

    fn choose(&mut self, _: Option<&DemoPair>, _: &ChoiceContext) -> Result<Choice> {
        self.choices
            .next()
            .ok_or_else(|| Error::Data("record has no choice for this round".into()))
    }

    fn stage3(&mut self, _: &Stage3Context) -> Result<Stage3Answers> {
        self.stage3
            .take()
            .ok_or_else(|| Error::Data("record has no stage-3 answers".into()))
    }
}

/// Observe, correct, select, demonstrate and choose for the next round.
pub fn run_round(session: &mut Session, lab: &Lab, participant: &mut dyn Participant) -> Result<RoundRecord> {
    let board = session
        .feedback_board()
        .cloned()
        .ok_or_else(|| Error::State("all rounds already played".into()))?;
    let observed = session.observe(lab)?.clone();
    let corrections = participant.corrections(&board, &observed)?;
    session.submit_corrections(lab, corrections)?;
    let view = session.view_demo()?;
    let choice = if session.config().condition.shows_demo() {
        let ctx = session.choice_context(lab)?;
        participant.choose(view.demo.as_ref(), &ctx)?
    } else {
        Choice::Auto
    };
    Ok(session.choose(lab, choice)?.clone())
}

pub fn run_session_with(
    lab: &Lab,
    id: &str,
    config: SessionConfig,
    participant: &mut dyn Participant,
) -> Result<SessionRecord> {
    let mut session = Session::new(lab, id, config)?;
    while session.phase() == Phase::Observe {
        run_round(&mut session, lab, participant)?;
    }
    let ctx = session.stage3_context(lab)?;
    let answers = participant.stage3(&ctx)?;
    session.submit_stage3(lab, answers)?;
    Ok(session.record())
}

/// Runs a simulated session end to end.
pub fn run_session(lab: &Lab, id: &str, config: SessionConfig) -> Result<SessionRecord> {
    let Mode::Simulated { user } = &config.mode else {
        return Err(Error::usage("live sessions are driven through the service"));
    };
    let mut user = SimUser::new(user, config.seed)?;
    run_session_with(lab, id, config, &mut user)
}

/// Outcome of re-deriving a record from its config and participant inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub session_id: String,
    pub matches: bool,
    pub detail: Option<String>,
}

pub fn replay(lab: &Lab, record: &SessionRecord) -> Result<ReplayOutcome> {
    let mismatch = |d: String| ReplayOutcome {
        session_id: record.session_id.clone(),
        matches: false,
        detail: Some(d),
    };
    if record.bank_id != lab.bank_id() || record.pool_id != lab.pool().id() {
        return Ok(mismatch("record was produced with a different bank or pool".into()));
    }
    if !record.complete {
        return Ok(mismatch("record is incomplete".into()));
    }
    let mut inputs = Replayer::from_record(record)?;
    let again = match run_session_with(lab, &record.session_id, record.config.clone(), &mut inputs) {
        Ok(r) => r,
        Err(e) => return Ok(mismatch(format!("re-execution failed: {e}"))),
    };
    if again.derived_json() == record.derived_json() {
        Ok(ReplayOutcome {
            session_id: record.session_id.clone(),
            matches: true,
            detail: None,
        })
    } else {
        Ok(mismatch(first_difference(record, &again)))
    }
}

fn first_difference(a: &SessionRecord, b: &SessionRecord) -> String {
    let (va, vb) = (
        serde_json::to_value(a).unwrap_or_default(),
        serde_json::to_value(b).unwrap_or_default(),
    );
    if let (Some(oa), Some(ob)) = (va.as_object(), vb.as_object()) {
        for (k, x) in oa {
            if k.ends_with("_ms") {
                continue;
            }
            if ob.get(k) != Some(x) {
                return format!("field {k} differs");
            }
        }
    }
    "records differ".into()
}

/// Pool score of the final policy recomputed from the bank.
pub fn final_agent_score(record: &SessionRecord, lab: &Lab) -> Result<f64> {
    if !record.complete {
        return Err(Error::usage("final agent score needs a completed session"));
    }
    lab.pool_value(record.current_policy)
}

impl SessionRecord {
    pub fn summary(&self) -> Result<SessionSummary> {
        summarize(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simuser::UserModel;
    use std::sync::OnceLock;

    pub(crate) fn lab() -> &'static Lab {
        static LAB: OnceLock<Lab> = OnceLock::new();
        LAB.get_or_init(|| Lab::generate(2024, &GenParams::default()).unwrap())
    }

    fn oracle() -> SimUserConfig {
        SimUserConfig::new(UserModel::Oracle)
    }

    #[test]
    fn control_session_auto_adopts() {
        let rec = run_session(lab(), "c", SessionConfig::simulated(Strategy::Control, 1, oracle())).unwrap();
        assert!(rec.complete);
        assert_eq!(rec.rounds.len(), 5);
        assert!(rec.rounds.iter().all(|r| r.choice == Choice::Auto && r.demo.is_none()));
        assert!(rec.stage3.as_ref().unwrap().explanation.is_none());
        for w in rec.rounds.windows(2) {
            assert_eq!(w[1].old_policy, w[0].new_policy);
        }
    }

    #[test]
    fn demo_sessions_answer_explanation_items() {
        for c in [Strategy::Same, Strategy::Random, Strategy::SalientContrast] {
            let rec = run_session(lab(), "d", SessionConfig::simulated(c, 2, oracle())).unwrap();
            assert!(rec.rounds.iter().all(|r| r.demo.is_some() && r.choice != Choice::Auto));
            assert_eq!(rec.stage3.as_ref().unwrap().explanation.map(|e| e.len()), Some(4));
        }
    }

    #[test]
    fn phase_order_enforced() {
        let l = lab();
        let mut s = Session::new(l, "p", SessionConfig::live(Strategy::Same, 3)).unwrap();
        assert!(matches!(s.submit_corrections(l, vec![]), Err(Error::State(_))));
        assert!(matches!(s.view_demo(), Err(Error::State(_))));
        assert!(matches!(s.choose(l, Choice::Adopt), Err(Error::State(_))));
        s.observe(l).unwrap();
        assert!(matches!(s.observe(l), Err(Error::State(_))));
        s.submit_corrections(l, vec![]).unwrap();
        assert!(matches!(s.choose(l, Choice::Adopt), Err(Error::State(_))));
        s.view_demo().unwrap();
        s.view_demo().unwrap();
        assert!(s.choose(l, Choice::Auto).is_err());
        let r = s.choose(l, Choice::Reject).unwrap();
        assert!(r.empty_log);
        assert_eq!(s.phase(), Phase::Observe);
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn empty_round_still_selects_update() {
        let l = lab();
        let mut s = Session::new(
            l,
            "e",
            SessionConfig {
                initial_policy: Some(PolicyId(3)),
                ..SessionConfig::live(Strategy::Control, 4)
            },
        )
        .unwrap();
        s.observe(l).unwrap();
        s.submit_corrections(l, vec![]).unwrap();
        s.view_demo().unwrap();
        let r = s.choose(l, Choice::Auto).unwrap();
        assert!(r.empty_log);
        assert_eq!(r.new_policy, PolicyId(1));
        assert_eq!(s.current_policy(), PolicyId(1));
    }

    #[test]
    fn mismatched_correction_rejected() {
        let l = lab();
        let mut s = Session::new(l, "m", SessionConfig::live(Strategy::Same, 5)).unwrap();
        let t = s.observe(l).unwrap().clone();
        let step = &t.steps[0];
        let bogus = Correction {
            board_id: t.board_id.clone(),
            step: 0,
            state: step.state,
            agent_action: step.action,
            preferred_action: step.action,
        };
        assert!(matches!(s.submit_corrections(l, vec![bogus]), Err(Error::Usage(_))));
        assert_eq!(s.phase(), Phase::Correct);
    }

    #[test]
    fn replay_reproduces_record() {
        let cfg = SessionConfig {
            feedback_boards: FeedbackBoardMode::PerSession,
            ..SessionConfig::simulated(Strategy::Random, 77, SimUserConfig::new(UserModel::Noisy { epsilon: 0.2 }))
        };
        let rec = run_session(lab(), "r", cfg).unwrap();
        let out = replay(lab(), &rec).unwrap();
        assert!(out.matches, "{:?}", out.detail);

        let mut tampered = rec.clone();
        tampered.rounds[0].local_new += 1.0;
        assert!(!replay(lab(), &tampered).unwrap().matches);
    }

    #[test]
    fn all_rejected_keeps_initial_policy() {
        struct Rejector(SimUser);
        impl Participant for Rejector {
            fn corrections(&mut self, b: &BoardSpec, t: &Trajectory) -> Result<Vec<Correction>> {
                self.0.corrections(b, t)
            }
            fn choose(&mut self, _: Option<&DemoPair>, _: &ChoiceContext) -> Result<Choice> {
                Ok(Choice::Reject)
            }
            fn stage3(&mut self, c: &Stage3Context) -> Result<Stage3Answers> {
                self.0.stage3(c)
            }
        }
        let cfg = SessionConfig::simulated(Strategy::Same, 9, oracle());
        let mut p = Rejector(SimUser::new(&oracle(), 9).unwrap());
        let rec = run_session_with(lab(), "x", cfg, &mut p).unwrap();
        assert_eq!(rec.current_policy, rec.initial_policy);
        let expected = lab().pool_value(rec.initial_policy).unwrap();
        assert_eq!(final_agent_score(&rec, lab()).unwrap(), expected);
        assert_eq!(rec.final_generalized_score, Some(expected));
    }

    #[test]
    fn incomplete_session_has_no_final_score() {
        let l = lab();
        let s = Session::new(l, "i", SessionConfig::live(Strategy::Same, 1)).unwrap();
        let rec = s.record();
        assert!(!rec.complete);
        assert!(final_agent_score(&rec, l).is_err());
    }

    #[test]
    fn initial_policy_drawn_from_seed() {
        let l = lab();
        let a = Session::new(l, "a", SessionConfig::live(Strategy::Same, 10)).unwrap();
        let b = Session::new(l, "b", SessionConfig::live(Strategy::Same, 10)).unwrap();
        assert_eq!(a.current_policy(), b.current_policy());
    }
}
