//! JSON-over-HTTP service for live sessions under `/v1/`.
//!
//! Mutating endpoints accept an optional idempotency `token`; a repeated
//! token returns the first response unchanged.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State as AxState};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Lab, Phase, Session, SessionConfig, SessionStore};
use crate::demo::{build_feedback_boards, Strategy};
use crate::error::Error;
use crate::eval::{Choice, Stage3Answers};
use crate::feedback::{diff_corrections, StepEdits};
use crate::gridworld::{step, Action, BallSet, BoardSpec, State, StepEvents, Trajectory};
use crate::reward::EVALUATION_WEIGHTS;

const PRACTICE_BOARDS: usize = 3;
const PRACTICE_SEED: u64 = 0x5eed;

struct Live {
    session: Session,
    last_active: Instant,
    tokens: HashMap<String, Value>,
}

pub struct AppState {
    lab: Arc<Lab>,
    store: SessionStore,
    template: SessionConfig,
    assign: Vec<Strategy>,
    idle_timeout: Duration,
    next: AtomicU64,
    practice: Vec<BoardSpec>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Live>>>>,
}

impl AppState {
    pub fn new(
        lab: Arc<Lab>,
        store: SessionStore,
        template: SessionConfig,
        assign: Vec<Strategy>,
        idle_timeout: Duration,
    ) -> crate::Result<Arc<AppState>> {
        let mut practice = build_feedback_boards(PRACTICE_SEED, lab.pool().params(), PRACTICE_BOARDS)?;
        for (i, b) in practice.iter_mut().enumerate() {
            *b = b.with_id(format!("practice-{i}"));
        }
        Ok(Arc::new(AppState {
            lab,
            store,
            assign: if assign.is_empty() { vec![template.condition] } else { assign },
            template,
            idle_timeout,
            next: AtomicU64::new(0),
            practice,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    fn live(&self, id: &str) -> Result<Arc<Mutex<Live>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::from(Error::NotFound(format!("session {id}"))))
    }

    /// Abandons and persists sessions idle past the timeout.
    pub fn sweep(&self) {
        let all: Vec<_> = self.sessions.lock().expect("session table poisoned").values().cloned().collect();
        for live in all {
            let mut l = live.lock().expect("session poisoned");
            self.expire(&mut l);
        }
    }

    fn expire(&self, l: &mut Live) {
        let open = !matches!(l.session.phase(), Phase::Complete | Phase::Abandoned);
        if open && l.last_active.elapsed() > self.idle_timeout {
            l.session.abandon();
            if let Err(e) = self.store.save(&l.session.record()) {
                log::error!("persisting abandoned session {}: {e}", l.session.id());
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            Error::Usage(_) => (StatusCode::BAD_REQUEST, "usage"),
            Error::Json(_) => (StatusCode::BAD_REQUEST, "json"),
            Error::State(_) => (StatusCode::CONFLICT, "state"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Data(_) => (StatusCode::UNPROCESSABLE_ENTITY, "data"),
            Error::Generation { .. } | Error::Resource { .. } | Error::Io { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.kind, "message": self.message })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

type Body<T> = Result<Json<T>, JsonRejection>;

fn body<T>(b: Body<T>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        kind: "body",
        message: e.body_text(),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_status))
        .route("/v1/sessions/{id}/round", get(round))
        .route("/v1/sessions/{id}/corrections", post(corrections))
        .route("/v1/sessions/{id}/demo", get(demo))
        .route("/v1/sessions/{id}/choice", post(choice))
        .route("/v1/sessions/{id}/stage3", get(stage3_prompt).post(stage3))
        .route("/v1/sessions/{id}/abandon", post(abandon))
        .route("/v1/sessions/{id}/record", get(record))
        .route("/v1/practice/boards", get(practice_boards))
        .route("/v1/practice/step", post(practice_step))
        .with_state(state)
}

/// Serves until ctrl-c, sweeping idle sessions once a minute.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let sweeper = Arc::clone(&state);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

/// Runs `f` on a live session, handling expiry, idempotency and
/// persistence.
fn with_session<T: Serialize>(
    app: &AppState,
    id: &str,
    token: Option<&str>,
    mutates: bool,
    f: impl FnOnce(&mut Session, &Lab) -> crate::Result<T>,
) -> ApiResult<Json<Value>> {
    let live = app.live(id)?;
    let mut l = live.lock().expect("session poisoned");
    app.expire(&mut l);
    if let Some(v) = token.and_then(|t| l.tokens.get(t)) {
        return Ok(Json(v.clone()));
    }
    if l.session.phase() == Phase::Abandoned {
        return Err(ApiError {
            status: StatusCode::GONE,
            kind: "abandoned",
            message: format!("session {id} was abandoned"),
        });
    }
    l.last_active = Instant::now();
    let before = l.session.phase();
    let out = f(&mut l.session, &app.lab)?;
    let v = serde_json::to_value(out).map_err(Error::from)?;
    if mutates || l.session.phase() != before {
        app.store.save(&l.session.record())?;
    }
    if let Some(t) = token {
        l.tokens.insert(t.to_string(), v.clone());
    }
    Ok(Json(v))
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    pub condition: Option<Strategy>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub condition: Strategy,
    pub phase: Phase,
    pub round: u32,
    pub rounds: u32,
    pub shows_demo: bool,
}

fn status_of(s: &Session) -> SessionStatus {
    SessionStatus {
        session_id: s.id().to_string(),
        condition: s.config().condition,
        phase: s.phase(),
        round: s.round().min(s.config().rounds),
        rounds: s.config().rounds,
        shows_demo: s.config().condition.shows_demo(),
    }
}

async fn create_session(
    AxState(app): AxState<Arc<AppState>>,
    raw: axum::body::Bytes,
) -> ApiResult<(StatusCode, Json<SessionStatus>)> {
    // An empty body means "assign everything".
    let req: CreateRequest = if raw.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&raw).map_err(Error::from)?
    };
    let n = app.next.fetch_add(1, Ordering::Relaxed);
    let condition = req.condition.unwrap_or(app.assign[n as usize % app.assign.len()]);
    let uuid = uuid::Uuid::new_v4();
    let seed = req.seed.unwrap_or(uuid.as_u64_pair().0);
    let config = SessionConfig {
        condition,
        seed,
        mode: super::Mode::Live,
        ..app.template.clone()
    };
    let id = uuid.simple().to_string();
    let session = Session::new(&app.lab, &id, config)?;
    app.store.save(&session.record())?;
    let status = status_of(&session);
    app.sessions.lock().expect("session table poisoned").insert(
        id,
        Arc::new(Mutex::new(Live {
            session,
            last_active: Instant::now(),
            tokens: HashMap::new(),
        })),
    );
    Ok((StatusCode::CREATED, Json(status)))
}

async fn session_status(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = app.live(&id)?;
    let mut l = live.lock().expect("session poisoned");
    app.expire(&mut l);
    Ok(Json(serde_json::to_value(status_of(&l.session)).map_err(Error::from)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Frame {
    pub state: State,
    pub action: Action,
    #[serde(default)]
    pub events: StepEvents,
    /// Evaluation score accumulated through this step.
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundView {
    pub round: u32,
    pub board: BoardSpec,
    pub frames: Vec<Frame>,
    pub terminal: State,
    pub score: f64,
}

fn step_reward(e: &StepEvents) -> f64 {
    let w = EVALUATION_WEIGHTS;
    let mut r = w.step;
    if e.lava {
        r += w.lava;
    }
    if let Some(c) = e.picked {
        r += w.ball(c);
    }
    r
}

fn frames(t: &Trajectory) -> Vec<Frame> {
    let mut total = 0.0;
    t.steps
        .iter()
        .map(|s| {
            total += step_reward(&s.events);
            Frame {
                state: s.state,
                action: s.action,
                events: s.events,
                score: total,
            }
        })
        .collect()
}

/// The incumbent's episode on this round's board. Starts the round if it
/// has not started yet.
async fn round(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&app, &id, None, false, |s, lab| {
        if s.phase() == Phase::Observe {
            s.observe(lab)?;
        }
        let (Some(board), Some(t)) = (s.feedback_board(), s.observed()) else {
            return Err(Error::State(format!("no episode to show in phase {:?}", s.phase())));
        };
        let f = frames(t);
        Ok(RoundView {
            round: s.round(),
            board: board.clone(),
            score: f.last().map_or(0.0, |f| f.score),
            frames: f,
            terminal: t.terminal,
        })
    })
}

#[derive(Debug, Deserialize)]
pub struct CorrectionsRequest {
    pub token: Option<String>,
    /// Preferred action per step index; unlisted steps keep the agent's.
    #[serde(default)]
    pub edits: HashMap<usize, Action>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectionsAccepted {
    pub round: u32,
    pub corrections: usize,
}

async fn corrections(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
    req: Body<CorrectionsRequest>,
) -> ApiResult<Json<Value>> {
    let req = body(req)?;
    with_session(&app, &id, req.token.as_deref(), true, |s, lab| {
        if s.phase() != Phase::Correct {
            return Err(Error::State(format!("corrections not accepted in phase {:?}", s.phase())));
        }
        let t = s.observed().expect("correct phase has an episode").clone();
        if let Some(bad) = req.edits.keys().find(|&&k| k >= t.len()) {
            return Err(Error::usage(format!("edit for step {bad} beyond the episode")));
        }
        let board = s.feedback_board().expect("round in progress").clone();
        let cs = diff_corrections(&t, &board, &mut StepEdits(req.edits))?;
        let n = s.submit_corrections(lab, cs)?;
        Ok(CorrectionsAccepted { round: s.round(), corrections: n })
    })
}

async fn demo(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&app, &id, None, false, |s, _| s.view_demo())
}

#[derive(Debug, Deserialize)]
pub struct ChoiceRequest {
    pub token: Option<String>,
    pub choice: Option<Choice>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChoiceAccepted {
    pub round: u32,
    pub choice: Choice,
    pub next_phase: Phase,
}

async fn choice(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
    req: Body<ChoiceRequest>,
) -> ApiResult<Json<Value>> {
    let req = body(req)?;
    with_session(&app, &id, req.token.as_deref(), true, |s, lab| {
        let c = match req.choice {
            Some(c) => c,
            None if !s.config().condition.shows_demo() => Choice::Auto,
            None => return Err(Error::usage("choice is required")),
        };
        let round = s.choose(lab, c)?.round;
        Ok(ChoiceAccepted {
            round,
            choice: c,
            next_phase: s.phase(),
        })
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stage3Prompt {
    pub condition: Strategy,
    pub explanation_items: bool,
    /// The final agent's episode on the last feedback board.
    pub final_episode: Trajectory,
    pub board: BoardSpec,
}

async fn stage3_prompt(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&app, &id, None, false, |s, lab| {
        if s.phase() != Phase::Stage3 {
            return Err(Error::State(format!("stage 3 not open in phase {:?}", s.phase())));
        }
        let last = s.rounds().last().expect("stage 3 follows the rounds");
        let board = s
            .record()
            .feedback_boards
            .into_iter()
            .find(|b| b.id() == last.feedback_board_id)
            .expect("round boards belong to the session");
        let t = crate::gridworld::rollout(lab.bank().get(s.current_policy())?.as_ref(), &board)?;
        Ok(Stage3Prompt {
            condition: s.config().condition,
            explanation_items: s.config().condition.shows_demo(),
            final_episode: t,
            board,
        })
    })
}

#[derive(Debug, Deserialize)]
pub struct Stage3Request {
    pub token: Option<String>,
    #[serde(flatten)]
    pub answers: Stage3Answers,
}

async fn stage3(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
    req: Body<Stage3Request>,
) -> ApiResult<Json<Value>> {
    let req = body(req)?;
    with_session(&app, &id, req.token.as_deref(), true, |s, lab| {
        s.submit_stage3(lab, req.answers)?;
        Ok(status_of(s))
    })
}

async fn abandon(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&app, &id, None, true, |s, _| {
        if s.phase() == Phase::Complete {
            return Err(Error::State("session already complete".into()));
        }
        s.abandon();
        Ok(status_of(s))
    })
}

async fn record(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let live = app.live(&id)?;
    let mut l = live.lock().expect("session poisoned");
    app.expire(&mut l);
    Ok(Json(serde_json::to_value(l.session.record()).map_err(Error::from)?))
}

async fn practice_boards(AxState(app): AxState<Arc<AppState>>) -> Json<Vec<BoardSpec>> {
    Json(app.practice.clone())
}

#[derive(Debug, Deserialize)]
pub struct PracticeStep {
    pub board: BoardSpec,
    pub state: State,
    pub action: Action,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PracticeResult {
    pub state: State,
    pub events: StepEvents,
    pub reward: f64,
}

/// Applies one action to a client-held state.
async fn practice_step(req: Body<PracticeStep>) -> ApiResult<Json<PracticeResult>> {
    let req = body(req)?;
    let b = &req.board;
    let s = &req.state;
    if s.pos.x >= b.width() || s.pos.y >= b.height() || !s.remaining.is_subset_of(BallSet::full(b.balls().len())) {
        return Err(Error::usage("state does not fit the board").into());
    }
    let (state, events) = step(s, req.action, b)?;
    Ok(Json(PracticeResult {
        state,
        reward: step_reward(&events),
        events,
    }))
}
