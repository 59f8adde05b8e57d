//! Corrective feedback and agreement-maximizing update selection.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Agent, BoardSpec, State, Trajectory};
use crate::policy::{Policy, PolicyBank, PolicyId};

/// The agent took `agent_action` in `state`; the participant wanted
/// `preferred_action`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub board_id: String,
    /// Index of the corrected step within its trajectory.
    pub step: usize,
    pub state: State,
    pub agent_action: Action,
    pub preferred_action: Action,
}

/// Cumulative, append-only correction log of one session.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeedbackLog {
    corrections: Vec<Correction>,
}

impl FeedbackLog {
    pub fn new() -> Self {
        FeedbackLog::default()
    }

    pub fn push(&mut self, c: Correction) {
        self.corrections.push(c);
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = Correction>) {
        self.corrections.extend(cs);
    }

    pub fn len(&self) -> usize {
        self.corrections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrections.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correction> {
        self.corrections.iter()
    }

    pub fn as_slice(&self) -> &[Correction] {
        &self.corrections
    }
}

impl FromIterator<Correction> for FeedbackLog {
    fn from_iter<I: IntoIterator<Item = Correction>>(iter: I) -> Self {
        FeedbackLog {
            corrections: iter.into_iter().collect(),
        }
    }
}

/// Supplies the participant's preferred action for each trajectory step.
/// Returning `None` means no answer is available for that step.
pub trait PreferenceSource {
    fn preferred(&mut self, board: &BoardSpec, step: usize, state: &State, taken: Action) -> Option<Action>;
}

impl<F> PreferenceSource for F
where
    F: FnMut(&BoardSpec, usize, &State, Action) -> Option<Action>,
{
    fn preferred(&mut self, board: &BoardSpec, step: usize, state: &State, taken: Action) -> Option<Action> {
        self(board, step, state, taken)
    }
}

/// Sparse per-step edits, as entered in a correction editor: steps without
/// an edit keep the action the agent took.
#[derive(Clone, Debug, Default)]
pub struct StepEdits(pub HashMap<usize, Action>);

impl PreferenceSource for StepEdits {
    fn preferred(&mut self, _: &BoardSpec, step: usize, _: &State, taken: Action) -> Option<Action> {
        Some(self.0.get(&step).copied().unwrap_or(taken))
    }
}

/// One correction per step where the preferred action differs from the
/// action taken, in step order.
pub fn diff_corrections(
    traj: &Trajectory,
    board: &BoardSpec,
    source: &mut (impl PreferenceSource + ?Sized),
) -> Result<Vec<Correction>> {
    let mut out = Vec::new();
    for (i, s) in traj.steps.iter().enumerate() {
        let preferred = source
            .preferred(board, i, &s.state, s.action)
            .ok_or_else(|| Error::usage(format!("no preferred action supplied for step {i}")))?;
        if preferred != s.action {
            out.push(Correction {
                board_id: traj.board_id.clone(),
                step: i,
                state: s.state,
                agent_action: s.action,
                preferred_action: preferred,
            });
        }
    }
    Ok(out)
}

/// Board lookup by id for replaying logged corrections.
pub trait BoardLookup {
    fn board(&self, id: &str) -> Option<&BoardSpec>;
}

impl BoardLookup for HashMap<String, BoardSpec> {
    fn board(&self, id: &str) -> Option<&BoardSpec> {
        self.get(id)
    }
}

impl BoardLookup for [BoardSpec] {
    fn board(&self, id: &str) -> Option<&BoardSpec> {
        self.iter().find(|b| b.id() == id)
    }
}

impl BoardLookup for Vec<BoardSpec> {
    fn board(&self, id: &str) -> Option<&BoardSpec> {
        self.as_slice().board(id)
    }
}

/// Number of logged corrections whose preferred action the candidate takes.
pub fn agree(
    candidate: &(impl Agent + ?Sized),
    log: &FeedbackLog,
    boards: &(impl BoardLookup + ?Sized),
) -> Result<usize> {
    let mut n = 0;
    for c in log.iter() {
        let board = boards
            .board(&c.board_id)
            .ok_or_else(|| Error::Data(format!("correction references unknown board {}", c.board_id)))?;
        if candidate.act(board, &c.state)? == c.preferred_action {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub chosen: Arc<Policy>,
    /// Agreement of every candidate, ascending by id.
    pub agreements: Vec<(PolicyId, usize)>,
    /// The log was empty, so the lowest-id neighbor was taken by default.
    pub empty_log: bool,
}

/// Picks the neighbor of `current` with the highest agreement; ties go to
/// the lowest policy id.
pub fn select_update(
    bank: &PolicyBank,
    current: PolicyId,
    log: &FeedbackLog,
    boards: &(impl BoardLookup + ?Sized),
) -> Result<Selection> {
    let candidates = bank.neighborhood(current)?;
    let mut agreements = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, &Arc<Policy>)> = None;
    for c in &candidates {
        let score = agree(c.as_ref(), log, boards)?;
        agreements.push((c.id(), score));
        // Candidates arrive in ascending id order, so strict `>` keeps the
        // lowest id among ties.
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, c));
        }
    }
    let (_, chosen) = best.ok_or_else(|| Error::usage(format!("policy {current} has no neighbors")))?;
    Ok(Selection {
        chosen: Arc::clone(chosen),
        agreements,
        empty_log: log.is_empty(),
    })
}
