//! Correct-choice metrics, update direction and per-condition reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::demo::{DemoPair, EvalPool, Strategy};
use crate::error::{Error, Result};
use crate::gridworld::Trajectory;
use crate::policy::{Policy, PolicyId};
use crate::reward::{policy_value, PreferenceVector};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Adopt,
    Reject,
    /// Control rounds advance without asking.
    Auto,
}

impl Choice {
    pub fn adopts(self) -> bool {
        matches!(self, Choice::Adopt | Choice::Auto)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    Tie,
}

impl Direction {
    pub fn of(old: f64, new: f64) -> Direction {
        if new > old {
            Direction::Positive
        } else if new < old {
            Direction::Negative
        } else {
            Direction::Tie
        }
    }

    /// Some(true) for Positive, Some(false) for Negative, None for Tie.
    pub fn improved(self) -> Option<bool> {
        match self {
            Direction::Positive => Some(true),
            Direction::Negative => Some(false),
            Direction::Tie => None,
        }
    }
}

pub fn update_direction(old: &Policy, new: &Policy, pool: &EvalPool, weights: &PreferenceVector) -> Result<Direction> {
    let vo = policy_value(old, pool.boards(), weights)?;
    let vn = policy_value(new, pool.boards(), weights)?;
    Ok(Direction::of(vo, vn))
}

/// Audit of one feedback round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: u32,
    pub old_policy: PolicyId,
    pub new_policy: PolicyId,
    pub feedback_board_id: String,
    /// The incumbent's episode on the feedback board.
    pub observed: Trajectory,
    /// Corrections added this round.
    pub corrections: usize,
    /// Update chosen with an empty cumulative log.
    pub empty_log: bool,
    pub agreements: Vec<(PolicyId, usize)>,
    pub demo: Option<DemoPair>,
    pub choice: Choice,
    pub local_old: f64,
    pub local_new: f64,
    pub generalized_old: f64,
    pub generalized_new: f64,
    pub direction: Direction,
}

impl RoundRecord {
    pub fn is_control(&self) -> bool {
        self.choice == Choice::Auto
    }

    /// Policy in effect after this round.
    pub fn resulting_policy(&self) -> PolicyId {
        if self.choice.adopts() {
            self.new_policy
        } else {
            self.old_policy
        }
    }
}

fn correct(choice: Choice, old: f64, new: f64) -> Option<bool> {
    if old == new {
        return None;
    }
    match choice {
        Choice::Adopt => Some(new > old),
        Choice::Reject => Some(old >= new),
        Choice::Auto => None,
    }
}

/// Whether the participant picked the better policy on the feedback board.
/// `None` for control rounds and exact score ties.
pub fn correct_choice_local(r: &RoundRecord) -> Option<bool> {
    correct(r.choice, r.local_old, r.local_new)
}

/// Same as [`correct_choice_local`] with pool-mean scores.
pub fn correct_choice_generalized(r: &RoundRecord) -> Option<bool> {
    correct(r.choice, r.generalized_old, r.generalized_new)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage3Answers {
    pub delegate: bool,
    /// Agent skill relative to self, 1 = much worse, 4 = same, 7 = much better.
    pub likert: u8,
    /// Understandable, overwhelming, feedback contribution, helpful.
    /// Absent for control sessions.
    pub explanation: Option<[u8; 4]>,
}

impl Stage3Answers {
    pub fn validate(&self, condition: Strategy) -> Result<()> {
        let mut v = Vec::new();
        if !(1..=7).contains(&self.likert) {
            v.push(format!("likert answer {} outside 1..=7", self.likert));
        }
        match (&self.explanation, condition.shows_demo()) {
            (Some(_), false) => v.push("control sessions have no explanation items".into()),
            (None, true) => v.push("explanation items are required".into()),
            (Some(items), true) => {
                for (i, x) in items.iter().enumerate() {
                    if !(1..=7).contains(x) {
                        v.push(format!("explanation item {i} answer {x} outside 1..=7"));
                    }
                }
            }
            (None, false) => {}
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub direction: Direction,
    pub choice: Choice,
    pub local: Option<bool>,
    pub generalized: Option<bool>,
    /// None when the two policies score the same.
    pub local_improved: Option<bool>,
    pub generalized_improved: Option<bool>,
}

/// One row per session in the report stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub condition: Strategy,
    pub user: String,
    pub rounds: Vec<RoundOutcome>,
    pub initial_policy: PolicyId,
    pub initial_generalized_score: f64,
    pub final_policy: PolicyId,
    pub final_generalized_score: f64,
    pub delegated: bool,
    pub likert: u8,
    pub explanation: Option<[u8; 4]>,
}

pub fn round_outcome(r: &RoundRecord) -> RoundOutcome {
    RoundOutcome {
        round: r.round,
        direction: r.direction,
        choice: r.choice,
        local: correct_choice_local(r),
        generalized: correct_choice_generalized(r),
        local_improved: (r.local_new != r.local_old).then_some(r.local_new > r.local_old),
        generalized_improved: r.direction.improved(),
    }
}

/// Share of `correct` among non-excluded rounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub correct: usize,
    pub total: usize,
    /// Rounds left out because old and new scored exactly the same.
    pub ties: usize,
    pub rate: Option<f64>,
}

impl Rate {
    fn add(&mut self, flag: Option<bool>) {
        match flag {
            Some(c) => {
                self.total += 1;
                if c {
                    self.correct += 1;
                }
            }
            None => self.ties += 1,
        }
        self.rate = (self.total > 0).then(|| self.correct as f64 / self.total as f64);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRates {
    pub local: Rate,
    pub generalized: Rate,
    pub local_positive: Rate,
    pub local_negative: Rate,
    pub generalized_positive: Rate,
    pub generalized_negative: Rate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRates {
    /// Updates that raised the feedback-board score.
    pub local: Rate,
    /// Updates that raised the pool-mean score.
    pub generalized: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub sessions: usize,
    pub rounds: usize,
    pub directions: BTreeMap<String, usize>,
    /// Absent for control, where updates are adopted automatically.
    pub choice: Option<ChoiceRates>,
    pub improvement: ImprovementRates,
    pub delegation_rate: f64,
    pub mean_final_score: f64,
    pub mean_likert: f64,
    pub mean_explanation: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub conditions: BTreeMap<Strategy, ConditionReport>,
}

pub fn aggregate(sessions: &[SessionSummary]) -> Result<Report> {
    if sessions.is_empty() {
        return Err(Error::usage("aggregate needs at least one session"));
    }
    let mut groups: BTreeMap<Strategy, Vec<&SessionSummary>> = BTreeMap::new();
    for s in sessions {
        groups.entry(s.condition).or_default().push(s);
    }
    let conditions = groups
        .into_iter()
        .map(|(cond, group)| (cond, condition_report(cond, &group)))
        .collect();
    Ok(Report {
        version: REPORT_SCHEMA_VERSION,
        conditions,
    })
}

fn condition_report(cond: Strategy, group: &[&SessionSummary]) -> ConditionReport {
    let n = group.len() as f64;
    let mut rates = ChoiceRates::default();
    let mut directions: BTreeMap<String, usize> = BTreeMap::new();
    let mut improvement = ImprovementRates::default();
    let mut rounds = 0;
    for s in group {
        for r in &s.rounds {
            rounds += 1;
            improvement.local.add(r.local_improved);
            improvement.generalized.add(r.generalized_improved);
            let key = serde_json::to_value(r.direction)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *directions.entry(key).or_default() += 1;
            if r.choice == Choice::Auto {
                continue;
            }
            rates.local.add(r.local);
            rates.generalized.add(r.generalized);
            match r.direction {
                Direction::Positive => {
                    rates.local_positive.add(r.local);
                    rates.generalized_positive.add(r.generalized);
                }
                Direction::Negative => {
                    rates.local_negative.add(r.local);
                    rates.generalized_negative.add(r.generalized);
                }
                Direction::Tie => {}
            }
        }
    }
    let explained: Vec<[u8; 4]> = group.iter().filter_map(|s| s.explanation).collect();
    let mean_explanation = (!explained.is_empty()).then(|| {
        let mut m = [0.0; 4];
        for e in &explained {
            for (acc, x) in m.iter_mut().zip(e) {
                *acc += *x as f64;
            }
        }
        m.map(|x| x / explained.len() as f64)
    });
    ConditionReport {
        sessions: group.len(),
        rounds,
        directions,
        choice: cond.shows_demo().then_some(rates),
        improvement,
        delegation_rate: group.iter().filter(|s| s.delegated).count() as f64 / n,
        mean_final_score: group.iter().map(|s| s.final_generalized_score).sum::<f64>() / n,
        mean_likert: group.iter().map(|s| s.likert as f64).sum::<f64>() / n,
        mean_explanation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_board, reset, GenParams};

    fn round(choice: Choice, local: (f64, f64), gen: (f64, f64)) -> RoundRecord {
        let b = generate_board(1, &GenParams::default()).unwrap();
        let s = reset(&b).unwrap();
        RoundRecord {
            round: 1,
            old_policy: PolicyId(1),
            new_policy: PolicyId(2),
            feedback_board_id: b.id().into(),
            observed: Trajectory {
                board_id: b.id().into(),
                steps: vec![],
                terminal: s,
            },
            corrections: 0,
            empty_log: true,
            agreements: vec![],
            demo: None,
            choice,
            local_old: local.0,
            local_new: local.1,
            generalized_old: gen.0,
            generalized_new: gen.1,
            direction: Direction::of(gen.0, gen.1),
        }
    }

    #[test]
    fn local_correctness() {
        assert_eq!(correct_choice_local(&round(Choice::Adopt, (1.0, 2.0), (0.0, 0.0))), Some(true));
        assert_eq!(correct_choice_local(&round(Choice::Adopt, (2.0, 1.0), (0.0, 0.0))), Some(false));
        assert_eq!(correct_choice_local(&round(Choice::Reject, (2.0, 1.0), (0.0, 0.0))), Some(true));
        assert_eq!(correct_choice_local(&round(Choice::Adopt, (1.5, 1.5), (0.0, 0.0))), None);
        assert_eq!(correct_choice_local(&round(Choice::Auto, (1.0, 2.0), (0.0, 0.0))), None);
    }

    #[test]
    fn generalized_correctness() {
        let pos = round(Choice::Adopt, (0.0, 0.0), (1.0, 3.0));
        assert_eq!(pos.direction, Direction::Positive);
        assert_eq!(correct_choice_generalized(&pos), Some(true));
        let rej = round(Choice::Reject, (0.0, 0.0), (1.0, 3.0));
        assert_eq!(correct_choice_generalized(&rej), Some(false));
        let tie = round(Choice::Adopt, (0.0, 0.0), (2.0, 2.0));
        assert_eq!(tie.direction, Direction::Tie);
        assert_eq!(correct_choice_generalized(&tie), None);
    }

    #[test]
    fn direction_antisymmetry() {
        assert_eq!(Direction::of(1.0, 2.0), Direction::Positive);
        assert_eq!(Direction::of(2.0, 1.0), Direction::Negative);
        assert_eq!(Direction::of(2.0, 2.0), Direction::Tie);
    }

    #[test]
    fn stage3_validation() {
        let ok = Stage3Answers { delegate: true, likert: 4, explanation: Some([4, 4, 4, 4]) };
        ok.validate(Strategy::Same).unwrap();
        assert!(ok.validate(Strategy::Control).is_err());
        let bad = Stage3Answers { delegate: false, likert: 8, explanation: None };
        assert!(bad.validate(Strategy::Control).is_err());
        let ctrl = Stage3Answers { delegate: false, likert: 1, explanation: None };
        ctrl.validate(Strategy::Control).unwrap();
        assert!(ctrl.validate(Strategy::Random).is_err());
    }

    fn summary(cond: Strategy, rounds: Vec<RoundRecord>) -> SessionSummary {
        SessionSummary {
            session_id: "s".into(),
            condition: cond,
            user: "test".into(),
            rounds: rounds.iter().map(round_outcome).collect(),
            initial_policy: PolicyId(1),
            initial_generalized_score: 0.0,
            final_policy: PolicyId(2),
            final_generalized_score: 5.0,
            delegated: true,
            likert: 5,
            explanation: cond.shows_demo().then_some([5, 3, 4, 6]),
        }
    }

    #[test]
    fn aggregate_rates() {
        assert!(aggregate(&[]).is_err());
        let s = summary(
            Strategy::Same,
            vec![
                round(Choice::Adopt, (1.0, 2.0), (1.0, 2.0)),
                round(Choice::Reject, (2.0, 1.0), (2.0, 1.0)),
            ],
        );
        let r = aggregate(&[s]).unwrap();
        let c = &r.conditions[&Strategy::Same];
        let rates = c.choice.as_ref().unwrap();
        assert_eq!(rates.local.rate, Some(1.0));
        assert_eq!(rates.generalized.rate, Some(1.0));
        assert_eq!(rates.generalized_positive.total, 1);
        assert_eq!(rates.generalized_negative.total, 1);
        assert_eq!(c.delegation_rate, 1.0);
        assert_eq!(c.mean_explanation, Some([5.0, 3.0, 4.0, 6.0]));
    }

    #[test]
    fn control_reports_improvement_only() {
        let ctrl = summary(
            Strategy::Control,
            vec![
                round(Choice::Auto, (1.0, 2.0), (1.0, 2.0)),
                round(Choice::Auto, (2.0, 1.0), (2.0, 2.0)),
            ],
        );
        let other = summary(Strategy::Random, vec![round(Choice::Adopt, (1.0, 2.0), (1.0, 2.0))]);
        let r = aggregate(&[ctrl.clone(), other, ctrl]).unwrap();
        let c = &r.conditions[&Strategy::Control];
        assert!(c.choice.is_none());
        assert_eq!(c.sessions, 2);
        assert_eq!(c.improvement.local.rate, Some(0.5));
        assert_eq!(c.improvement.generalized.rate, Some(1.0));
        assert_eq!(c.improvement.generalized.ties, 2);
        assert_eq!(r.conditions[&Strategy::Random].sessions, 1);
    }
}
