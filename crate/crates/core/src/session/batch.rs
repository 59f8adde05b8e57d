use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_session, FeedbackBoardMode, Lab, Mode, SessionConfig, SessionRecord, DEFAULT_ROUNDS};
use crate::demo::{GapMode, Strategy};
use crate::error::{Error, Result};
use crate::eval::{round_outcome, SessionSummary};
use crate::policy::PolicyId;
use crate::simuser::SimUserConfig;

/// A grid of simulated sessions: every condition crossed with every seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub conditions: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub user: SimUserConfig,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub initial_policy: Option<PolicyId>,
    #[serde(default = "per_session")]
    pub feedback_boards: FeedbackBoardMode,
    #[serde(default)]
    pub gap_mode: GapMode,
}

fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}

fn per_session() -> FeedbackBoardMode {
    FeedbackBoardMode::PerSession
}

impl BatchSpec {
    pub fn new(conditions: Vec<Strategy>, seeds: impl IntoIterator<Item = u64>, user: SimUserConfig) -> Self {
        BatchSpec {
            conditions,
            seeds: seeds.into_iter().collect(),
            user,
            rounds: DEFAULT_ROUNDS,
            initial_policy: None,
            feedback_boards: FeedbackBoardMode::PerSession,
            gap_mode: GapMode::Absolute,
        }
    }

    fn config(&self, condition: Strategy, seed: u64) -> SessionConfig {
        SessionConfig {
            condition,
            seed,
            rounds: self.rounds,
            initial_policy: self.initial_policy,
            feedback_boards: self.feedback_boards,
            gap_mode: self.gap_mode,
            self_play_baseline: None,
            mode: Mode::Simulated { user: self.user.clone() },
        }
    }
}

/// Runs the batch in parallel. Output order is condition-major, then seed,
/// and does not depend on scheduling.
pub fn run_batch(lab: &Lab, spec: &BatchSpec) -> Result<Vec<SessionRecord>> {
    if spec.conditions.is_empty() || spec.seeds.is_empty() {
        return Err(Error::usage("a batch needs at least one condition and one seed"));
    }
    spec.user.model.validate()?;
    let jobs: Vec<(Strategy, u64)> = spec
        .conditions
        .iter()
        .flat_map(|&c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(c, seed)| run_session(lab, &format!("{c}-{seed:06}"), spec.config(c, seed)))
        .collect()
}

pub fn summarize(record: &SessionRecord) -> Result<SessionSummary> {
    if !record.complete {
        return Err(Error::usage(format!("session {} is not complete", record.session_id)));
    }
    let stage3 = record.stage3.as_ref().expect("complete sessions carry stage-3 answers");
    let first = record.rounds.first().expect("complete sessions have rounds");
    let user = match &record.config.mode {
        Mode::Simulated { user } => user.model.to_string(),
        Mode::Live => "live".to_string(),
    };
    Ok(SessionSummary {
        session_id: record.session_id.clone(),
        condition: record.config.condition,
        user,
        rounds: record.rounds.iter().map(round_outcome).collect(),
        initial_policy: record.initial_policy,
        initial_generalized_score: first.generalized_old,
        final_policy: record.current_policy,
        final_generalized_score: record
            .final_generalized_score
            .expect("complete sessions carry a final score"),
        delegated: stage3.delegate,
        likert: stage3.likert,
        explanation: stage3.explanation,
    })
}

/// Reads session records from a JSON file, a directory of them, or NDJSON.
pub fn load_records(path: &Path) -> Result<Vec<SessionRecord>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            out.extend(load_records(&f)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    if let Ok(one) = serde_json::from_str::<SessionRecord>(&text) {
        return Ok(vec![one]);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::lab;
    use super::*;
    use crate::simuser::UserModel;

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let spec = BatchSpec::new(
            vec![Strategy::Control, Strategy::SalientContrast],
            0..4,
            SimUserConfig::new(UserModel::MyopicEvaluator),
        );
        let a = run_batch(lab(), &spec).unwrap();
        let b = run_batch(lab(), &spec).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a[0].session_id, "control-000000");
        assert_eq!(a[7].session_id, "salient_contrast-000003");
        let da: Vec<String> = a.iter().map(|r| r.derived_json()).collect();
        let db: Vec<String> = b.iter().map(|r| r.derived_json()).collect();
        assert_eq!(da, db);
        let s = summarize(&a[5]).unwrap();
        assert_eq!(s.rounds.len(), 5);
        assert_eq!(s.user, "myopic_evaluator");
    }

    #[test]
    fn records_load_from_ndjson_and_dir() {
        let spec = BatchSpec::new(vec![Strategy::Same], [1, 2], SimUserConfig::new(UserModel::Oracle));
        let recs = run_batch(lab(), &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let nd = dir.path().join("all.ndjson");
        let body: Vec<String> = recs.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(&nd, body.join("\n")).unwrap();
        assert_eq!(load_records(&nd).unwrap(), recs);
        let sub = dir.path().join("sessions");
        std::fs::create_dir(&sub).unwrap();
        for r in &recs {
            std::fs::write(sub.join(format!("{}.json", r.session_id)), serde_json::to_string(r).unwrap()).unwrap();
        }
        assert_eq!(load_records(&sub).unwrap(), recs);
    }
}
