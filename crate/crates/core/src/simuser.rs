//! Simulated participants.
//!
//! | model               | feedback                      | adopt/reject                         | delegation                               |
//! |---------------------|-------------------------------|--------------------------------------|------------------------------------------|
//! | `oracle`            | corrects every divergence     | adopt iff pool mean improves         | final pool score > baseline              |
//! | `noisy(eps)`        | each decision flipped w.p. eps| oracle decision flipped w.p. eps     | oracle decision flipped w.p. eps         |
//! | `myopic_evaluator`  | as oracle                     | adopt iff new beats old on the demo  | final beats self-play on last feedback board |
//! | `improvement_biased(p)` | as oracle                 | adopt w.p. p                         | delegate w.p. p                          |
//!
//! The participant's own preferred actions come from the exact planner run
//! under the participant's preference vector (the evaluation weights by
//! default).

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{DemoPair, Strategy};
use crate::error::{Error, Result};
use crate::eval::{Choice, Stage3Answers};
use crate::feedback::{diff_corrections, Correction};
use crate::gridworld::{Action, Agent, BoardSpec, State, Trajectory};
use crate::policy::{Policy, PolicyId, DEFAULT_GAMMA};
use crate::reward::{PreferenceVector, EVALUATION_WEIGHTS};
use crate::util::rng_stream;

const USER_STREAM: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum UserModel {
    Oracle,
    Noisy { epsilon: f64 },
    MyopicEvaluator,
    ImprovementBiased { p: f64 },
}

impl fmt::Display for UserModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserModel::Oracle => write!(f, "oracle"),
            UserModel::Noisy { epsilon } => write!(f, "noisy({epsilon})"),
            UserModel::MyopicEvaluator => write!(f, "myopic_evaluator"),
            UserModel::ImprovementBiased { p } => write!(f, "improvement_biased({p})"),
        }
    }
}

impl std::str::FromStr for UserModel {
    type Err = Error;

    /// `oracle`, `myopic`, `noisy:<eps>` or `biased:<p>` (long names accepted).
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: Option<f64>| -> Result<f64> {
            match arg {
                Some(a) => a.parse().map_err(|_| Error::usage(format!("bad number in user model {s:?}"))),
                None => default.ok_or_else(|| Error::usage(format!("user model {s:?} needs a probability"))),
            }
        };
        let m = match name {
            "oracle" => UserModel::Oracle,
            "myopic" | "myopic_evaluator" => UserModel::MyopicEvaluator,
            "noisy" => UserModel::Noisy { epsilon: num(None)? },
            "biased" | "improvement_biased" => UserModel::ImprovementBiased { p: num(Some(1.0))? },
            _ => return Err(Error::usage(format!("unknown user model {s:?}"))),
        };
        if arg.is_some() && matches!(m, UserModel::Oracle | UserModel::MyopicEvaluator) {
            return Err(Error::usage(format!("user model {name} takes no argument")));
        }
        m.validate()?;
        Ok(m)
    }
}

impl UserModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UserModel::Noisy { epsilon: x } | UserModel::ImprovementBiased { p: x } if !(0.0..=1.0).contains(&x) => {
                Err(Error::invalid(format!("{self}: probability outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// User-model block of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimUserConfig {
    #[serde(flatten)]
    pub model: UserModel,
    #[serde(default = "evaluation_preferences")]
    pub preferences: PreferenceVector,
    /// Defaults to the session seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn evaluation_preferences() -> PreferenceVector {
    EVALUATION_WEIGHTS
}

impl SimUserConfig {
    pub fn new(model: UserModel) -> Self {
        SimUserConfig {
            model,
            preferences: EVALUATION_WEIGHTS,
            seed: None,
        }
    }
}

/// What a choosing participant can see besides the demo: the objective
/// pool means, available only to the oracle-style models.
#[derive(Clone, Copy, Debug)]
pub struct ChoiceContext {
    pub generalized_old: f64,
    pub generalized_new: f64,
}

/// Inputs to the stage-3 decisions.
#[derive(Clone, Debug)]
pub struct Stage3Context {
    pub condition: Strategy,
    pub final_policy: PolicyId,
    pub final_generalized: f64,
    /// Pool score the participant would achieve playing themselves.
    pub baseline_generalized: f64,
    pub final_local_last: f64,
    pub baseline_local_last: f64,
    pub demos_shown: usize,
    pub demos_with_difference: usize,
}

pub struct SimUser {
    model: UserModel,
    planner: Policy,
    rng: ChaCha8Rng,
}

impl fmt::Debug for SimUser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimUser").field("model", &self.model).finish()
    }
}

impl SimUser {
    pub fn new(config: &SimUserConfig, session_seed: u64) -> Result<SimUser> {
        config.model.validate()?;
        Ok(SimUser {
            model: config.model,
            planner: Policy::new(PolicyId(0), config.preferences, DEFAULT_GAMMA)?,
            rng: rng_stream(config.seed.unwrap_or(session_seed), USER_STREAM),
        })
    }

    pub fn model(&self) -> UserModel {
        self.model
    }

    /// The planner standing in for the participant's own judgment.
    pub fn planner(&self) -> &Policy {
        &self.planner
    }

    fn flip(&mut self, epsilon: f64) -> bool {
        self.rng.gen::<f64>() < epsilon
    }

    pub fn sim_feedback(&mut self, traj: &Trajectory, board: &BoardSpec) -> Result<Vec<Correction>> {
        let epsilon = match self.model {
            UserModel::Noisy { epsilon } => Some(epsilon),
            _ => None,
        };
        let planner = &self.planner;
        let rng = &mut self.rng;
        let mut failure = None;
        let mut source = |b: &BoardSpec, _: usize, s: &State, taken: Action| -> Option<Action> {
            let wanted = match planner.act(b, s) {
                Ok(a) => a,
                Err(e) => {
                    failure.get_or_insert(e);
                    return Some(taken);
                }
            };
            let Some(eps) = epsilon else {
                return Some(wanted);
            };
            let diverges = wanted != taken;
            let flipped = rng.gen::<f64>() < eps;
            match (diverges, flipped) {
                (true, false) => Some(wanted),
                (true, true) | (false, false) => Some(taken),
                (false, true) => {
                    let others: Vec<Action> = Action::ALL.into_iter().filter(|&a| a != taken).collect();
                    others.choose(rng).copied()
                }
            }
        };
        let out = diff_corrections(traj, board, &mut source)?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    pub fn sim_choice(&mut self, demo: Option<&DemoPair>, ctx: &ChoiceContext) -> Result<Choice> {
        let demo = demo.ok_or_else(|| Error::usage("a choosing participant needs a demonstration"))?;
        let oracle = if ctx.generalized_new > ctx.generalized_old {
            Choice::Adopt
        } else {
            Choice::Reject
        };
        Ok(match self.model {
            UserModel::Oracle => oracle,
            UserModel::Noisy { epsilon } => {
                if self.flip(epsilon) {
                    invert(oracle)
                } else {
                    oracle
                }
            }
            UserModel::MyopicEvaluator => {
                if demo.score_new > demo.score_old {
                    Choice::Adopt
                } else {
                    Choice::Reject
                }
            }
            UserModel::ImprovementBiased { p } => {
                if self.rng.gen::<f64>() < p {
                    Choice::Adopt
                } else {
                    Choice::Reject
                }
            }
        })
    }

    pub fn sim_delegate(&mut self, ctx: &Stage3Context) -> bool {
        let oracle = ctx.final_generalized > ctx.baseline_generalized;
        match self.model {
            UserModel::Oracle => oracle,
            UserModel::Noisy { epsilon } => oracle != self.flip(epsilon),
            UserModel::MyopicEvaluator => ctx.final_local_last > ctx.baseline_local_last,
            UserModel::ImprovementBiased { p } => self.rng.gen::<f64>() < p,
        }
    }

    /// Delegation, a likert rating of the agent relative to self, and the
    /// explanation items for conditions that showed demos.
    ///
    /// The rating is `4 + round(final - baseline)` clamped to 1..=7, using
    /// the pool scores for oracle-style models and the last feedback board
    /// for the myopic model. Explanation items are neutral (4) except
    /// "helpful", which rises with the share of demos that showed a score
    /// difference.
    pub fn sim_stage3(&mut self, ctx: &Stage3Context) -> Stage3Answers {
        let delegate = self.sim_delegate(ctx);
        let gap = match self.model {
            UserModel::MyopicEvaluator => ctx.final_local_last - ctx.baseline_local_last,
            _ => ctx.final_generalized - ctx.baseline_generalized,
        };
        let likert = (4.0 + gap.round()).clamp(1.0, 7.0) as u8;
        let explanation = ctx.condition.shows_demo().then(|| {
            let share = if ctx.demos_shown == 0 {
                0.0
            } else {
                ctx.demos_with_difference as f64 / ctx.demos_shown as f64
            };
            [4, 4, 4, (4.0 + 3.0 * share).round() as u8]
        });
        Stage3Answers {
            delegate,
            likert,
            explanation,
        }
    }
}

fn invert(c: Choice) -> Choice {
    match c {
        Choice::Adopt => Choice::Reject,
        Choice::Reject => Choice::Adopt,
        Choice::Auto => Choice::Auto,
    }
}
