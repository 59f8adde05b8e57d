//! Gridworld laboratory for the feedback and update-assessment loop.
//!
//! An agent acts on a board, a participant (simulated or live) corrects its
//! actions, the next policy is chosen from a fixed bank by agreement with
//! the accumulated corrections, and the old and new policies are shown side
//! by side on a board picked by one of four demonstration strategies. The
//! participant's adopt/reject decisions, delegation and questionnaire
//! answers are recorded for analysis.

pub mod demo;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod gridworld;
pub mod policy;
pub mod reward;
pub mod session;
pub mod simuser;
mod util;

pub use error::{Error, Result};
pub use util::{fingerprint, rng_stream};
