//! Five-feature linear reward: ball pickups by color, lava entries, steps.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{rollout, Agent, BoardSpec, Color, Trajectory};

/// Weights in the fixed order (Blue, Green, Red, Lava, StepCost).
/// Serialized as a 5-element array in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct PreferenceVector {
    pub blue: f64,
    pub green: f64,
    pub red: f64,
    pub lava: f64,
    pub step: f64,
}

impl PreferenceVector {
    pub const fn new(blue: f64, green: f64, red: f64, lava: f64, step: f64) -> Self {
        PreferenceVector {
            blue,
            green,
            red,
            lava,
            step,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.blue, self.green, self.red, self.lava, self.step]
    }

    pub fn ball(&self, color: Color) -> f64 {
        match color {
            Color::Blue => self.blue,
            Color::Green => self.green,
            Color::Red => self.red,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        PreferenceVector::new(
            self.blue * k,
            self.green * k,
            self.red * k,
            self.lava * k,
            self.step * k,
        )
    }

    /// Rejects non-finite weights. A positive step weight is allowed but
    /// logged, since it rewards stalling until the step cap.
    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite preference weights {self}")));
        }
        if self.step > 0.0 {
            log::warn!("preference vector {self} has a positive step weight");
        }
        Ok(())
    }
}

impl From<[f64; 5]> for PreferenceVector {
    fn from(a: [f64; 5]) -> Self {
        PreferenceVector::new(a[0], a[1], a[2], a[3], a[4])
    }
}

impl From<PreferenceVector> for [f64; 5] {
    fn from(p: PreferenceVector) -> Self {
        p.to_array()
    }
}

impl fmt::Display for PreferenceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.blue, self.green, self.red, self.lava, self.step
        )
    }
}

/// The evaluation reward shown to participants.
pub const EVALUATION_WEIGHTS: PreferenceVector = PreferenceVector::new(4.0, 2.0, -2.0, -3.0, -0.1);

pub fn evaluation_weights() -> PreferenceVector {
    EVALUATION_WEIGHTS
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureCounts {
    pub blue: u32,
    pub green: u32,
    pub red: u32,
    pub lava: u32,
    pub steps: u32,
}

impl FeatureCounts {
    pub const fn new(blue: u32, green: u32, red: u32, lava: u32, steps: u32) -> Self {
        FeatureCounts {
            blue,
            green,
            red,
            lava,
            steps,
        }
    }
}

impl Add for FeatureCounts {
    type Output = FeatureCounts;

    fn add(self, o: FeatureCounts) -> FeatureCounts {
        FeatureCounts::new(
            self.blue + o.blue,
            self.green + o.green,
            self.red + o.red,
            self.lava + o.lava,
            self.steps + o.steps,
        )
    }
}

pub fn featurize(traj: &Trajectory) -> FeatureCounts {
    let mut c = FeatureCounts {
        steps: traj.steps.len() as u32,
        ..FeatureCounts::default()
    };
    for s in &traj.steps {
        match s.events.picked {
            Some(Color::Blue) => c.blue += 1,
            Some(Color::Green) => c.green += 1,
            Some(Color::Red) => c.red += 1,
            None => {}
        }
        if s.events.lava {
            c.lava += 1;
        }
    }
    c
}

/// Undiscounted episode score: dot product of counts and weights.
pub fn score(c: &FeatureCounts, w: &PreferenceVector) -> f64 {
    c.blue as f64 * w.blue
        + c.green as f64 * w.green
        + c.red as f64 * w.red
        + c.lava as f64 * w.lava
        + c.steps as f64 * w.step
}

pub fn trajectory_score(traj: &Trajectory, w: &PreferenceVector) -> f64 {
    score(&featurize(traj), w)
}

/// Mean episode score of `agent` over `boards`.
pub fn policy_value(
    agent: &(impl Agent + ?Sized),
    boards: &[BoardSpec],
    w: &PreferenceVector,
) -> Result<f64> {
    if boards.is_empty() {
        return Err(Error::usage("policy_value needs at least one board"));
    }
    let mut total = 0.0;
    for b in boards {
        total += trajectory_score(&rollout(agent, b)?, w);
    }
    Ok(total / boards.len() as f64)
}
