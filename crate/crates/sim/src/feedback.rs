//! The simulated user's noisy relevance feedback.

use rand::Rng;
use relfeed_core::corpus::DocId;
use relfeed_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub p_positive: f64,
    pub p_negative: f64,
    pub p_random: f64,
    /// Chance that a randomly chosen item is rated relevant.
    pub p_random_high: f64,
    pub value_positive: f64,
    pub value_negative: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            p_positive: 0.70,
            p_negative: 0.10,
            p_random: 0.20,
            p_random_high: 0.875,
            value_positive: 1.0,
            value_negative: 0.0,
        }
    }
}

impl NoiseProfile {
    /// A user who only ever rates correctly.
    pub fn noiseless() -> Self {
        Self {
            p_positive: 0.875,
            p_negative: 0.125,
            p_random: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_positive, self.p_negative, self.p_random, self.p_random_high];
        let values = [self.value_positive, self.value_negative];
        if probs.iter().chain(&values).all(|p| (0.0..=1.0).contains(p))
            && (self.p_positive + self.p_negative + self.p_random - 1.0).abs() < 1e-9
        {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid noise profile: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Positive,
    Negative,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepFeedback {
    pub doc: DocId,
    pub value: f64,
    pub branch: Branch,
}

/// Uniform pick, preferring items the user has not rated yet.
fn pick<R: Rng + ?Sized>(items: &[DocId], rated: &dyn Fn(DocId) -> bool, rng: &mut R) -> DocId {
    let fresh: Vec<DocId> = items.iter().copied().filter(|d| !rated(*d)).collect();
    let pool = if fresh.is_empty() { items } else { &fresh[..] };
    pool[rng.random_range(0..pool.len())]
}

/// One noisy rating of an item of `list`. A branch whose kind of example the
/// list lacks falls back to the random branch.
pub fn simulate_step_feedback<R: Rng + ?Sized>(
    list: &[DocId],
    relevant: &dyn Fn(DocId) -> bool,
    rated: &dyn Fn(DocId) -> bool,
    noise: &NoiseProfile,
    rng: &mut R,
) -> Option<StepFeedback> {
    if list.is_empty() {
        return None;
    }
    let (positives, negatives): (Vec<DocId>, Vec<DocId>) = list.iter().partition(|d| relevant(**d));
    let u: f64 = rng.random();
    let branch = if u < noise.p_positive {
        Branch::Positive
    } else if u < noise.p_positive + noise.p_negative {
        Branch::Negative
    } else {
        Branch::Random
    };
    Some(match branch {
        Branch::Positive if !positives.is_empty() => StepFeedback {
            doc: pick(&positives, rated, rng),
            value: noise.value_positive,
            branch,
        },
        Branch::Negative if !negatives.is_empty() => StepFeedback {
            doc: pick(&negatives, rated, rng),
            value: noise.value_negative,
            branch,
        },
        _ => {
            let doc = pick(list, rated, rng);
            let value = if rng.random::<f64>() < noise.p_random_high {
                noise.value_positive
            } else {
                noise.value_negative
            };
            StepFeedback {
                doc,
                value,
                branch: Branch::Random,
            }
        }
    })
}
