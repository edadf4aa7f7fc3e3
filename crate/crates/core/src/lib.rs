//! Drift-aware relevance feedback.
//!
//! A Bayesian linear regression user model that infers how accurate each
//! piece of relevance feedback is, flags suspect feedback for revision, and
//! ranks documents by the inferred relevance of their keywords.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod model;
pub mod ranking;
pub mod session;

pub use error::{Error, Result};
pub use inference::{elbo, fit, FitRequest, ModelKind};
pub use model::{
    expected_weight, predict_relevance, Covariance, FeatureVector, Hyperparameters, ObsId,
    Observation, PosteriorState, WeightFactor, WeightMode, WeightPosterior,
};
pub use session::{
    select_highlight_for_simulation, EntryId, FeedbackSource, Highlight, HighlightPolicy,
    SessionConfig, SessionState, Timeline, TimelineEntry,
};
