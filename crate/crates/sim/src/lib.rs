//! Simulated-user evaluation of the relevance feedback user model.
//!
//! A simulated user searches for one newsgroup, gives noisy feedback on the
//! top documents and, depending on the scenario, reacts to the model's
//! suggestion of which past feedback to revisit. Sessions are aggregated
//! into per-step F1 and runtime curves.

pub mod experiment;
pub mod feedback;
pub mod harness;
pub mod synth;

use std::path::Path;

use relfeed_core::corpus::{load_newsgroups, strip_headers, Corpus};
use relfeed_core::Result;

pub use experiment::{run_experiment, write_csv, CellResult, CsvRow, ExperimentOptions};
pub use feedback::{simulate_step_feedback, Branch, NoiseProfile, StepFeedback};
pub use harness::{f1_of_list, run_session, DatasetSettings, Scenario, SessionOutcome, SimConfig, SimData, SimModel};
pub use synth::SynthConfig;

/// Loads a newsgroup tree, or generates the synthetic stand-in when no
/// path is given.
pub fn load_dataset(path: Option<&Path>, settings: &DatasetSettings) -> Result<SimData> {
    let raw = match path {
        Some(p) => load_newsgroups(p, settings.per_group, settings.groups)?,
        None => SynthConfig {
            groups: settings.groups,
            per_group: settings.per_group,
            ..SynthConfig::default()
        }
        .generate()?
        .into_iter()
        .map(|mut d| {
            // same view of a message as the tree loader has
            d.text = strip_headers(&d.text).to_string();
            d
        })
        .collect(),
    };
    SimData::new(Corpus::build(raw, settings.corpus)?)
}
