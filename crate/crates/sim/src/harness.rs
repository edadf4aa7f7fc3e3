//! One simulated search session: a user hunting for one newsgroup while
//! giving noisy document feedback and reacting to highlights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relfeed_core::corpus::{Corpus, CorpusSettings, DocId};
use relfeed_core::ranking::RankedList;
use relfeed_core::session::{select_highlight_for_simulation, FeedbackSource, HighlightPolicy, Timeline};
use relfeed_core::{
    fit, EntryId, Error, FeatureVector, FitRequest, Hyperparameters, ModelKind, Observation, Result,
    WeightMode,
};
use serde::{Deserialize, Serialize};

use crate::feedback::{simulate_step_feedback, NoiseProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// No highlights.
    A,
    /// Revise wrong highlighted feedback, lock correct highlighted feedback.
    B,
    /// Revise only.
    C,
    /// Lock only.
    D,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::C, Scenario::D];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SimModel {
    Ard,
    Lg,
    /// Linear-Gaussian fit on correct feedback only; highlights wrong feedback.
    Oracle,
}

impl SimModel {
    pub const ALL: [SimModel; 3] = [SimModel::Ard, SimModel::Lg, SimModel::Oracle];

    fn kind(self) -> ModelKind {
        match self {
            SimModel::Ard => ModelKind::Ard,
            SimModel::Lg | SimModel::Oracle => ModelKind::Lg,
        }
    }

    fn policy(self) -> HighlightPolicy {
        match self {
            SimModel::Ard => HighlightPolicy::LowestWeight,
            SimModel::Lg => HighlightPolicy::UniformRandom,
            SimModel::Oracle => HighlightPolicy::OracleTruth,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimModel::Ard => "ARD",
            SimModel::Lg => "LG",
            SimModel::Oracle => "Oracle",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            _ => Err(Error::Validation(format!("unknown scenario {s:?}"))),
        }
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ard" => Ok(SimModel::Ard),
            "lg" => Ok(SimModel::Lg),
            "oracle" => Ok(SimModel::Oracle),
            _ => Err(Error::Validation(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub list_size: usize,
    pub steps: usize,
    pub sessions: usize,
    pub scenario: Scenario,
    pub model: SimModel,
    pub noise: NoiseProfile,
    pub hyper: Hyperparameters,
    pub rng_seed: u64,
    /// Keep the two seed positives out of highlighting.
    pub exempt_seeds: bool,
    pub recency_window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            list_size: 50,
            steps: 100,
            sessions: 50,
            scenario: Scenario::A,
            model: SimModel::Ard,
            noise: NoiseProfile::default(),
            hyper: Hyperparameters::SIMULATION,
            rng_seed: 0,
            exempt_seeds: true,
            recency_window: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.list_size == 0 || self.steps == 0 || self.sessions == 0 {
            return Err(Error::Validation("list size, steps and sessions must be positive".into()));
        }
        self.noise.validate()?;
        self.hyper.validate()
    }
}

/// Dataset shape used by the simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSettings {
    pub groups: usize,
    pub per_group: usize,
    pub corpus: CorpusSettings,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            groups: 20,
            per_group: 100,
            corpus: CorpusSettings::SIMULATION,
        }
    }
}

/// A labelled corpus with dense features cached for fitting.
pub struct SimData {
    pub corpus: Corpus,
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
    groups: Vec<String>,
    members: Vec<Vec<DocId>>,
}

impl SimData {
    pub fn new(corpus: Corpus) -> Result<Self> {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for doc in &corpus.docs {
            let label = doc
                .label
                .clone()
                .ok_or_else(|| Error::Validation(format!("document {} has no group label", doc.name)))?;
            let n = index.len();
            index.entry(label).or_insert(n);
        }
        let groups: Vec<String> = {
            let mut g: Vec<(String, usize)> = index.iter().map(|(k, v)| (k.clone(), *v)).collect();
            g.sort_by_key(|(_, v)| *v);
            g.into_iter().map(|(k, _)| k).collect()
        };
        let mut members = vec![Vec::new(); groups.len()];
        let mut labels = Vec::with_capacity(corpus.len());
        let mut features = Vec::with_capacity(corpus.len());
        for doc in &corpus.docs {
            let g = index[doc.label.as_deref().expect("checked above")];
            labels.push(g);
            members[g].push(doc.doc_id);
            features.push(corpus.features(doc.doc_id).expect("document exists"));
        }
        Ok(Self {
            corpus,
            features,
            labels,
            groups,
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.corpus.vocab.len()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_of(&self, doc: DocId) -> usize {
        self.labels[doc.0 as usize]
    }

    pub fn group_size(&self, group: usize) -> usize {
        self.members[group].len()
    }

    /// Ranks every document by `mᵀx`.
    pub fn rank(&self, phi_mean: &[f64], top: usize) -> RankedList {
        let scored = self
            .corpus
            .docs
            .iter()
            .map(|d| (d.doc_id, d.tfidf.dot_dense(phi_mean)))
            .collect();
        RankedList::from_scores(scored, top)
    }
}

/// F1 of a result list against a target group of `group_size` documents.
pub fn f1_of_list(hits: usize, list_size: usize, group_size: usize) -> f64 {
    if hits == 0 || list_size == 0 || group_size == 0 {
        return 0.0;
    }
    let p = hits as f64 / list_size as f64;
    let r = hits as f64 / group_size as f64;
    2.0 * p * r / (p + r)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub target_group: String,
    pub f1: Vec<f64>,
    pub fit_seconds: Vec<f64>,
    /// Observations fitted at each step.
    pub observations: Vec<usize>,
    pub highlights: usize,
    pub true_highlights: usize,
    pub revisions: usize,
    pub locks: usize,
}

/// What a per-session random stream is used for. Separate streams keep the
/// simulated user's behaviour identical across models and scenarios for as
/// long as the lists they are shown agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    User = 1,
    Fit = 2,
    Highlight = 3,
}

/// Stream `session` of the generator for `purpose`.
pub fn session_rng(experiment_seed: u64, session: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(experiment_seed.wrapping_mul(4).wrapping_add(purpose as u64));
    rng.set_stream(session);
    rng
}

pub fn run_session(data: &SimData, config: &SimConfig, session: u64) -> Result<SessionOutcome> {
    config.validate()?;
    let mut rng = session_rng(config.rng_seed, session, Stream::User);
    let mut fit_rng = session_rng(config.rng_seed, session, Stream::Fit);
    let mut highlight_rng = session_rng(config.rng_seed, session, Stream::Highlight);
    let target = rng.random_range(0..data.groups.len());
    let group = &data.members[target];
    if group.len() < 2 {
        return Err(Error::InsufficientData {
            group: data.groups[target].clone(),
            found: group.len(),
            wanted: 2,
        });
    }
    let first = rng.random_range(0..group.len());
    let second = (first + rng.random_range(1..group.len())) % group.len();

    let relevant = |d: DocId| data.group_of(d) == target;
    let truth = |d: DocId| if relevant(d) { config.noise.value_positive } else { config.noise.value_negative };

    let mut timeline: Timeline<DocId> = Timeline::new(config.recency_window);
    for &i in &[first, second] {
        let mode = if config.exempt_seeds { WeightMode::Locked } else { WeightMode::Free };
        timeline.push(group[i], config.noise.value_positive, mode, FeedbackSource::Simulated, config.exempt_seeds);
    }

    let mut out = SessionOutcome {
        target_group: data.groups[target].clone(),
        ..SessionOutcome::default()
    };
    for _ in 0..config.steps {
        let observations = timeline.observations(|d| Some(data.features[d.0 as usize].clone()));
        let request = FitRequest {
            observations: oracle_filter(config, &timeline, observations, &truth),
            dim: data.dim(),
            hyper: config.hyper,
            model_kind: config.model.kind(),
            rng_seed: fit_rng.random(),
        };
        let started = Instant::now();
        let posterior = fit(&request)?;
        out.fit_seconds.push(started.elapsed().as_secs_f64());
        out.observations.push(request.observations.len());

        let list = data.rank(posterior.phi_mean.as_slice(), config.list_size);
        let hits = list.doc_ids.iter().filter(|d| relevant(**d)).count();
        out.f1.push(f1_of_list(hits, config.list_size, data.group_size(target)));

        if config.scenario != Scenario::A {
            let picked = select_highlight_for_simulation(&timeline, &posterior, config.model.policy(), &mut highlight_rng, |e| {
                e.value == truth(e.target)
            });
            if let Some(id) = picked {
                out.highlights += 1;
                let entry = timeline.get(id)?;
                let correct = truth(entry.target);
                let wrong = entry.value != correct;
                out.true_highlights += usize::from(wrong);
                match (config.scenario, wrong) {
                    (Scenario::B | Scenario::C, true) => {
                        timeline.set_value(id, correct)?;
                        out.revisions += 1;
                    }
                    (Scenario::B | Scenario::D, false) => {
                        timeline.lock(id)?;
                        out.locks += 1;
                    }
                    _ => {}
                }
            }
        }

        let rated = |d: DocId| timeline.find_active(&d).is_some();
        if let Some(fb) = simulate_step_feedback(&list.doc_ids, &relevant, &rated, &config.noise, &mut rng) {
            timeline.upsert(fb.doc, fb.value, FeedbackSource::Simulated)?;
        }
    }
    Ok(out)
}

/// The Oracle only fits feedback that agrees with the truth.
fn oracle_filter(
    config: &SimConfig,
    timeline: &Timeline<DocId>,
    mut observations: Vec<Observation>,
    truth: &dyn Fn(DocId) -> f64,
) -> Vec<Observation> {
    if config.model == SimModel::Oracle {
        observations.retain(|o| {
            let doc = timeline
                .get(EntryId(o.id.0))
                .map(|e| e.target)
                .expect("observation comes from the timeline");
            o.value == truth(doc)
        });
    }
    observations
}
