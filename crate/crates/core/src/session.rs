//! Feedback timeline and interactive search sessions.
//!
//! [`Timeline`] holds feedback in creation order and knows which entries are
//! locked, deleted, recent or exempt. It is generic over what feedback
//! targets: keywords for interactive sessions, documents for the simulator.
//! [`SessionState`] wires a keyword timeline to the corpus, refitting the
//! user model after every mutation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId};
use crate::error::{Error, Result};
use crate::inference::{fit, FitRequest, ModelKind};
use crate::model::{
    check_feedback_value, expected_weight, predict_relevance, FeatureVector, Hyperparameters,
    ObsId, Observation, PosteriorState, WeightMode,
};
use crate::ranking::{
    build_keyword_features, cap_candidates, displayed_keyword_relevance, keyword_document_counts,
    most_relevant_keywords, pseudo_feedback_from_counts, rank_documents, retrieve,
    KeywordCandidate, RankedList, MAX_CANDIDATES, SLICE_SIZE, TOP_KEYWORDS,
};

/// Below these expected weights feedback is highlighted light, medium, dark.
pub const LIGHT_THRESHOLD: f64 = 0.65;
pub const MEDIUM_THRESHOLD: f64 = 0.55;
pub const DARK_THRESHOLD: f64 = 0.45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl EntryId {
    pub fn obs_id(self) -> ObsId {
        ObsId(self.0)
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl std::str::FromStr for EntryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('e')
            .and_then(|n| n.parse().ok())
            .map(EntryId)
            .ok_or_else(|| Error::not_found("entry", s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Highlight {
    None,
    Light,
    Medium,
    Dark,
}

/// Highlight intensity for an expected feedback accuracy.
pub fn highlight_level(expected_weight: f64) -> Highlight {
    if expected_weight < DARK_THRESHOLD {
        Highlight::Dark
    } else if expected_weight < MEDIUM_THRESHOLD {
        Highlight::Medium
    } else if expected_weight < LIGHT_THRESHOLD {
        Highlight::Light
    } else {
        Highlight::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    UserRadar,
    UserTimeline,
    PseudoFeedback,
    ArchivedSession,
    Simulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry<T> {
    pub id: EntryId,
    pub target: T,
    pub value: f64,
    pub mode: WeightMode,
    pub created_at: u64,
    pub source: FeedbackSource,
    pub highlight: Highlight,
    /// Never proposed for revision.
    pub exempt: bool,
}

impl<T> TimelineEntry<T> {
    pub fn is_active(&self) -> bool {
        self.mode != WeightMode::Deleted
    }
}

/// Chronological feedback log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline<T> {
    entries: Vec<TimelineEntry<T>>,
    next_seq: u64,
    /// The most recent entries are fitted as locked and never highlighted.
    pub recency_window: usize,
}

impl<T: Clone + PartialEq> Timeline<T> {
    pub fn new(recency_window: usize) -> Self {
        Self {
            entries: Vec::new(),
            next_seq: 0,
            recency_window,
        }
    }

    /// Entries by creation time, oldest first.
    pub fn entries(&self) -> &[TimelineEntry<T>] {
        &self.entries
    }

    /// Newest first, as displayed.
    pub fn display_order(&self) -> impl Iterator<Item = &TimelineEntry<T>> {
        self.entries.iter().rev()
    }

    pub fn active(&self) -> impl Iterator<Item = &TimelineEntry<T>> {
        self.entries.iter().filter(|e| e.is_active())
    }

    pub fn get(&self, id: EntryId) -> Result<&TimelineEntry<T>> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::not_found("entry", id))
    }

    fn get_mut(&mut self, id: EntryId) -> Result<&mut TimelineEntry<T>> {
        self.entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::not_found("entry", id))
    }

    pub fn find_active(&self, target: &T) -> Option<&TimelineEntry<T>> {
        self.entries.iter().find(|e| e.is_active() && &e.target == target)
    }

    /// Adds feedback, or replaces the value of the live entry for the same
    /// target in place. Either way the entry becomes free again.
    pub fn upsert(&mut self, target: T, value: f64, source: FeedbackSource) -> Result<EntryId> {
        check_feedback_value(value)?;
        if let Some(entry) = self
            .entries
            .iter_mut()
            .find(|e| e.is_active() && e.target == target)
        {
            entry.value = value;
            entry.mode = WeightMode::Free;
            entry.highlight = Highlight::None;
            return Ok(entry.id);
        }
        Ok(self.push(target, value, WeightMode::Free, source, false))
    }

    /// Appends an entry without the replace-in-place rule.
    pub fn push(
        &mut self,
        target: T,
        value: f64,
        mode: WeightMode,
        source: FeedbackSource,
        exempt: bool,
    ) -> EntryId {
        let id = EntryId(self.next_seq);
        self.entries.push(TimelineEntry {
            id,
            target,
            value,
            mode,
            created_at: self.next_seq,
            source,
            highlight: Highlight::None,
            exempt,
        });
        self.next_seq += 1;
        id
    }

    /// Changes a live entry's value; a locked entry becomes free.
    pub fn set_value(&mut self, id: EntryId, value: f64) -> Result<()> {
        check_feedback_value(value)?;
        let entry = self.get_mut(id)?;
        if !entry.is_active() {
            return Err(Error::not_found("entry", id));
        }
        entry.value = value;
        entry.mode = WeightMode::Free;
        entry.highlight = Highlight::None;
        Ok(())
    }

    pub fn lock(&mut self, id: EntryId) -> Result<()> {
        let entry = self.get_mut(id)?;
        if !entry.is_active() {
            return Err(Error::not_found("entry", id));
        }
        entry.mode = WeightMode::Locked;
        entry.highlight = Highlight::None;
        Ok(())
    }

    pub fn delete(&mut self, id: EntryId) -> Result<()> {
        let entry = self.get_mut(id)?;
        entry.mode = WeightMode::Deleted;
        entry.highlight = Highlight::None;
        Ok(())
    }

    /// Ids of the `recency_window` newest live entries.
    pub fn recent(&self) -> HashSet<EntryId> {
        self.entries
            .iter()
            .rev()
            .filter(|e| e.is_active())
            .take(self.recency_window)
            .map(|e| e.id)
            .collect()
    }

    /// Live entries that have features, as model observations. Recent
    /// entries are fitted as locked.
    pub fn observations<F>(&self, mut features: F) -> Vec<Observation>
    where
        F: FnMut(&T) -> Option<FeatureVector>,
    {
        let recent = self.recent();
        self.active()
            .filter_map(|e| {
                let x = features(&e.target)?;
                let mode = if recent.contains(&e.id) {
                    WeightMode::Locked
                } else {
                    e.mode
                };
                Some(Observation {
                    id: e.id.obs_id(),
                    features: x,
                    value: e.value,
                    weight_mode: mode,
                    created_at: e.created_at,
                })
            })
            .collect()
    }

    /// Live entries that are neither exempt nor recent.
    pub fn reviewable(&self) -> Vec<&TimelineEntry<T>> {
        let recent = self.recent();
        self.entries
            .iter()
            .filter(|e| e.is_active() && !e.exempt && !recent.contains(&e.id))
            .collect()
    }

    /// Reviewable entries whose accuracy is still inferred, i.e. not locked.
    pub fn eligible_for_highlight(&self) -> Vec<&TimelineEntry<T>> {
        self.reviewable()
            .into_iter()
            .filter(|e| e.mode == WeightMode::Free)
            .collect()
    }

    /// Recomputes and stores every entry's highlight level.
    pub fn compute_highlights(&mut self, posterior: &PosteriorState) -> Vec<(EntryId, Highlight)> {
        let eligible: HashSet<EntryId> = self.eligible_for_highlight().iter().map(|e| e.id).collect();
        for entry in &mut self.entries {
            entry.highlight = if eligible.contains(&entry.id) {
                expected_weight(posterior, entry.id.obs_id())
                    .map(highlight_level)
                    .unwrap_or(Highlight::None)
            } else {
                Highlight::None
            };
        }
        self.entries.iter().map(|e| (e.id, e.highlight)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HighlightPolicy {
    /// Smallest expected weight, ties broken uniformly.
    LowestWeight,
    UniformRandom,
    /// Uniformly among entries whose value disagrees with the truth.
    OracleTruth,
}

/// Picks the one entry the simulated user is asked to re-evaluate.
///
/// Only [`HighlightPolicy::LowestWeight`] skips locked entries: for the
/// other policies locking says nothing about where the errors are.
///
/// `is_correct` reports whether an entry's value agrees with ground truth;
/// only [`HighlightPolicy::OracleTruth`] consults it.
pub fn select_highlight_for_simulation<T, R, F>(
    timeline: &Timeline<T>,
    posterior: &PosteriorState,
    policy: HighlightPolicy,
    rng: &mut R,
    mut is_correct: F,
) -> Option<EntryId>
where
    T: Clone + PartialEq,
    R: Rng + ?Sized,
    F: FnMut(&TimelineEntry<T>) -> bool,
{
    let pool: Vec<EntryId> = match policy {
        HighlightPolicy::LowestWeight => {
            let weighted: Vec<(EntryId, f64)> = timeline
                .eligible_for_highlight()
                .iter()
                .filter_map(|e| expected_weight(posterior, e.id.obs_id()).ok().map(|w| (e.id, w)))
                .collect();
            let min = weighted.iter().map(|(_, w)| *w).fold(f64::INFINITY, f64::min);
            weighted
                .into_iter()
                .filter(|(_, w)| *w == min)
                .map(|(id, _)| id)
                .collect()
        }
        // Locks carry no information for these policies, so locked entries
        // stay in the pool.
        HighlightPolicy::UniformRandom => timeline.reviewable().iter().map(|e| e.id).collect(),
        HighlightPolicy::OracleTruth => timeline
            .reviewable()
            .into_iter()
            .filter(|e| !is_correct(e))
            .map(|e| e.id)
            .collect(),
    };
    if pool.is_empty() {
        None
    } else {
        Some(pool[rng.random_range(0..pool.len())])
    }
}

/// Keywords (with their last values) of a finished session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedList {
    pub session_id: String,
    pub terms: Vec<(String, f64)>,
}

/// Distinct terms of a timeline with their latest values, oldest first.
/// `None` for an empty timeline.
pub fn archive_timeline(session_id: &str, timeline: &Timeline<String>) -> Option<ArchivedList> {
    let mut order: Vec<String> = Vec::new();
    let mut last: HashMap<String, f64> = HashMap::new();
    for e in timeline.entries() {
        if !last.contains_key(&e.target) {
            order.push(e.target.clone());
        }
        last.insert(e.target.clone(), e.value);
    }
    if order.is_empty() {
        return None;
    }
    Some(ArchivedList {
        session_id: session_id.to_string(),
        terms: order.into_iter().map(|t| {
            let v = last[&t];
            (t, v)
        }).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub hyper: Hyperparameters,
    pub model_kind: ModelKind,
    pub slice_size: usize,
    pub max_candidates: usize,
    pub recency_window: usize,
    pub rng_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::INTERACTIVE,
            model_kind: ModelKind::Ard,
            slice_size: SLICE_SIZE,
            max_candidates: MAX_CANDIDATES,
            recency_window: 1,
            rng_seed: 0x5eed,
        }
    }
}

/// An interactive search session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub query: String,
    pub config: SessionConfig,
    pub timeline: Timeline<String>,
    pub archived_keywords: Vec<ArchivedList>,
    pub posterior: PosteriorState,
    /// Documents the current keyword features (and posterior) are built on.
    pub fit_slice: Vec<DocId>,
    /// Keyword candidates with relevances from the current posterior.
    pub keywords: Vec<KeywordCandidate>,
    /// Ranking produced by the current posterior.
    pub current_slice: RankedList,
}

impl SessionState {
    /// Bootstraps a session from a text query via pseudo-feedback.
    pub fn start(
        session_id: impl Into<String>,
        query: &str,
        corpus: &Corpus,
        config: SessionConfig,
        archived_keywords: Vec<ArchivedList>,
    ) -> Result<Self> {
        let retrieved = retrieve(query, corpus, config.slice_size)?;
        let pseudo = pseudo_feedback_from_counts(&keyword_document_counts(&retrieved.doc_ids, corpus));
        let mut timeline = Timeline::new(config.recency_window);
        for (term, value) in pseudo {
            timeline.upsert(term, value, FeedbackSource::PseudoFeedback)?;
        }
        let mut state = Self {
            session_id: session_id.into(),
            query: query.to_string(),
            config,
            timeline,
            archived_keywords,
            posterior: PosteriorState::prior(&config.hyper, retrieved.len()),
            fit_slice: Vec::new(),
            keywords: Vec::new(),
            current_slice: retrieved,
        };
        state.refit(corpus)?;
        Ok(state)
    }

    fn is_known_term(&self, term: &str) -> bool {
        self.keywords.iter().any(|k| k.term == term)
            || self.timeline.find_active(&term.to_string()).is_some()
            || self
                .archived_keywords
                .iter()
                .any(|a| a.terms.iter().any(|(t, _)| t == term))
    }

    /// Radar or archived-keyword feedback on a term.
    pub fn apply_feedback(
        &mut self,
        corpus: &Corpus,
        term: &str,
        value: f64,
        source: FeedbackSource,
    ) -> Result<EntryId> {
        check_feedback_value(value)?;
        if !self.is_known_term(term) || corpus.vocab.index_of(term).is_none() {
            return Err(Error::not_found("keyword", term));
        }
        let id = self.timeline.upsert(term.to_string(), value, source)?;
        self.refit(corpus)?;
        Ok(id)
    }

    /// Timeline bar click on an existing entry.
    pub fn adjust_feedback(&mut self, corpus: &Corpus, id: EntryId, value: f64) -> Result<()> {
        self.timeline.set_value(id, value)?;
        self.refit(corpus)
    }

    pub fn lock_feedback(&mut self, corpus: &Corpus, id: EntryId) -> Result<()> {
        if self.timeline.get(id)?.mode == WeightMode::Locked {
            return Ok(());
        }
        self.timeline.lock(id)?;
        self.refit(corpus)
    }

    pub fn delete_feedback(&mut self, corpus: &Corpus, id: EntryId) -> Result<()> {
        if !self.timeline.get(id)?.is_active() {
            return Ok(());
        }
        self.timeline.delete(id)?;
        self.refit(corpus)
    }

    pub fn remove_archived(&mut self, session_id: &str) -> Result<()> {
        let before = self.archived_keywords.len();
        self.archived_keywords.retain(|a| a.session_id != session_id);
        if self.archived_keywords.len() == before {
            return Err(Error::not_found("archived list", session_id));
        }
        Ok(())
    }

    pub fn archive(&self) -> Option<ArchivedList> {
        archive_timeline(&self.session_id, &self.timeline)
    }

    pub fn highlights(&self) -> Vec<(EntryId, Highlight)> {
        self.timeline
            .display_order()
            .map(|e| (e.id, e.highlight))
            .collect()
    }

    /// The keywords shown on the radar.
    pub fn radar_keywords(&self) -> Vec<&KeywordCandidate> {
        most_relevant_keywords(&self.keywords, TOP_KEYWORDS)
    }

    /// The best `n` documents.
    pub fn top_documents(&self, n: usize) -> &[DocId] {
        &self.current_slice.doc_ids[..n.min(self.current_slice.len())]
    }

    /// Documents keyword features are built over: the current ranking's top
    /// slice, plus the best document for any live timeline term it misses.
    fn next_slice(&self, corpus: &Corpus) -> Vec<DocId> {
        let mut slice: Vec<DocId> = self
            .current_slice
            .doc_ids
            .iter()
            .take(self.config.slice_size)
            .copied()
            .collect();
        let mut covered: HashSet<usize> = HashSet::new();
        for id in &slice {
            if let Some(doc) = corpus.doc(*id) {
                covered.extend(doc.tfidf.indices.iter().map(|&t| t as usize));
            }
        }
        for entry in self.timeline.active() {
            let Some(t) = corpus.vocab.index_of(&entry.target) else {
                continue;
            };
            if covered.contains(&t) {
                continue;
            }
            let best = corpus
                .postings(t)
                .iter()
                .filter(|(d, _)| !slice.contains(&DocId(*d)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some(&(d, _)) = best {
                slice.push(DocId(d));
                if let Some(doc) = corpus.doc(DocId(d)) {
                    covered.extend(doc.tfidf.indices.iter().map(|&t| t as usize));
                }
            }
        }
        slice
    }

    fn candidates(&self, corpus: &Corpus, slice: &[DocId]) -> Result<Vec<KeywordCandidate>> {
        let keep: HashSet<String> = self.timeline.active().map(|e| e.target.clone()).collect();
        Ok(cap_candidates(
            build_keyword_features(slice, corpus)?,
            self.config.max_candidates,
            &keep,
        ))
    }

    fn request_for(&self, candidates: &[KeywordCandidate], dim: usize) -> FitRequest {
        let features: HashMap<&str, &FeatureVector> =
            candidates.iter().map(|k| (k.term.as_str(), &k.features)).collect();
        FitRequest {
            observations: self
                .timeline
                .observations(|t| features.get(t.as_str()).map(|f| (*f).clone())),
            dim,
            hyper: self.config.hyper,
            model_kind: self.config.model_kind,
            rng_seed: self.config.rng_seed,
        }
    }

    /// The request whose fit produced the current posterior.
    pub fn fit_request(&self, corpus: &Corpus) -> Result<FitRequest> {
        let candidates = self.candidates(corpus, &self.fit_slice)?;
        Ok(self.request_for(&candidates, self.fit_slice.len()))
    }

    fn refit(&mut self, corpus: &Corpus) -> Result<()> {
        let slice = self.next_slice(corpus);
        let mut candidates = self.candidates(corpus, &slice)?;
        let request = self.request_for(&candidates, slice.len());
        let posterior = fit(&request)?;
        for kw in &mut candidates {
            kw.estimated_relevance = predict_relevance(&posterior, &kw.features)?;
            let feedback = self.timeline.find_active(&kw.term).map(|e| e.value);
            kw.displayed_relevance = displayed_keyword_relevance(kw.estimated_relevance, feedback);
        }
        self.current_slice = rank_documents(&candidates, corpus, self.config.slice_size);
        self.keywords = candidates;
        self.fit_slice = slice;
        self.posterior = posterior;
        self.timeline.compute_highlights(&self.posterior);
        Ok(())
    }
}
