//! Keyword features over a result slice, keyword-driven document ranking and
//! pseudo-feedback for an initial text query.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, DocId};
use crate::error::{Error, Result};
use crate::model::FeatureVector;

/// How many of the most relevant keywords drive document scores.
pub const TOP_KEYWORDS: usize = 10;

/// Default size of the result slice that keyword features are built over.
pub const SLICE_SIZE: usize = 400;

/// Cap on keyword candidates fitted per refit.
pub const MAX_CANDIDATES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordCandidate {
    pub term: String,
    /// One L2-normalized component per slice document.
    pub features: FeatureVector,
    /// Sum of the term's TF-IDF weights across the slice.
    pub slice_weight: f64,
    pub estimated_relevance: f64,
    pub displayed_relevance: f64,
}

/// Documents in descending score order; ties by ascending id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub doc_ids: Vec<DocId>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Sorts `(doc, score)` pairs and keeps the first `top_m`.
    pub fn from_scores(mut scored: Vec<(DocId, f64)>, top_m: usize) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(top_m);
        let (doc_ids, scores) = scored.into_iter().unzip();
        Self { doc_ids, scores }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.doc_ids.contains(&id)
    }
}

/// One feature vector per term occurring in the slice; component `d` is the
/// term's TF-IDF weight in slice document `d`. Terms are in vocabulary order.
pub fn build_keyword_features(slice: &[DocId], corpus: &Corpus) -> Result<Vec<KeywordCandidate>> {
    if slice.is_empty() {
        return Err(Error::EmptySlice);
    }
    let mut columns: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
    for (pos, id) in slice.iter().enumerate() {
        let doc = corpus
            .doc(*id)
            .ok_or_else(|| Error::not_found("document", id))?;
        for (&t, &w) in doc.tfidf.indices.iter().zip(&doc.tfidf.values) {
            columns.entry(t).or_default().push((pos, w));
        }
    }
    columns
        .into_iter()
        .map(|(t, entries)| {
            let mut raw = vec![0.0; slice.len()];
            let mut slice_weight = 0.0;
            for (pos, w) in entries {
                raw[pos] += w;
                slice_weight += w;
            }
            Ok(KeywordCandidate {
                term: corpus.vocab.term(t as usize).to_string(),
                features: FeatureVector::l2_normalized(raw)?,
                slice_weight,
                estimated_relevance: 0.0,
                displayed_relevance: 0.0,
            })
        })
        .collect()
}

/// Keeps the `max` candidates with the largest slice weight plus every term in
/// `keep`, preserving vocabulary order.
pub fn cap_candidates(
    candidates: Vec<KeywordCandidate>,
    max: usize,
    keep: &HashSet<String>,
) -> Vec<KeywordCandidate> {
    if candidates.len() <= max {
        return candidates;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .slice_weight
            .total_cmp(&candidates[a].slice_weight)
            .then_with(|| candidates[a].term.cmp(&candidates[b].term))
    });
    let mut chosen = vec![false; candidates.len()];
    for &i in order.iter().take(max) {
        chosen[i] = true;
    }
    candidates
        .into_iter()
        .zip(chosen)
        .filter(|(c, chosen)| *chosen || keep.contains(&c.term))
        .map(|(c, _)| c)
        .collect()
}

/// Relevance shown for a keyword: the clamped estimate, averaged with the
/// user's own feedback when there is some.
pub fn displayed_keyword_relevance(estimated: f64, user_feedback: Option<f64>) -> f64 {
    let clamped = estimated.clamp(0.0, 1.0);
    match user_feedback {
        Some(feedback) => 0.5 * (clamped + feedback),
        None => clamped,
    }
}

/// The `TOP_KEYWORDS` keywords with the highest displayed relevance, ties by term.
pub fn most_relevant_keywords(keywords: &[KeywordCandidate], n: usize) -> Vec<&KeywordCandidate> {
    let mut sorted: Vec<&KeywordCandidate> = keywords.iter().collect();
    sorted.sort_by(|a, b| {
        b.displayed_relevance
            .total_cmp(&a.displayed_relevance)
            .then_with(|| a.term.cmp(&b.term))
    });
    sorted.truncate(n);
    sorted
}

/// Scores every document by `Σ relevance_k · tfidf_k(doc)` over the most
/// relevant keywords and returns the best `top_m`.
pub fn rank_documents(keywords: &[KeywordCandidate], corpus: &Corpus, top_m: usize) -> RankedList {
    let mut scores = vec![0.0; corpus.len()];
    for kw in most_relevant_keywords(keywords, TOP_KEYWORDS) {
        let Some(t) = corpus.vocab.index_of(&kw.term) else {
            continue;
        };
        for &(doc, w) in corpus.postings(t) {
            scores[doc as usize] += kw.displayed_relevance * w;
        }
    }
    let scored = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| (DocId(i as u32), s))
        .collect();
    RankedList::from_scores(scored, top_m)
}

/// Documents by TF-IDF cosine similarity to the query alone; only documents
/// sharing at least one term are returned.
pub fn retrieve(query: &str, corpus: &Corpus, retrieval_k: usize) -> Result<RankedList> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(Error::Validation("query is empty".into()));
    }
    let q = crate::corpus::vectorize(&tokens, &corpus.vocab);
    if q.empty {
        return Err(Error::NoResults);
    }
    let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
    for (t, &qw) in q.features.as_slice().iter().enumerate() {
        if qw == 0.0 {
            continue;
        }
        for &(doc, w) in corpus.postings(t) {
            *scores.entry(doc).or_default() += qw * w;
        }
    }
    let scored: Vec<(DocId, f64)> = scores
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(d, s)| (DocId(d), s))
        .collect();
    if scored.is_empty() {
        return Err(Error::NoResults);
    }
    Ok(RankedList::from_scores(scored, retrieval_k))
}

/// Selects the terms at least half as common as the most common one, valued
/// `count / max_count`. Sorted by value, then term.
pub fn pseudo_feedback_from_counts(counts: &[(String, usize)]) -> Vec<(String, f64)> {
    let Some(max) = counts.iter().map(|(_, c)| *c).max().filter(|&m| m > 0) else {
        return Vec::new();
    };
    let mut out: Vec<(String, f64)> = counts
        .iter()
        .filter(|(_, c)| 2 * c >= max)
        .map(|(t, c)| (t.clone(), *c as f64 / max as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Pseudo-feedback for an initial query, counting in how many retrieved
/// documents each keyword occurs.
pub fn pseudo_feedback_from_query(
    query: &str,
    corpus: &Corpus,
    retrieval_k: usize,
) -> Result<Vec<(String, f64)>> {
    let retrieved = retrieve(query, corpus, retrieval_k)?;
    Ok(pseudo_feedback_from_counts(&keyword_document_counts(&retrieved.doc_ids, corpus)))
}

pub(crate) fn keyword_document_counts(docs: &[DocId], corpus: &Corpus) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for id in docs {
        if let Some(doc) = corpus.doc(*id) {
            for &t in &doc.tfidf.indices {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(t, c)| (corpus.vocab.term(t as usize).to_string(), c))
        .collect()
}
