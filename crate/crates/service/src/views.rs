//! Request and response bodies.

use relfeed_core::corpus::{Corpus, DocId};
use relfeed_core::session::{ArchivedList, FeedbackSource, Highlight, SessionState};
use relfeed_core::WeightMode;
use serde::{Deserialize, Serialize};

/// Documents shown per response.
pub const TOP_DOCUMENTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub query: String,
    /// Sessions whose keywords become available for feedback.
    #[serde(default)]
    pub import_archive: Vec<String>,
}

/// Feedback on a keyword (`term`) or a new value for an existing timeline
/// entry (`entry_id`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub term: Option<String>,
    #[serde(default)]
    pub entry_id: Option<String>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockRequest {
    pub entry_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordView {
    pub term: String,
    pub estimated_relevance: f64,
    pub displayed_relevance: f64,
    pub feedback: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentView {
    pub doc_id: u32,
    pub name: String,
    pub label: Option<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub entry_id: String,
    pub term: String,
    pub value: f64,
    pub locked: bool,
    pub source: FeedbackSource,
    pub highlight: Highlight,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighlightView {
    pub entry_id: String,
    pub level: Highlight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedTermView {
    pub term: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchivedView {
    pub session_id: String,
    pub terms: Vec<ArchivedTermView>,
}

impl From<&ArchivedList> for ArchivedView {
    fn from(list: &ArchivedList) -> Self {
        Self {
            session_id: list.session_id.clone(),
            terms: list
                .terms
                .iter()
                .map(|(term, value)| ArchivedTermView {
                    term: term.clone(),
                    value: *value,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineView {
    /// Newest first; deleted entries are omitted.
    pub entries: Vec<EntryView>,
    pub archived: Vec<ArchivedView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub query: String,
    /// Number of mutations applied since the session was created.
    pub version: u64,
    pub keywords: Vec<KeywordView>,
    pub documents: Vec<DocumentView>,
    pub timeline: TimelineView,
    pub highlights: Vec<HighlightView>,
}

pub fn timeline_view(state: &SessionState) -> TimelineView {
    TimelineView {
        entries: state
            .timeline
            .display_order()
            .filter(|e| e.is_active())
            .map(|e| EntryView {
                entry_id: e.id.to_string(),
                term: e.target.clone(),
                value: e.value,
                locked: e.mode == WeightMode::Locked,
                source: e.source,
                highlight: e.highlight,
                created_at: e.created_at,
            })
            .collect(),
        archived: state.archived_keywords.iter().map(ArchivedView::from).collect(),
    }
}

pub fn session_view(state: &SessionState, corpus: &Corpus, version: u64) -> SessionView {
    let keywords = state
        .radar_keywords()
        .into_iter()
        .map(|k| KeywordView {
            term: k.term.clone(),
            estimated_relevance: k.estimated_relevance,
            displayed_relevance: k.displayed_relevance,
            feedback: state.timeline.find_active(&k.term).map(|e| e.value),
        })
        .collect();
    let documents = state
        .top_documents(TOP_DOCUMENTS)
        .iter()
        .zip(&state.current_slice.scores)
        .filter_map(|(id, score)| {
            corpus.doc(*id).map(|d| DocumentView {
                doc_id: id.0,
                name: d.name.clone(),
                label: d.label.clone(),
                score: *score,
            })
        })
        .collect();
    let timeline = timeline_view(state);
    let highlights = timeline
        .entries
        .iter()
        .filter(|e| e.highlight != Highlight::None)
        .map(|e| HighlightView {
            entry_id: e.entry_id.clone(),
            level: e.highlight,
        })
        .collect();
    SessionView {
        session_id: state.session_id.clone(),
        query: state.query.clone(),
        version,
        keywords,
        documents,
        timeline,
        highlights,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentDetail {
    pub doc_id: u32,
    pub name: String,
    pub label: Option<String>,
    /// Opening words of the message.
    pub preview: String,
    /// Highest-weighted indexed terms.
    pub top_terms: Vec<String>,
}

const PREVIEW_TOKENS: usize = 60;

pub fn document_detail(corpus: &Corpus, id: DocId) -> Option<DocumentDetail> {
    let doc = corpus.doc(id)?;
    let mut weighted: Vec<(u32, f64)> = doc.tfidf.indices.iter().copied().zip(doc.tfidf.values.iter().copied()).collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Some(DocumentDetail {
        doc_id: id.0,
        name: doc.name.clone(),
        label: doc.label.clone(),
        preview: doc.tokens.iter().take(PREVIEW_TOKENS).cloned().collect::<Vec<_>>().join(" "),
        top_terms: weighted
            .into_iter()
            .take(10)
            .map(|(t, _)| corpus.vocab.term(t as usize).to_string())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
