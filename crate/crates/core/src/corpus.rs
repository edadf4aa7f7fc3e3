//! Tokenization, document-frequency-thresholded vocabularies and TF-IDF vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::FeatureVector;

/// Lowercases, splits on non-alphanumerics and drops tokens shorter than two
/// characters. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<f64>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the terms whose document frequency lies in `[min_df, max_df]`,
    /// sorted lexicographically. `idf = ln(N / df_count)`.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], max_df: f64, min_df: f64) -> Result<Self> {
        if !(0.0 <= min_df && min_df < max_df && max_df <= 1.0) {
            return Err(Error::Validation(format!(
                "document-frequency thresholds must satisfy 0 <= min_df < max_df <= 1, got [{min_df}, {max_df}]"
            )));
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *counts.entry(term).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut terms = Vec::new();
        let mut document_frequency = Vec::new();
        let mut idf = Vec::new();
        for (term, count) in counts {
            let df = count as f64 / n;
            if df >= min_df && df <= max_df {
                terms.push(term.to_string());
                document_frequency.push(df);
                idf.push((n / count as f64).ln());
            }
        }
        if terms.is_empty() {
            return Err(Error::EmptyVocabulary { min_df, max_df });
        }
        Ok(Self::from_parts(terms, document_frequency, idf))
    }

    fn from_parts(terms: Vec<String>, document_frequency: Vec<f64>, idf: Vec<f64>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            document_frequency,
            idf,
            index,
        }
    }

    fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn document_frequency(&self) -> &[f64] {
        &self.document_frequency
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Output of [`vectorize`]. `empty` is set when no vocabulary term occurs.
#[derive(Clone, Debug, PartialEq)]
pub struct Vectorized {
    pub features: FeatureVector,
    pub empty: bool,
}

/// Raw term count times idf, L2-normalized. Unknown tokens are ignored.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vectorized {
    let mut raw = vec![0.0; vocab.len()];
    for token in tokens {
        if let Some(i) = vocab.index_of(token.as_ref()) {
            raw[i] += 1.0;
        }
    }
    for (value, idf) in raw.iter_mut().zip(vocab.idf()) {
        *value *= idf;
    }
    match FeatureVector::l2_normalized(raw) {
        Ok(features) => Vectorized {
            features,
            empty: false,
        },
        Err(_) => Vectorized {
            features: FeatureVector::zeros(vocab.len()),
            empty: true,
        },
    }
}

/// Sparse view of a TF-IDF vector, indices ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        Self { indices, values }
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| v * dense[i as usize])
            .sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u32);

impl std::fmt::Display for DocId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A message as read from disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    /// Path relative to the collection root.
    pub name: String,
    pub label: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub name: String,
    pub label: Option<String>,
    pub tokens: Vec<String>,
    pub tfidf: SparseVector,
}

/// Drops a leading RFC-822 style header block up to the first blank line.
pub fn strip_headers(text: &str) -> &str {
    let first = text.lines().next().unwrap_or("");
    let looks_like_header = first
        .split_once(':')
        .map(|(k, _)| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'))
        .unwrap_or(false);
    if !looks_like_header {
        return text;
    }
    for sep in ["\r\n\r\n", "\n\n"] {
        if let Some(pos) = text.find(sep) {
            return &text[pos + sep.len()..];
        }
    }
    ""
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn read_message(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(strip_headers(&String::from_utf8_lossy(&bytes)).to_string())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads the first `per_group` messages (by file name) of the first `groups`
/// group directories (by name) of a 20-Newsgroups style tree.
pub fn load_newsgroups(
    path: impl AsRef<Path>,
    per_group: usize,
    groups: usize,
) -> Result<Vec<RawDocument>> {
    let root = path.as_ref();
    let group_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if group_dirs.len() < groups {
        return Err(Error::InsufficientData {
            group: root.display().to_string(),
            found: group_dirs.len(),
            wanted: groups,
        });
    }
    let mut docs = Vec::with_capacity(per_group * groups);
    if per_group == 0 {
        return Ok(docs);
    }
    for dir in group_dirs.into_iter().take(groups) {
        let label = file_name(&dir);
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file())
            .collect();
        if files.len() < per_group {
            return Err(Error::InsufficientData {
                group: label,
                found: files.len(),
                wanted: per_group,
            });
        }
        for file in files.into_iter().take(per_group) {
            docs.push(RawDocument {
                name: format!("{label}/{}", file_name(&file)),
                label: Some(label.clone()),
                text: read_message(&file)?,
            });
        }
    }
    Ok(docs)
}

/// Loads every file of a collection. Files directly under `path` are
/// unlabelled; files in subdirectories take the subdirectory name as label.
pub fn load_collection(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let root = path.as_ref();
    let mut docs = Vec::new();
    for entry in sorted_entries(root)? {
        if entry.is_dir() {
            let label = file_name(&entry);
            for file in sorted_entries(&entry)?.into_iter().filter(|p| p.is_file()) {
                docs.push(RawDocument {
                    name: format!("{label}/{}", file_name(&file)),
                    label: Some(label.clone()),
                    text: read_message(&file)?,
                });
            }
        } else if entry.is_file() {
            docs.push(RawDocument {
                name: file_name(&entry),
                label: None,
                text: read_message(&entry)?,
            });
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSettings {
    pub max_df: f64,
    pub min_df: f64,
}

impl CorpusSettings {
    /// Thresholds of the simulated-user experiment.
    pub const SIMULATION: CorpusSettings = CorpusSettings {
        max_df: 0.2,
        min_df: 0.04,
    };
}

/// Vocabulary plus TF-IDF vectors of every non-empty document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub settings: CorpusSettings,
    pub vocab: Vocabulary,
    pub docs: Vec<Document>,
    /// Raw documents dropped because no vocabulary term occurs in them.
    pub empty_excluded: usize,
    #[serde(skip)]
    postings: Vec<Vec<(u32, f64)>>,
}

impl Corpus {
    pub fn build(raw: Vec<RawDocument>, settings: CorpusSettings) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let tokenized: Vec<Vec<String>> = raw.iter().map(|d| tokenize(&d.text)).collect();
        let vocab = Vocabulary::build(&tokenized, settings.max_df, settings.min_df)?;
        let mut docs = Vec::with_capacity(raw.len());
        let mut empty_excluded = 0;
        for (doc, tokens) in raw.into_iter().zip(tokenized) {
            let v = vectorize(&tokens, &vocab);
            if v.empty {
                empty_excluded += 1;
                continue;
            }
            docs.push(Document {
                doc_id: DocId(docs.len() as u32),
                name: doc.name,
                label: doc.label,
                tokens,
                tfidf: SparseVector::from_dense(v.features.as_slice()),
            });
        }
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut corpus = Self {
            settings,
            vocab,
            docs,
            empty_excluded,
            postings: Vec::new(),
        };
        corpus.index_postings();
        Ok(corpus)
    }

    fn index_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.vocab.len()];
        for doc in &self.docs {
            for (&t, &w) in doc.tfidf.indices.iter().zip(&doc.tfidf.values) {
                postings[t as usize].push((doc.doc_id.0, w));
            }
        }
        self.postings = postings;
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, id: DocId) -> Option<&Document> {
        self.docs.get(id.0 as usize)
    }

    /// `(doc, weight)` pairs of every document containing the term.
    pub fn postings(&self, term_index: usize) -> &[(u32, f64)] {
        &self.postings[term_index]
    }

    /// Dense TF-IDF feature vector of a document.
    pub fn features(&self, id: DocId) -> Option<FeatureVector> {
        self.doc(id)
            .map(|d| FeatureVector::new(d.tfidf.to_dense(self.vocab.len())).expect("finite"))
    }

    /// Content hash of the inputs and settings, used to key snapshots.
    pub fn cache_key(raw: &[RawDocument], settings: &CorpusSettings) -> String {
        let mut hasher = Sha256::new();
        hasher.update(settings.max_df.to_le_bytes());
        hasher.update(settings.min_df.to_le_bytes());
        for doc in raw {
            for part in [doc.name.as_bytes(), doc.label.as_deref().unwrap_or("").as_bytes(), doc.text.as_bytes()] {
                hasher.update((part.len() as u64).to_le_bytes());
                hasher.update(part);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Reuses the snapshot at `cache` when its key matches, otherwise builds
    /// the corpus and rewrites the snapshot.
    pub fn load_or_build(
        raw: Vec<RawDocument>,
        settings: CorpusSettings,
        cache: impl AsRef<Path>,
    ) -> Result<Self> {
        let cache = cache.as_ref();
        let key = Self::cache_key(&raw, &settings);
        if let Ok(text) = fs::read_to_string(cache) {
            if let Ok(snapshot) = serde_json::from_str::<CorpusSnapshot>(&text) {
                if snapshot.key == key {
                    let mut corpus = snapshot.corpus;
                    corpus.vocab.reindex();
                    corpus.index_postings();
                    return Ok(corpus);
                }
            }
        }
        let corpus = Self::build(raw, settings)?;
        let snapshot = CorpusSnapshotRef {
            key: &key,
            corpus: &corpus,
        };
        let text = serde_json::to_string(&snapshot).map_err(|e| Error::Format {
            what: "corpus snapshot",
            detail: e.to_string(),
        })?;
        fs::write(cache, text).map_err(|e| Error::io(cache, e))?;
        Ok(corpus)
    }
}

#[derive(Deserialize)]
struct CorpusSnapshot {
    key: String,
    corpus: Corpus,
}

#[derive(Serialize)]
struct CorpusSnapshotRef<'a> {
    key: &'a str,
    corpus: &'a Corpus,
}
