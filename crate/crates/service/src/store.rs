//! Session persistence: an append-only operation log per session plus
//! occasional snapshots.
//!
//! Log files hold one JSON record per line, `{seq, op, payload, timestamp}`.
//! Replaying a log from its `create` record reproduces the session exactly,
//! since every fit is seeded from the session configuration.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use relfeed_core::corpus::Corpus;
use relfeed_core::session::{ArchivedList, EntryId, FeedbackSource, SessionConfig, SessionState};
use relfeed_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum Op {
    Create {
        query: String,
        config: SessionConfig,
        /// Archived lists as they were when the session started.
        archived: Vec<ArchivedList>,
    },
    Feedback {
        term: String,
        value: f64,
        source: FeedbackSource,
    },
    Adjust {
        entry_id: EntryId,
        value: f64,
    },
    Lock {
        entry_id: EntryId,
    },
    Delete {
        entry_id: EntryId,
    },
    RemoveArchive {
        session_id: String,
    },
}

impl Op {
    /// Applies a mutation. `Create` is not a mutation and is rejected.
    pub fn apply(&self, state: &mut SessionState, corpus: &Corpus) -> Result<()> {
        match self {
            Op::Create { .. } => Err(Error::Validation("session already exists".into())),
            Op::Feedback { term, value, source } => state.apply_feedback(corpus, term, *value, *source).map(drop),
            Op::Adjust { entry_id, value } => state.adjust_feedback(corpus, *entry_id, *value),
            Op::Lock { entry_id } => state.lock_feedback(corpus, *entry_id),
            Op::Delete { entry_id } => state.delete_feedback(corpus, *entry_id),
            Op::RemoveArchive { session_id } => state.remove_archived(session_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub op: Op,
    pub timestamp: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: SessionState,
}

fn format_error(what: &'static str, e: impl ToString) -> Error {
    Error::Format {
        what,
        detail: e.to_string(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where logs and snapshots live; `None` keeps sessions in memory only.
#[derive(Clone, Debug, Default)]
pub struct Store {
    dir: Option<PathBuf>,
}

impl Store {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| io_error(d, e))?;
        }
        Ok(Self { dir })
    }

    pub fn in_memory() -> Self {
        Self { dir: None }
    }

    pub fn is_persistent(&self) -> bool {
        self.dir.is_some()
    }

    fn path(&self, session_id: &str, ext: &str) -> Option<PathBuf> {
        // ids are server-generated, but never trust a path component
        if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return None;
        }
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.{ext}")))
    }

    pub fn log_path(&self, session_id: &str) -> Option<PathBuf> {
        self.path(session_id, "log.jsonl")
    }

    pub fn append(&self, session_id: &str, seq: u64, op: &Op) -> Result<()> {
        let Some(path) = self.log_path(session_id) else {
            return Ok(());
        };
        let record = LogRecord {
            seq,
            op: op.clone(),
            timestamp: Utc::now(),
        };
        let mut line = serde_json::to_string(&record).map_err(|e| format_error("operation log", e))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_error(&path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| io_error(&path, e))
    }

    pub fn read_log(&self, session_id: &str) -> Result<Option<Vec<LogRecord>>> {
        let Some(path) = self.log_path(session_id) else {
            return Ok(None);
        };
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_error(&path, e)),
        };
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| io_error(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| format_error("operation log", e))?);
        }
        Ok(Some(records))
    }

    pub fn write_snapshot(&self, session_id: &str, seq: u64, state: &SessionState) -> Result<()> {
        let Some(path) = self.path(session_id, "snapshot.json") else {
            return Ok(());
        };
        let text = serde_json::to_string(&SnapshotRef { seq, state }).map_err(|e| format_error("snapshot", e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| io_error(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))
    }

    fn read_snapshot(&self, session_id: &str) -> Result<Option<Snapshot>> {
        let Some(path) = self.path(session_id, "snapshot.json") else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| format_error("snapshot", e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_error(&path, e)),
        }
    }

    /// Rebuilds a session from its snapshot and the log records after it,
    /// or from the log alone. Returns the state and the last applied seq.
    pub fn restore(&self, session_id: &str, corpus: &Corpus) -> Result<Option<(SessionState, u64)>> {
        let log = self.read_log(session_id)?.unwrap_or_default();
        let (mut state, mut seq) = match self.read_snapshot(session_id)? {
            Some(s) => (s.state, s.seq),
            None => match log.first() {
                Some(LogRecord {
                    seq,
                    op: Op::Create { query, config, archived },
                    ..
                }) => (SessionState::start(session_id, query, corpus, *config, archived.clone())?, *seq),
                Some(_) => return Err(format_error("operation log", "log does not start with create")),
                None => return Ok(None),
            },
        };
        let after = seq;
        for record in log.iter().filter(|r| r.seq > after) {
            record.op.apply(&mut state, corpus)?;
            seq = record.seq;
        }
        Ok(Some((state, seq)))
    }

    /// Replays only the log, ignoring any snapshot.
    pub fn replay_log(&self, session_id: &str, corpus: &Corpus) -> Result<Option<(SessionState, u64)>> {
        let Some(log) = self.read_log(session_id)? else {
            return Ok(None);
        };
        let mut iter = log.iter();
        let (mut state, mut seq) = match iter.next() {
            Some(LogRecord {
                seq,
                op: Op::Create { query, config, archived },
                ..
            }) => (SessionState::start(session_id, query, corpus, *config, archived.clone())?, *seq),
            Some(_) => return Err(format_error("operation log", "log does not start with create")),
            None => return Ok(None),
        };
        for record in iter {
            record.op.apply(&mut state, corpus)?;
            seq = record.seq;
        }
        Ok(Some((state, seq)))
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    seq: u64,
    state: &'a SessionState,
}

impl Store {
    /// Marks a session closed, keeping its keywords for later import.
    pub fn write_archive(&self, session_id: &str, archive: Option<&ArchivedList>) -> Result<()> {
        let Some(path) = self.path(session_id, "archive.json") else {
            return Ok(());
        };
        let text = serde_json::to_string(&archive).map_err(|e| format_error("archive", e))?;
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }

    /// `None` if the session was never closed; the inner option is empty
    /// for sessions closed without any feedback.
    pub fn read_archive(&self, session_id: &str) -> Result<Option<Option<ArchivedList>>> {
        let Some(path) = self.path(session_id, "archive.json") else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| format_error("archive", e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_error(&path, e)),
        }
    }
}
