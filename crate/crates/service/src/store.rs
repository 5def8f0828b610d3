//! Append-only event log with optional state snapshots.
//!
//! The file log keeps one JSON line per committed batch in `events.jsonl`.
//! A line without its trailing newline is a torn write from a crash; it is
//! dropped and truncated on open. Snapshots are written to a temporary file
//! and renamed into place.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Batch;
use crate::state::State;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt event log at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("serializing: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    /// Sequence number of the last batch folded into `state`.
    pub seq: u64,
    pub state: State,
}

/// What a log holds on open: the latest snapshot and the batches after it.
#[derive(Debug, Default)]
pub struct Recovered {
    pub snapshot: Option<Snapshot>,
    pub batches: Vec<Batch>,
}

pub trait EventLog: Send {
    /// Durably appends one batch.
    fn append(&mut self, batch: &Batch) -> Result<(), StoreError>;
    fn recover(&mut self) -> Result<Recovered, StoreError>;
    fn save_snapshot(&mut self, snapshot: &Snapshot) -> Result<(), StoreError>;
}

fn parse_lines(text: &str, after: u64) -> Result<(Vec<Batch>, usize), StoreError> {
    let mut batches = Vec::new();
    let mut good_len = 0;
    let mut last_seq = 0;
    for (i, chunk) in text.split_inclusive('\n').enumerate() {
        if !chunk.ends_with('\n') {
            // torn tail
            break;
        }
        let line = chunk.trim_end();
        good_len += chunk.len();
        if line.is_empty() {
            continue;
        }
        let batch: Batch = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        if batch.seq <= last_seq {
            return Err(StoreError::Corrupt {
                line: i + 1,
                message: format!("sequence {} after {}", batch.seq, last_seq),
            });
        }
        last_seq = batch.seq;
        if batch.seq > after {
            batches.push(batch);
        }
    }
    Ok((batches, good_len))
}

fn encode(batch: &Batch) -> Result<String, StoreError> {
    let mut line = serde_json::to_string(batch)?;
    line.push('\n');
    Ok(line)
}

/// Log stored under a data directory.
#[derive(Debug)]
pub struct FileLog {
    dir: PathBuf,
    file: File,
}

impl FileLog {
    pub const EVENTS: &'static str = "events.jsonl";
    pub const SNAPSHOT: &'static str = "snapshot.json";

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_owned();
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(dir.join(Self::EVENTS))?;
        Ok(Self { dir, file })
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(Self::EVENTS)
    }

    fn read_snapshot(&self) -> Result<Option<Snapshot>, StoreError> {
        match fs::read_to_string(self.dir.join(Self::SNAPSHOT)) {
            Ok(text) => {
                let mut snap: Snapshot = serde_json::from_str(&text)?;
                snap.state.restore_indexes();
                Ok(Some(snap))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

impl EventLog for FileLog {
    fn append(&mut self, batch: &Batch) -> Result<(), StoreError> {
        self.file.write_all(encode(batch)?.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    fn recover(&mut self) -> Result<Recovered, StoreError> {
        let snapshot = self.read_snapshot()?;
        let text = fs::read_to_string(self.events_path())?;
        let after = snapshot.as_ref().map_or(0, |s| s.seq);
        let (batches, good_len) = parse_lines(&text, after)?;
        if good_len < text.len() {
            tracing::warn!(dropped = text.len() - good_len, "truncating torn write at end of event log");
            self.file.set_len(good_len as u64)?;
            self.file.sync_data()?;
        }
        Ok(Recovered { snapshot, batches })
    }

    fn save_snapshot(&mut self, snapshot: &Snapshot) -> Result<(), StoreError> {
        let tmp = self.dir.join("snapshot.json.tmp");
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, snapshot)?;
            f.sync_all()?;
        }
        fs::rename(tmp, self.dir.join(Self::SNAPSHOT))?;
        Ok(())
    }
}

#[derive(Debug, Default)]
struct MemoryInner {
    text: String,
    snapshot: Option<String>,
}

/// Log kept in memory, serialized exactly like the file log. Clones share
/// storage, so a clone outlives a dropped service like files on disk would.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog(Arc<Mutex<MemoryInner>>);

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Raw log contents.
    pub fn contents(&self) -> String {
        self.0.lock().text.clone()
    }

    /// Appends raw bytes, e.g. to simulate a torn write.
    pub fn append_raw(&self, text: &str) {
        self.0.lock().text.push_str(text);
    }
}

impl EventLog for MemoryLog {
    fn append(&mut self, batch: &Batch) -> Result<(), StoreError> {
        let line = encode(batch)?;
        self.0.lock().text.push_str(&line);
        Ok(())
    }

    fn recover(&mut self) -> Result<Recovered, StoreError> {
        let mut inner = self.0.lock();
        let snapshot = match &inner.snapshot {
            Some(text) => {
                let mut snap: Snapshot = serde_json::from_str(text)?;
                snap.state.restore_indexes();
                Some(snap)
            }
            None => None,
        };
        let (batches, good_len) = parse_lines(&inner.text, snapshot.as_ref().map_or(0, |s| s.seq))?;
        inner.text.truncate(good_len);
        Ok(Recovered { snapshot, batches })
    }

    fn save_snapshot(&mut self, snapshot: &Snapshot) -> Result<(), StoreError> {
        self.0.lock().snapshot = Some(serde_json::to_string(snapshot)?);
        Ok(())
    }
}
