//! Operational history: an append-only JSON Lines log of executions, with
//! aggregates derived by folding it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithm::HistoryAggregate;
use crate::model::{ExecMode, ExecutionOutcome, TrustLevel};

/// One completed run. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub seq: u64,
    pub code_id: String,
    pub outcome: ExecutionOutcome,
    pub mode: ExecMode,
    pub score_after: f64,
    pub level_after: TrustLevel,
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("SequenceGap: expected seq {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("CorruptRecord: line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("StorageFailure: {0}")]
    Storage(#[from] io::Error),
}

/// Handle on `history.jsonl`. Keeps folded aggregates in memory; the file
/// stays the source of truth and [`HistoryLog::replay`] recomputes from it.
#[derive(Debug)]
pub struct HistoryLog {
    path: PathBuf,
    file: File,
    last_seq: u64,
    len: u64,
    aggregates: HashMap<String, HistoryAggregate>,
    last_records: HashMap<String, ExecutionRecord>,
    sync: bool,
}

impl HistoryLog {
    /// Open (creating if needed) and fold the existing log.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, HistoryError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)?;
        let mut aggregates = HashMap::new();
        let mut last_records = HashMap::new();
        let mut last_seq = 0;
        for_each_record(&path, |record| {
            if record.seq <= last_seq {
                return Err(format!("seq {} does not follow {last_seq}", record.seq));
            }
            last_seq = record.seq;
            aggregates
                .entry(record.code_id.clone())
                .or_insert_with(|| HistoryAggregate::empty(&record.code_id))
                .record(record.outcome);
            last_records.insert(record.code_id.clone(), record);
            Ok(())
        })?;
        let len = file.metadata()?.len();
        Ok(Self {
            path,
            file,
            last_seq,
            len,
            aggregates,
            last_records,
            sync: true,
        })
    }

    /// Whether each append is flushed to disk before returning. On by default.
    pub fn set_sync(&mut self, sync: bool) {
        self.sync = sync;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq + 1
    }

    pub fn len_bytes(&self) -> u64 {
        self.len
    }

    /// Append one record; its seq must directly follow the last one.
    pub fn append(&mut self, record: &ExecutionRecord) -> Result<(), HistoryError> {
        if record.seq != self.next_seq() {
            return Err(HistoryError::SequenceGap {
                expected: self.next_seq(),
                got: record.seq,
            });
        }
        let mut line = serde_json::to_vec(record).map_err(io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.len += line.len() as u64;
        self.last_seq = record.seq;
        self.aggregates
            .entry(record.code_id.clone())
            .or_insert_with(|| HistoryAggregate::empty(&record.code_id))
            .record(record.outcome);
        self.last_records.insert(record.code_id.clone(), record.clone());
        Ok(())
    }

    /// Drop the most recent append. Only used to back out a run whose trust
    /// update could not be persisted.
    pub(crate) fn rollback_last(&mut self, previous_len: u64) -> Result<(), HistoryError> {
        self.file.set_len(previous_len)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.len = previous_len;
        let fresh = Self::open(self.path.clone())?;
        self.last_seq = fresh.last_seq;
        self.aggregates = fresh.aggregates;
        self.last_records = fresh.last_records;
        Ok(())
    }

    /// Aggregate for `code_id` folded straight from the file.
    pub fn load_aggregate(&self, code_id: &str) -> Result<HistoryAggregate, HistoryError> {
        let mut agg = HistoryAggregate::empty(code_id);
        for_each_record(&self.path, |r| {
            if r.code_id == code_id {
                agg.record(r.outcome);
            }
            Ok(())
        })?;
        Ok(agg)
    }

    /// Aggregate for `code_id` from the in-memory fold.
    pub fn cached_aggregate(&self, code_id: &str) -> HistoryAggregate {
        self.aggregates
            .get(code_id)
            .cloned()
            .unwrap_or_else(|| HistoryAggregate::empty(code_id))
    }

    pub fn cached_aggregates(&self) -> BTreeMap<String, HistoryAggregate> {
        self.aggregates
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn last_record(&self, code_id: &str) -> Option<&ExecutionRecord> {
        self.last_records.get(code_id)
    }

    /// Fold the whole file into per-code aggregates.
    pub fn replay(&self) -> Result<BTreeMap<String, HistoryAggregate>, HistoryError> {
        replay(&self.path)
    }

    pub fn records(&self) -> Result<Vec<ExecutionRecord>, HistoryError> {
        read_records(&self.path)
    }
}

/// Fold a log file into per-code aggregates.
pub fn replay(path: &Path) -> Result<BTreeMap<String, HistoryAggregate>, HistoryError> {
    let mut out: BTreeMap<String, HistoryAggregate> = BTreeMap::new();
    for_each_record(path, |r| {
        out.entry(r.code_id.clone())
            .or_insert_with(|| HistoryAggregate::empty(&r.code_id))
            .record(r.outcome);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<ExecutionRecord>, HistoryError> {
    let mut out = Vec::new();
    for_each_record(path, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

fn for_each_record(
    path: &Path,
    mut f: impl FnMut(ExecutionRecord) -> Result<(), String>,
) -> Result<(), HistoryError> {
    let file = match File::open(path) {
        Ok(file) => file,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let corrupt = |message: String| HistoryError::CorruptRecord {
            line: line_no,
            message,
        };
        let Some(line) = buf.strip_suffix('\n') else {
            return Err(corrupt("truncated record (no line terminator)".into()));
        };
        let record: ExecutionRecord =
            serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if !(0.0..=1.0).contains(&record.score_after) {
            return Err(corrupt(format!("score_after {} outside [0, 1]", record.score_after)));
        }
        f(record).map_err(corrupt)?;
    }
}

/// Size of the log on disk; zero when absent.
pub fn log_size(path: &Path) -> u64 {
    fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}
