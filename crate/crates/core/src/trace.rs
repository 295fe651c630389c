//! Session traces: append-only stage records, persisted as JSON Lines.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Route,
    Sample,
    Caption,
    Retrieve,
    Reason,
    Grade,
    Expand,
    Summary,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub session_id: String,
    pub seq: u64,
    /// Wall-clock time the record was written, unix milliseconds.
    pub ts_ms: u64,
    pub stage: Stage,
    /// Session time elapsed when the stage finished.
    pub elapsed_ms: u64,
    /// Backend time spent inside this stage.
    pub latency_ms: u64,
    pub data: Value,
}

pub trait TraceSink: Send + Sync {
    fn write(&self, record: &TraceRecord) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn write(&self, _: &TraceRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    records: Mutex<Vec<TraceRecord>>,
}

impl MemorySink {
    pub fn records(&self) -> Vec<TraceRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl TraceSink for MemorySink {
    fn write(&self, record: &TraceRecord) -> Result<()> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record.clone());
        Ok(())
    }
}

/// Appends one JSON object per line and flushes after every record.
pub struct JsonlSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }
}

impl TraceSink for JsonlSink {
    fn write(&self, record: &TraceRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a JSONL trace. A truncated or corrupt final line is skipped; corrupt
/// lines elsewhere are errors.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if Some(i) == last => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// How a session measures its own latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Real elapsed time.
    #[default]
    Wall,
    /// Sum of the latencies reported by backends. Deterministic under mocks.
    Simulated,
}

enum Timer {
    Wall(Instant),
    Simulated(AtomicU64),
}

/// One question-answering session: its clock and its trace.
pub struct Session {
    id: String,
    timer: Timer,
    sink: Arc<dyn TraceSink>,
    records: Mutex<Vec<TraceRecord>>,
    seq: AtomicU64,
    degraded: AtomicBool,
    full_prompts: bool,
}

impl Session {
    pub fn new(id: impl Into<String>, clock: ClockMode, sink: Arc<dyn TraceSink>) -> Self {
        Self {
            id: id.into(),
            timer: match clock {
                ClockMode::Wall => Timer::Wall(Instant::now()),
                ClockMode::Simulated => Timer::Simulated(AtomicU64::new(0)),
            },
            sink,
            records: Mutex::new(Vec::new()),
            seq: AtomicU64::new(0),
            degraded: AtomicBool::new(false),
            full_prompts: false,
        }
    }

    /// A session that traces nowhere, on the wall clock.
    pub fn detached(id: impl Into<String>) -> Self {
        Self::new(id, ClockMode::Wall, Arc::new(NullSink))
    }

    pub fn with_full_prompts(mut self, full: bool) -> Self {
        self.full_prompts = full;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn full_prompts(&self) -> bool {
        self.full_prompts
    }

    /// Accounts backend time; only the simulated clock uses it.
    pub fn charge(&self, latency_ms: u64) {
        if let Timer::Simulated(total) = &self.timer {
            total.fetch_add(latency_ms, Ordering::SeqCst);
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        match &self.timer {
            Timer::Wall(start) => start.elapsed().as_millis() as u64,
            Timer::Simulated(total) => total.load(Ordering::SeqCst),
        }
    }

    /// True once any trace write failed.
    pub fn trace_degraded(&self) -> bool {
        self.degraded.load(Ordering::SeqCst)
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Digest of a prompt, plus the prompt itself when full traces are on.
    pub fn prompt_fields(&self, prompt: &str) -> Value {
        let mut v = serde_json::json!({ "prompt_sha256": sha256_hex(prompt) });
        if self.full_prompts {
            v["prompt"] = Value::String(prompt.to_string());
        }
        v
    }

    pub fn record(&self, stage: Stage, latency_ms: u64, data: Value) {
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let record = TraceRecord {
            session_id: self.id.clone(),
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            ts_ms,
            stage,
            elapsed_ms: self.elapsed_ms(),
            latency_ms,
            data,
        };
        if let Err(e) = self.sink.write(&record) {
            tracing::warn!(session = %self.id, "trace write failed: {e}");
            self.degraded.store(true, Ordering::SeqCst);
        }
        records.push(record);
    }

    pub fn warn(&self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(session = %self.id, "{message}");
        self.record(Stage::Warning, 0, serde_json::json!({ "message": message }));
    }
}
