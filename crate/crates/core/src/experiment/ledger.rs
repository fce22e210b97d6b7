use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Started,
    Completed,
    Failed,
}

/// Per-fold backbone checksums around a training run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCheck {
    pub fold: usize,
    pub before: String,
    pub after: String,
    pub frozen: bool,
    pub unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub config_hash: String,
    pub command: String,
    pub label: String,
    pub status: RunStatus,
    #[serde(default)]
    pub checkpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    pub started: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeze_checks: Vec<FreezeCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl LedgerEntry {
    pub fn started(config_hash: &str, command: &str, label: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            command: command.to_string(),
            label: label.to_string(),
            status: RunStatus::Started,
            checkpoints: Vec::new(),
            report: None,
            started: now(),
            finished: None,
            freeze_checks: Vec::new(),
            message: None,
        }
    }

    pub fn finish(mut self, status: RunStatus) -> Self {
        self.status = status;
        self.finished = Some(now());
        self
    }
}

/// Seconds since the Unix epoch.
pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Append-only JSONL ledger shared by concurrent runs.
#[derive(Debug, Clone)]
pub struct RunLedger {
    pub path: PathBuf,
}

impl RunLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    fn open(&self) -> Result<File> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = self.open()?;
        f.lock().map_err(|e| Error::io(&self.path, e))?;
        let r = f.write_all(line.as_bytes()).and_then(|_| f.flush());
        let _ = f.unlock();
        r.map_err(|e| Error::io(&self.path, e))
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let mut f = self.open()?;
        f.lock_shared().map_err(|e| Error::io(&self.path, e))?;
        let mut text = String::new();
        let r = f.read_to_string(&mut text);
        let _ = f.unlock();
        r.map_err(|e| Error::io(&self.path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: self.path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Most recent entry for `(hash, command)`.
    pub fn latest(&self, hash: &str, command: &str) -> Result<Option<LedgerEntry>> {
        Ok(self
            .entries()?
            .into_iter()
            .rev()
            .find(|e| e.config_hash == hash && e.command == command))
    }

    /// Latest entry for `(hash, command)` if that entry is a completion. A
    /// run restarted after completing is not complete until it finishes again.
    pub fn completed(&self, hash: &str, command: &str) -> Result<Option<LedgerEntry>> {
        Ok(self.latest(hash, command)?.filter(|e| e.status == RunStatus::Completed))
    }

    /// Every hash run with `command` whose latest entry is a completion,
    /// sorted by hash.
    pub fn completed_runs(&self, command: &str) -> Result<Vec<LedgerEntry>> {
        let mut map = std::collections::BTreeMap::new();
        for e in self.entries()? {
            if e.command == command {
                map.insert(e.config_hash.clone(), e);
            }
        }
        Ok(map.into_values().filter(|e| e.status == RunStatus::Completed).collect())
    }
}

/// Directory layout under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn ledger(&self) -> RunLedger {
        RunLedger::new(self.root.join("ledger.jsonl"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, command: &str, hash: &str) -> PathBuf {
        self.runs().join(command).join(hash)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn explain(&self) -> PathBuf {
        self.root.join("explain")
    }

    pub fn external(&self) -> PathBuf {
        self.root.join("external")
    }

    pub fn quarantine(&self) -> PathBuf {
        self.root.join("quarantine")
    }

    /// Move `dir` under `quarantine/`, replacing an older copy.
    pub fn quarantine_dir(&self, dir: &Path, name: &str) -> Result<Option<PathBuf>> {
        if !dir.exists() {
            return Ok(None);
        }
        let q = self.quarantine();
        std::fs::create_dir_all(&q).map_err(|e| Error::io(&q, e))?;
        let dest = q.join(name);
        if dest.exists() {
            std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        }
        std::fs::rename(dir, &dest).map_err(|e| Error::io(dir, e))?;
        Ok(Some(dest))
    }
}
