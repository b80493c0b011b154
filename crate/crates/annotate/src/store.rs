//! Append-only annotation log.
//!
//! Each line of the log is one JSON [`AnnotationRecord`]. Replaying the log
//! in order and keeping the last record per `(channel_id, time_s)` yields the
//! current state; records with `deleted = true` are tombstones.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use evdet_core::signal::{EventKind, EventLabel, GroundTruth};
use serde::{Deserialize, Serialize};

use crate::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub time_s: f64,
    pub channel_id: String,
    pub appliance: String,
    pub kind: EventKind,
    pub annotator: String,
    /// Seconds since the Unix epoch.
    pub created_at: f64,
    pub revision: u64,
    #[serde(default)]
    pub deleted: bool,
}

/// Body of `PUT /annotations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutAnnotation {
    pub time_s: f64,
    pub channel_id: String,
    pub appliance: String,
    pub kind: EventKind,
    #[serde(default)]
    pub annotator: String,
    /// Revision the client last saw; `0` for a new label. Omit to overwrite
    /// unconditionally.
    pub base_revision: Option<u64>,
}

type Key = (String, u64);

fn key(channel_id: &str, time_s: f64) -> Key {
    // non-negative floats order like their bit patterns; +0.0 folds -0.0
    (channel_id.to_string(), (time_s + 0.0).to_bits())
}

#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    latest: BTreeMap<Key, AnnotationRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("annotation store {path} is read-only")]
    ReadOnly { path: PathBuf },
    #[error("annotation store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation store {path}, line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl AnnotationStore {
    /// Opens (creating if needed) the log at `path` for appending and
    /// replays it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let read_only = match std::fs::metadata(path) {
            Ok(m) => m.permissions().readonly(),
            Err(_) => {
                let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                std::fs::metadata(parent).map_err(io)?.permissions().readonly()
            }
        };
        if read_only {
            return Err(StoreError::ReadOnly {
                path: path.to_path_buf(),
            });
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::ReadOnlyFilesystem => {
                    StoreError::ReadOnly {
                        path: path.to_path_buf(),
                    }
                }
                _ => io(e),
            })?;
        let latest = Self::replay(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            latest,
        })
    }

    /// Rebuilds the current state from the log alone.
    pub fn replay(path: &Path) -> Result<BTreeMap<Key, AnnotationRecord>, StoreError> {
        let f = File::open(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut latest = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            latest.insert(key(&rec.channel_id, rec.time_s), rec);
        }
        Ok(latest)
    }

    fn append(&mut self, rec: AnnotationRecord) -> Result<AnnotationRecord, ApiError> {
        let mut line = serde_json::to_string(&rec).map_err(|e| ApiError::Internal(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ApiError::Internal(format!("writing {}: {e}", self.path.display())))?;
        self.latest.insert(key(&rec.channel_id, rec.time_s), rec.clone());
        Ok(rec)
    }

    fn check_revision(&self, k: &Key, base: Option<u64>) -> Result<u64, ApiError> {
        let current = self.latest.get(k).map_or(0, |r| if r.deleted { 0 } else { r.revision });
        if let Some(b) = base {
            if b != current {
                return Err(ApiError::Conflict(format!(
                    "base revision {b} is stale, current revision is {current}"
                )));
            }
        }
        Ok(self.latest.get(k).map_or(0, |r| r.revision))
    }

    /// Validated insert or update; bumps the revision of the key.
    pub fn put(&mut self, req: PutAnnotation) -> Result<AnnotationRecord, ApiError> {
        let k = key(&req.channel_id, req.time_s);
        let last = self.check_revision(&k, req.base_revision)?;
        self.append(AnnotationRecord {
            time_s: req.time_s + 0.0,
            channel_id: req.channel_id,
            appliance: req.appliance,
            kind: req.kind,
            annotator: req.annotator,
            created_at: now(),
            revision: last + 1,
            deleted: false,
        })
    }

    pub fn delete(&mut self, channel_id: &str, time_s: f64, base: Option<u64>) -> Result<AnnotationRecord, ApiError> {
        let k = key(channel_id, time_s);
        let Some(old) = self.latest.get(&k).filter(|r| !r.deleted).cloned() else {
            return Err(ApiError::NotFound(format!("no annotation at {time_s} s on {channel_id:?}")));
        };
        self.check_revision(&k, base)?;
        self.append(AnnotationRecord {
            created_at: now(),
            revision: old.revision + 1,
            deleted: true,
            ..old
        })
    }

    /// Live records sorted by `(time_s, channel_id)`, optionally filtered.
    pub fn list(&self, channel: Option<&str>, start_s: f64, end_s: f64) -> Vec<AnnotationRecord> {
        let mut out: Vec<AnnotationRecord> = self
            .latest
            .values()
            .filter(|r| !r.deleted)
            .filter(|r| channel.is_none_or(|c| c == r.channel_id))
            .filter(|r| r.time_s >= start_s && r.time_s <= end_s)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then_with(|| a.channel_id.cmp(&b.channel_id)));
        out
    }

    pub fn ground_truth(&self) -> GroundTruth {
        labels_of(self.latest.values())
    }

    /// Ground truth of the log at `path` without opening it for writing.
    pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, StoreError> {
        Ok(labels_of(Self::replay(path)?.values()))
    }
}

fn labels_of<'a>(records: impl Iterator<Item = &'a AnnotationRecord>) -> GroundTruth {
    let labels = records
        .filter(|r| !r.deleted)
        .map(|r| EventLabel {
            time_s: r.time_s,
            channel_id: r.channel_id.clone(),
            appliance: r.appliance.clone(),
            kind: r.kind,
        })
        .collect();
    GroundTruth::new(labels).expect("store keys are unique and finite")
}
