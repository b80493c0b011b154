//! Event ground truth as `time_s,channel_id,appliance,kind` CSV.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GROUND_TRUTH_HEADER: &str = "time_s,channel_id,appliance,kind";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    On,
    Off,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::On => "ON",
            EventKind::Off => "OFF",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "ON" | "on" => Ok(EventKind::On),
            "OFF" | "off" => Ok(EventKind::Off),
            other => Err(format!("unknown event kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    /// Seconds from recording start.
    pub time_s: f64,
    pub channel_id: String,
    pub appliance: String,
    pub kind: EventKind,
}

/// Labels sorted by time with no repeated `(time_s, channel_id)` pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    labels: Vec<EventLabel>,
}

impl GroundTruth {
    /// Sorts `labels` and checks the uniqueness invariant.
    pub fn new(mut labels: Vec<EventLabel>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|l| !l.time_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "label time {} is not finite",
                bad.time_s
            )));
        }
        labels.sort_by(|a, b| {
            a.time_s
                .total_cmp(&b.time_s)
                .then_with(|| a.channel_id.cmp(&b.channel_id))
        });
        if let Some(w) = labels
            .windows(2)
            .find(|w| w[0].time_s == w[1].time_s && w[0].channel_id == w[1].channel_id)
        {
            return Err(Error::InvalidInput(format!(
                "duplicate label at {} s on channel {}",
                w[0].time_s, w[0].channel_id
            )));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[EventLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.time_s).collect()
    }

    /// Labels with `start_s <= time_s < end_s`.
    pub fn within(&self, start_s: f64, end_s: f64) -> GroundTruth {
        GroundTruth {
            labels: self
                .labels
                .iter()
                .filter(|l| l.time_s >= start_s && l.time_s < end_s)
                .cloned()
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(GROUND_TRUTH_HEADER.split(','))?;
        for l in &self.labels {
            w.write_record([
                l.time_s.to_string(),
                l.channel_id.clone(),
                l.appliance.clone(),
                l.kind.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text).map_err(|(line, message)| Error::GroundTruth {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Parses ground-truth CSV text. Errors carry the 1-based line number.
pub fn parse_ground_truth(text: &str) -> std::result::Result<GroundTruth, (usize, String)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| (line, e.to_string()))?;
        if i == 0 && rec.get(0) == Some("time_s") {
            continue;
        }
        if rec.len() != 4 {
            return Err((line, format!("expected 4 columns, found {}", rec.len())));
        }
        let time_s: f64 = rec[0]
            .parse()
            .map_err(|_| (line, format!("bad time {:?}", &rec[0])))?;
        let kind = rec[3].parse().map_err(|e| (line, e))?;
        labels.push(EventLabel {
            time_s,
            channel_id: rec[1].to_string(),
            appliance: rec[2].to_string(),
            kind,
        });
    }
    GroundTruth::new(labels).map_err(|e| (0, e.to_string()))
}
