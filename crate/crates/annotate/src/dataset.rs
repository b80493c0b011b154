use std::collections::BTreeMap;
use std::path::Path;

use evdet_core::features::rms_per_period;
use evdet_core::signal::{load_recording, payload_path_for, RawRecording};
use serde::{Deserialize, Serialize};

use crate::ApiError;

/// Display series of one recording: per-period power `U_rms * I_rms`.
#[derive(Debug, Clone)]
pub struct Channel {
    pub info: ChannelInfo,
    pub power: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub channel_id: String,
    pub fs: u32,
    pub mains_hz: u32,
    pub start_time: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTile {
    pub channel_id: String,
    pub t0_s: f64,
    pub dt_s: f64,
    pub points: Vec<SeriesPoint>,
}

impl Channel {
    pub fn from_recording(rec: &RawRecording) -> Self {
        let n = rec.samples_per_period();
        let usable = rec.n_periods() * n;
        let periods = |x: &[f32]| -> Vec<f64> {
            let chunks: Vec<&[f32]> = x[..usable].chunks_exact(n).collect();
            if chunks.is_empty() {
                Vec::new()
            } else {
                rms_per_period(&chunks).expect("non-empty periods").values
            }
        };
        let (u, i) = (periods(&rec.voltage), periods(&rec.current));
        Self {
            info: ChannelInfo {
                channel_id: rec.channel_id.clone(),
                fs: rec.fs,
                mains_hz: rec.mains_hz,
                start_time: rec.start_time,
                duration_s: rec.duration_s(),
            },
            power: u.iter().zip(&i).map(|(u, i)| u * i).collect(),
        }
    }

    /// Min/max/mean buckets of whole periods covering `[start_s, end_s)`,
    /// at most `max_points` of them.
    pub fn series(&self, start_s: f64, end_s: f64, max_points: usize) -> Result<SeriesTile, ApiError> {
        if max_points < 2 {
            return Err(ApiError::BadRequest("max_points must be at least 2".into()));
        }
        if !(start_s.is_finite() && end_s.is_finite()) || end_s <= start_s {
            return Err(ApiError::BadRequest(format!("empty or inverted range [{start_s}, {end_s})")));
        }
        if start_s < 0.0 || end_s > self.info.duration_s + 1e-9 {
            return Err(ApiError::BadRequest(format!(
                "range [{start_s}, {end_s}) exceeds recording [0, {})",
                self.info.duration_s
            )));
        }
        let f0 = self.info.mains_hz as f64;
        let n = self.power.len();
        let p0 = ((start_s * f0).floor() as usize).min(n);
        let p1 = ((end_s * f0).ceil() as usize).min(n);
        if p1 <= p0 {
            return Err(ApiError::BadRequest("range holds no complete mains period".into()));
        }
        let per_bucket = (p1 - p0).div_ceil(max_points);
        let points = self.power[p0..p1]
            .chunks(per_bucket)
            .map(|b| {
                let min = b.iter().copied().fold(f64::INFINITY, f64::min);
                let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = (b.iter().sum::<f64>() / b.len() as f64).clamp(min, max);
                SeriesPoint { min, max, mean }
            })
            .collect();
        Ok(SeriesTile {
            channel_id: self.info.channel_id.clone(),
            t0_s: p0 as f64 / f0,
            dt_s: per_bucket as f64 / f0,
            points,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub channels: BTreeMap<String, Channel>,
}

impl Dataset {
    /// Loads every `*.json` manifest in `dir` with its `.f32` payload.
    pub fn load_dir(dir: &Path) -> Result<Self, evdet_core::Error> {
        let mut manifests: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| evdet_core::Error::InvalidInput(format!("cannot read dataset {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        manifests.sort();
        let mut ds = Dataset::default();
        for m in manifests {
            let rec = load_recording(&payload_path_for(&m), &m)?;
            ds.insert(Channel::from_recording(&rec))?;
        }
        if ds.channels.is_empty() {
            return Err(evdet_core::Error::InvalidInput(format!(
                "dataset {} holds no recording manifests",
                dir.display()
            )));
        }
        Ok(ds)
    }

    pub fn insert(&mut self, ch: Channel) -> Result<(), evdet_core::Error> {
        let id = ch.info.channel_id.clone();
        if self.channels.insert(id.clone(), ch).is_some() {
            return Err(evdet_core::Error::InvalidInput(format!("channel {id:?} appears twice")));
        }
        Ok(())
    }

    pub fn channel(&self, id: &str) -> Result<&Channel, ApiError> {
        self.channels
            .get(id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown channel {id:?}")))
    }
}
