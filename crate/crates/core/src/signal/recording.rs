//! Recording container: a JSON manifest next to a little-endian `f32`
//! payload with channel-interleaved samples.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of an event-centred window in seconds.
pub const WINDOW_S: f64 = 10.0;

pub const ENCODING_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Voltage,
    Current,
}

/// Sampled voltage and current of one measurement channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub fs: u32,
    pub mains_hz: u32,
    pub voltage: Vec<f32>,
    pub current: Vec<f32>,
    /// Epoch seconds of the first sample.
    pub start_time: f64,
    pub channel_id: String,
}

impl RawRecording {
    pub fn new(
        fs: u32,
        mains_hz: u32,
        voltage: Vec<f32>,
        current: Vec<f32>,
        start_time: f64,
        channel_id: impl Into<String>,
    ) -> Result<Self> {
        check_rates(fs, mains_hz)?;
        if voltage.len() != current.len() {
            return Err(Error::InvalidInput(format!(
                "voltage has {} samples but current has {}",
                voltage.len(),
                current.len()
            )));
        }
        Ok(Self {
            fs,
            mains_hz,
            voltage,
            current,
            start_time,
            channel_id: channel_id.into(),
        })
    }

    pub fn samples_per_period(&self) -> usize {
        (self.fs / self.mains_hz) as usize
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Number of complete mains periods.
    pub fn n_periods(&self) -> usize {
        self.len() / self.samples_per_period()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs as f64
    }

    pub fn channel(&self, channel: Channel) -> &[f32] {
        match channel {
            Channel::Voltage => &self.voltage,
            Channel::Current => &self.current,
        }
    }
}

pub(crate) fn check_rates(fs: u32, mains_hz: u32) -> Result<()> {
    if fs == 0 || mains_hz == 0 {
        return Err(Error::InvalidInput(
            "sampling rate and mains frequency must be positive".into(),
        ));
    }
    if !fs.is_multiple_of(mains_hz) {
        return Err(Error::NonIntegerPeriod { fs, mains_hz });
    }
    Ok(())
}

/// A window of raw samples, normally [`WINDOW_S`] long and centred on an
/// event candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSegment {
    pub voltage: Vec<f32>,
    pub current: Vec<f32>,
    pub fs: u32,
    pub mains_hz: u32,
}

impl WaveformSegment {
    pub fn samples_per_period(&self) -> usize {
        (self.fs / self.mains_hz) as usize
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> &[f32] {
        match channel {
            Channel::Voltage => &self.voltage,
            Channel::Current => &self.current,
        }
    }
}

/// Cuts the [`WINDOW_S`] window centred on `center_s`.
pub fn slice_segment(rec: &RawRecording, center_s: f64) -> Result<WaveformSegment> {
    slice_window(rec, center_s, WINDOW_S)
}

/// Cuts `window_s · fs` samples with the sample nearest to `center_s` at the
/// midpoint.
pub fn slice_window(rec: &RawRecording, center_s: f64, window_s: f64) -> Result<WaveformSegment> {
    let fs = rec.fs as f64;
    let width = (window_s * fs).round() as i64;
    let start = (center_s * fs).round() as i64 - width / 2;
    let end = start + width;
    if !center_s.is_finite() || start < 0 || end > rec.len() as i64 {
        return Err(Error::WindowOutOfBounds {
            start_s: center_s - window_s / 2.0,
            end_s: center_s + window_s / 2.0,
            duration_s: rec.duration_s(),
        });
    }
    let range = start as usize..end as usize;
    Ok(WaveformSegment {
        voltage: rec.voltage[range.clone()].to_vec(),
        current: rec.current[range].to_vec(),
        fs: rec.fs,
        mains_hz: rec.mains_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fs: u32,
    #[serde(rename = "F0")]
    pub mains_hz: u32,
    pub encoding: String,
    pub channels: Vec<Channel>,
    pub start_time: f64,
    pub channel_id: String,
}

impl Manifest {
    pub fn for_recording(rec: &RawRecording) -> Self {
        Self {
            fs: rec.fs,
            mains_hz: rec.mains_hz,
            encoding: ENCODING_F32LE.to_string(),
            channels: vec![Channel::Voltage, Channel::Current],
            start_time: rec.start_time,
            channel_id: rec.channel_id.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if self.encoding != ENCODING_F32LE {
            return Err(bad(format!("unsupported encoding {:?}", self.encoding)));
        }
        let has = |c| self.channels.iter().filter(|&&x| x == c).count() == 1;
        if self.channels.len() != 2 || !has(Channel::Voltage) || !has(Channel::Current) {
            return Err(bad(
                "channels must list \"voltage\" and \"current\" once each".into(),
            ));
        }
        check_rates(self.fs, self.mains_hz)
    }
}

/// Payload file conventionally stored next to a manifest.
pub fn payload_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

pub fn load_recording(payload: &Path, manifest: &Path) -> Result<RawRecording> {
    let manifest = Manifest::read(manifest)?;
    let bytes = fs::read(payload).map_err(|e| Error::io(payload, e))?;
    let frame = 4 * manifest.channels.len();
    if bytes.len() % frame != 0 {
        return Err(Error::TruncatedPayload {
            path: payload.to_path_buf(),
            len: bytes.len() as u64,
            frame,
        });
    }
    let n = bytes.len() / frame;
    let mut voltage = Vec::with_capacity(n);
    let mut current = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(frame) {
        for (c, word) in manifest.channels.iter().zip(chunk.chunks_exact(4)) {
            let x = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
            match c {
                Channel::Voltage => voltage.push(x),
                Channel::Current => current.push(x),
            }
        }
    }
    RawRecording::new(
        manifest.fs,
        manifest.mains_hz,
        voltage,
        current,
        manifest.start_time,
        manifest.channel_id,
    )
}

pub fn store_recording(rec: &RawRecording, payload: &Path, manifest: &Path) -> Result<()> {
    let m = Manifest::for_recording(rec);
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(manifest, text + "\n").map_err(|e| Error::io(manifest, e))?;

    let file = fs::File::create(payload).map_err(|e| Error::io(payload, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    for (v, i) in rec.voltage.iter().zip(&rec.current) {
        w.write_all(&v.to_le_bytes())
            .and_then(|_| w.write_all(&i.to_le_bytes()))
            .map_err(|e| Error::io(payload, e))?;
    }
    w.flush().map_err(|e| Error::io(payload, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(fs: u32, f0: u32, seconds: usize) -> RawRecording {
        let n = fs as usize * seconds;
        let v = (0..n).map(|k| k as f32).collect();
        let i = (0..n).map(|k| -(k as f32) * 0.5).collect();
        RawRecording::new(fs, f0, v, i, 1.5e9, "ch0").unwrap()
    }

    #[test]
    fn samples_per_period_follows_rates() {
        let rec = RawRecording::new(12000, 60, vec![0.0; 10], vec![0.0; 10], 0.0, "b").unwrap();
        assert_eq!(rec.samples_per_period(), 200);
        let rec = RawRecording::new(6400, 50, vec![], vec![], 0.0, "b").unwrap();
        assert_eq!(rec.samples_per_period(), 128);
    }

    #[test]
    fn rejects_fractional_period() {
        let err = RawRecording::new(1000, 60, vec![], vec![], 0.0, "b").unwrap_err();
        assert!(matches!(err, Error::NonIntegerPeriod { fs: 1000, mains_hz: 60 }));
    }

    #[test]
    fn rejects_unequal_channels() {
        assert!(RawRecording::new(100, 50, vec![0.0; 3], vec![0.0; 2], 0.0, "b").is_err());
    }

    #[test]
    fn slice_has_ten_seconds_centred() {
        let rec = ramp(1000, 50, 30);
        let seg = slice_segment(&rec, 12.0).unwrap();
        assert_eq!(seg.len(), 10_000);
        assert_eq!(seg.voltage[5000], 12_000.0);
        assert_eq!(seg, slice_segment(&rec, 12.0).unwrap());
    }

    #[test]
    fn slice_rejects_edges() {
        let rec = ramp(1000, 50, 30);
        assert!(matches!(
            slice_segment(&rec, 4.0),
            Err(Error::WindowOutOfBounds { .. })
        ));
        assert!(slice_segment(&rec, 25.0).is_ok());
        assert!(slice_segment(&rec, 25.5).is_err());
        assert!(slice_segment(&rec, f64::NAN).is_err());
    }

    #[test]
    fn store_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = ramp(600, 60, 2);
        rec.current[7] = f32::MIN_POSITIVE;
        rec.voltage[3] = -0.0;
        let (p, m) = (dir.path().join("r.f32"), dir.path().join("r.json"));
        store_recording(&rec, &p, &m).unwrap();
        let back = load_recording(&p, &m).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.voltage[3].to_bits(), (-0.0f32).to_bits());
        assert_eq!(payload_path_for(&m), p);
    }

    #[test]
    fn load_honours_channel_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("r.json");
        let p = dir.path().join("r.f32");
        fs::write(
            &m,
            r#"{"fs":100,"F0":50,"encoding":"f32le","channels":["current","voltage"],"start_time":0,"channel_id":"x"}"#,
        )
        .unwrap();
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|x| x.to_le_bytes())
            .collect();
        fs::write(&p, bytes).unwrap();
        let rec = load_recording(&p, &m).unwrap();
        assert_eq!(rec.current, vec![1.0, 3.0]);
        assert_eq!(rec.voltage, vec![2.0, 4.0]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("r.json");
        let p = dir.path().join("r.f32");
        fs::write(&p, [0u8; 12]).unwrap();

        fs::write(&m, "{not json").unwrap();
        assert!(matches!(load_recording(&p, &m), Err(Error::Manifest { .. })));

        fs::write(
            &m,
            r#"{"fs":1000,"F0":60,"encoding":"f32le","channels":["voltage","current"],"start_time":0,"channel_id":"x"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_recording(&p, &m),
            Err(Error::NonIntegerPeriod { .. })
        ));

        fs::write(
            &m,
            r#"{"fs":1200,"F0":60,"encoding":"i16le","channels":["voltage","current"],"start_time":0,"channel_id":"x"}"#,
        )
        .unwrap();
        assert!(matches!(load_recording(&p, &m), Err(Error::Manifest { .. })));

        fs::write(
            &m,
            r#"{"fs":1200,"F0":60,"encoding":"f32le","channels":["voltage","current"],"start_time":0,"channel_id":"x"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_recording(&p, &m),
            Err(Error::TruncatedPayload { len: 12, .. })
        ));
        assert!(matches!(
            load_recording(&dir.path().join("missing.f32"), &m),
            Err(Error::Io { .. })
        ));
    }
}
