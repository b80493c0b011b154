//! Per-period event metrics and fixed-length feature vectors.
//!
//! Every metric is one scalar per mains period (`N = fs / F0` samples).
//! A feature vector is the metric series over a whole window; the
//! difference-based kinds are one element shorter and get a trailing zero.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Channel, WaveformSegment};

/// Voltage RMS below this marks a dead channel.
pub const U_FLOOR_V: f64 = 1.0;

const LOG_EPS: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Current,
    DeltaCurrent,
    Admittance,
    #[serde(rename = "spf")]
    SpectralFlatness,
    Cusum,
    DeltaCusum,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Current,
        FeatureKind::DeltaCurrent,
        FeatureKind::Admittance,
        FeatureKind::SpectralFlatness,
        FeatureKind::Cusum,
        FeatureKind::DeltaCusum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Current => "current",
            FeatureKind::DeltaCurrent => "delta-current",
            FeatureKind::Admittance => "admittance",
            FeatureKind::SpectralFlatness => "spf",
            FeatureKind::Cusum => "cusum",
            FeatureKind::DeltaCusum => "delta-cusum",
        }
    }

    pub(crate) fn needs_voltage(self) -> bool {
        self == FeatureKind::Admittance
    }

    pub(crate) fn needs_spectrum(self) -> bool {
        self == FeatureKind::SpectralFlatness
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown feature {s:?}"))
    }
}

/// One value per mains period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSeries {
    pub values: Vec<f64>,
}

impl PeriodSeries {
    pub fn n_periods(&self) -> usize {
        self.values.len()
    }
}

impl From<Vec<f64>> for PeriodSeries {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Feature dimension for a window of `window_s` seconds.
pub fn feature_dim(mains_hz: u32, window_s: f64) -> usize {
    (window_s * mains_hz as f64).round() as usize
}

/// Splits one channel of the segment into contiguous blocks of `N` samples.
pub fn periodize(seg: &WaveformSegment, channel: Channel) -> Result<Vec<&[f32]>> {
    let n = seg.samples_per_period();
    let samples = seg.channel(channel);
    if n == 0 || !samples.len().is_multiple_of(n) {
        return Err(Error::InvalidInput(format!(
            "segment of {} samples is not a whole number of {n}-sample periods",
            samples.len()
        )));
    }
    Ok(samples.chunks_exact(n).collect())
}

fn rms<T: Copy + Into<f64>>(period: &[T]) -> f64 {
    let sq: f64 = period.iter().map(|&x| {
        let x: f64 = x.into();
        x * x
    }).sum();
    (sq / period.len() as f64).sqrt()
}

pub fn rms_per_period<T: Copy + Into<f64>>(periods: &[&[T]]) -> Result<PeriodSeries> {
    if periods.is_empty() || periods.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidInput("rms needs at least one non-empty period".into()));
    }
    Ok(periods.iter().map(|p| rms(p)).collect::<Vec<_>>().into())
}

fn delta_values(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[0] - w[1]).collect()
}

/// `out[k] = x[k] - x[k+1]`.
pub fn delta(series: &PeriodSeries) -> Result<PeriodSeries> {
    if series.n_periods() < 2 {
        return Err(Error::InvalidInput("delta needs at least two periods".into()));
    }
    Ok(delta_values(&series.values).into())
}

fn admittance_values(i_rms: &[f64], u_rms: &[f64]) -> Result<Vec<f64>> {
    if i_rms.len() != u_rms.len() {
        return Err(Error::DimensionMismatch {
            expected: i_rms.len(),
            actual: u_rms.len(),
        });
    }
    i_rms
        .iter()
        .zip(u_rms)
        .enumerate()
        .map(|(p, (&i, &u))| {
            if u > U_FLOOR_V {
                Ok(i / u)
            } else {
                Err(Error::DeadVoltage {
                    period: p,
                    value: u,
                    floor: U_FLOOR_V,
                })
            }
        })
        .collect()
}

pub fn admittance(i_rms: &PeriodSeries, u_rms: &PeriodSeries) -> Result<PeriodSeries> {
    admittance_values(&i_rms.values, &u_rms.values).map(Into::into)
}

/// Geometric over arithmetic mean of an energy spectrum.
///
/// Returns 0 for an all-zero spectrum or when any bin is exactly zero.
pub fn flatness_of_spectrum(x: &[f64]) -> f64 {
    if x.is_empty() || x.contains(&0.0) {
        return 0.0;
    }
    let am = x.iter().sum::<f64>() / x.len() as f64;
    // exp(mean ln(x + eps)) / am, evaluated relative to am.
    let log_ratio = x.iter().map(|&v| ((v + LOG_EPS) / am).ln()).sum::<f64>() / x.len() as f64;
    log_ratio.exp().clamp(0.0, 1.0)
}

/// Per-period spectral flatness of the current, sharing one FFT plan.
pub(crate) struct FlatnessPlan {
    fft: Arc<dyn Fft<f64>>,
    n: usize,
}

impl FlatnessPlan {
    pub(crate) fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidInput(format!(
                "spectral flatness needs at least 4 samples per period, got {n}"
            )));
        }
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(n),
            n,
        })
    }

    /// Magnitude-squared spectrum, bins 1 through N/2.
    pub(crate) fn energy_spectrum<T: Copy + Into<f64>>(
        &self,
        period: &[T],
        buf: &mut Vec<Complex<f64>>,
    ) -> Vec<f64> {
        buf.clear();
        buf.extend(period.iter().map(|&x| Complex::new(x.into(), 0.0)));
        self.fft.process(buf);
        buf[1..=self.n / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    pub(crate) fn flatness<T: Copy + Into<f64>>(&self, period: &[T], buf: &mut Vec<Complex<f64>>) -> f64 {
        flatness_of_spectrum(&self.energy_spectrum(period, buf))
    }
}

pub fn spectral_flatness<T: Copy + Into<f64>>(periods: &[&[T]]) -> Result<PeriodSeries> {
    let Some(first) = periods.first() else {
        return Err(Error::InvalidInput("spectral flatness needs at least one period".into()));
    };
    let n = first.len();
    if periods.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidInput("periods differ in length".into()));
    }
    let plan = FlatnessPlan::new(n)?;
    let mut buf = Vec::with_capacity(n);
    Ok(periods
        .iter()
        .map(|p| plan.flatness(p, &mut buf))
        .collect::<Vec<_>>()
        .into())
}

fn cusum_values(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut acc = 0.0;
    x.iter()
        .map(|&v| {
            acc += v - mean;
            acc
        })
        .collect()
}

/// Running sum of deviations from the series mean.
pub fn cusum(series: &PeriodSeries) -> Result<PeriodSeries> {
    if series.values.is_empty() {
        return Err(Error::InvalidInput("cusum of an empty series".into()));
    }
    Ok(cusum_values(&series.values).into())
}

pub fn delta_cusum(series: &PeriodSeries) -> Result<PeriodSeries> {
    if series.n_periods() < 2 {
        return Err(Error::InvalidInput("delta needs at least two periods".into()));
    }
    Ok(delta_values(&cusum_values(&series.values)).into())
}

/// Builds the feature of `kind` from per-period metrics of one window.
/// `u_rms` is required for admittance, `spf` for spectral flatness.
pub(crate) fn assemble(
    kind: FeatureKind,
    i_rms: &[f64],
    u_rms: Option<&[f64]>,
    spf: Option<&[f64]>,
) -> Result<FeatureVector> {
    let n = i_rms.len();
    if n < 2 {
        return Err(Error::InvalidInput("a feature window needs at least two periods".into()));
    }
    let mut values = match kind {
        FeatureKind::Current => i_rms.to_vec(),
        FeatureKind::DeltaCurrent => delta_values(i_rms),
        FeatureKind::Admittance => {
            let u = u_rms.ok_or_else(|| Error::InvalidInput("admittance needs voltage".into()))?;
            admittance_values(i_rms, u)?
        }
        FeatureKind::SpectralFlatness => spf
            .ok_or_else(|| Error::InvalidInput("missing spectral flatness series".into()))?
            .to_vec(),
        FeatureKind::Cusum => cusum_values(i_rms),
        FeatureKind::DeltaCusum => delta_values(&cusum_values(i_rms)),
    };
    values.resize(n, 0.0);
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{kind} feature is not finite at period {p}"
        )));
    }
    Ok(FeatureVector { kind, values })
}

pub fn extract_feature(seg: &WaveformSegment, kind: FeatureKind) -> Result<FeatureVector> {
    let current = periodize(seg, Channel::Current)?;
    let i_rms = rms_per_period(&current)?;
    let u_rms = if kind.needs_voltage() {
        Some(rms_per_period(&periodize(seg, Channel::Voltage)?)?)
    } else {
        None
    };
    let spf = if kind.needs_spectrum() {
        Some(spectral_flatness(&current)?)
    } else {
        None
    };
    assemble(
        kind,
        &i_rms.values,
        u_rms.as_ref().map(|s| s.values.as_slice()),
        spf.as_ref().map(|s| s.values.as_slice()),
    )
}
