//! Deterministic synthetic recordings with known ground truth.
//!
//! True events are clean power steps of at least `event_step_min_w` that
//! hold for at least `event_hold_min_s`. The load returns to base through a
//! slow, unlabelled ramp (or, for OFF events, arrives through one). Nuisance
//! transients imitate switched-mode power supplies: rectangular bursts and
//! sawtooth ramps shorter than five seconds, drawn with harmonic-rich
//! current. Nuisance never overlaps the ten-second window around a true
//! event.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::recording::{check_rates, RawRecording, WINDOW_S};
use super::truth::{EventKind, EventLabel, GroundTruth};
use crate::error::{Error, Result};

const HALF_WINDOW_S: f64 = WINDOW_S / 2.0;
const RAMP_MIN_S: f64 = 10.0;
const RAMP_MAX_S: f64 = 30.0;
const HOLD_EXTRA_MAX_S: f64 = 10.0;
const NUISANCE_MIN_W: f64 = 10.0;
const NUISANCE_MAX_W: f64 = 120.0;
const PULSE_MIN_S: f64 = 0.2;
const NUISANCE_MAX_S: f64 = 4.0;
const SAWTOOTH_MIN_S: f64 = 0.5;
const VOLTAGE_NOISE_V: f64 = 0.2;
const APPLIANCES: [&str; 5] = ["kettle", "lamp", "heater", "fan", "fridge"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub n_true_events: usize,
    pub n_nuisance_transients: usize,
    pub base_load_w: f64,
    pub event_step_min_w: f64,
    pub event_step_max_w: f64,
    pub event_hold_min_s: f64,
    /// Fraction of true events that are labelled OFF steps.
    pub off_fraction: f64,
    /// Standard deviation of additive current noise, amperes per sample.
    pub noise_std: f64,
    pub fs: u32,
    pub mains_hz: u32,
    pub nominal_voltage_v: f64,
    pub seed: u64,
    pub channel_id: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_s: 600.0,
            n_true_events: 5,
            n_nuisance_transients: 15,
            base_load_w: 100.0,
            event_step_min_w: 30.0,
            event_step_max_w: 60.0,
            event_hold_min_s: 5.0,
            off_fraction: 0.0,
            noise_std: 0.02,
            fs: 3200,
            mains_hz: 50,
            nominal_voltage_v: 230.0,
            seed: 1,
            channel_id: "synth".to_string(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.fs, self.mains_hz)?;
        let positive = [
            ("duration_s", self.duration_s),
            ("event_step_min_w", self.event_step_min_w),
            ("event_hold_min_s", self.event_hold_min_s),
            ("nominal_voltage_v", self.nominal_voltage_v),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.base_load_w.is_finite() && self.base_load_w >= 0.0) {
            return Err(Error::InvalidInput("base_load_w must be non-negative".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidInput("noise_std must be non-negative".into()));
        }
        if !(self.event_step_max_w >= self.event_step_min_w) {
            return Err(Error::InvalidInput(
                "event_step_max_w must be at least event_step_min_w".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.off_fraction) {
            return Err(Error::InvalidInput("off_fraction must lie in [0, 1]".into()));
        }
        if self.duration_s < WINDOW_S {
            return Err(Error::InvalidInput(format!(
                "duration must be at least {WINDOW_S} s"
            )));
        }
        Ok(())
    }

    fn protected_half_width(&self) -> f64 {
        HALF_WINDOW_S.max(self.event_hold_min_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// Linear from the first to the second value across the interval.
    Ramp(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Resistive,
    SwitchedMode,
}

/// One additive piece of the power envelope, active on samples
/// `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub start: usize,
    pub end: usize,
    pub profile: Profile,
    pub waveform: Waveform,
}

impl Component {
    fn power(&self, k: usize) -> f64 {
        match self.profile {
            Profile::Constant(a) => a,
            Profile::Ramp(a, b) => {
                let u = (k - self.start) as f64 / (self.end - self.start) as f64;
                a + (b - a) * u
            }
        }
    }
}

/// Piecewise power envelope in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub fs: u32,
    pub n_samples: usize,
    pub base_load_w: f64,
    pub components: Vec<Component>,
}

impl Envelope {
    pub fn power_at_sample(&self, k: usize) -> f64 {
        self.base_load_w
            + self
                .components
                .iter()
                .filter(|c| (c.start..c.end).contains(&k))
                .map(|c| c.power(k))
                .sum::<f64>()
    }
}

/// Power envelope and labels for `spec`, before rendering to samples.
pub fn synth_envelope(spec: &SynthSpec) -> Result<(Envelope, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.fs as f64;
    let n_samples = (spec.duration_s * fs).round() as usize;
    let to_sample = |t: f64| (t * fs).round() as usize;

    let mut components = Vec::new();
    let mut labels = Vec::with_capacity(spec.n_true_events);
    let mut protected = Vec::with_capacity(spec.n_true_events);

    if spec.n_true_events > 0 {
        let margin = 1.0;
        let slot = (spec.duration_s - 2.0 * margin) / spec.n_true_events as f64;
        let min_slot = HALF_WINDOW_S + spec.event_hold_min_s + RAMP_MIN_S + HALF_WINDOW_S;
        if slot < min_slot.max(2.0 * WINDOW_S) {
            return Err(Error::Infeasible(format!(
                "{} events need at least {:.1} s each, {:.1} s available",
                spec.n_true_events,
                min_slot.max(2.0 * WINDOW_S),
                slot
            )));
        }
        for i in 0..spec.n_true_events {
            let slot_start = margin + i as f64 * slot;
            let mut hold = spec.event_hold_min_s + rng.random::<f64>() * HOLD_EXTRA_MAX_S;
            let mut ramp = RAMP_MIN_S + rng.random::<f64>() * (RAMP_MAX_S - RAMP_MIN_S);
            let step_w = spec.event_step_min_w
                + rng.random::<f64>() * (spec.event_step_max_w - spec.event_step_min_w);
            let kind = if rng.random::<f64>() < spec.off_fraction {
                EventKind::Off
            } else {
                EventKind::On
            };
            let offset_u = rng.random::<f64>();
            let appliance = APPLIANCES[rng.random_range(0..APPLIANCES.len())];

            // Episode = 5 s flat lead-in/out + hold + ramp, followed by a 5 s gap.
            let budget = slot - 2.0 * HALF_WINDOW_S;
            let excess = hold + ramp - budget;
            if excess > 0.0 {
                let from_ramp = excess.min(ramp - RAMP_MIN_S);
                ramp -= from_ramp;
                hold -= excess - from_ramp;
            }
            let slack = (budget - hold - ramp).max(0.0);
            let episode_start = slot_start + offset_u * slack;

            let (t, hold_range, ramp_range, ramp_profile) = match kind {
                EventKind::On => {
                    let t = episode_start + HALF_WINDOW_S;
                    (
                        t,
                        (t, t + hold),
                        (t + hold, t + hold + ramp),
                        Profile::Ramp(step_w, 0.0),
                    )
                }
                EventKind::Off => {
                    let t = episode_start + ramp + hold;
                    (
                        t,
                        (t - hold, t),
                        (episode_start, episode_start + ramp),
                        Profile::Ramp(0.0, step_w),
                    )
                }
            };
            let step_sample = to_sample(t);
            let (h0, h1) = match kind {
                EventKind::On => (step_sample, to_sample(hold_range.1)),
                EventKind::Off => (to_sample(hold_range.0), step_sample),
            };
            components.push(Component {
                start: h0,
                end: h1,
                profile: Profile::Constant(step_w),
                waveform: Waveform::Resistive,
            });
            components.push(Component {
                start: to_sample(ramp_range.0),
                end: to_sample(ramp_range.1),
                profile: ramp_profile,
                waveform: Waveform::Resistive,
            });
            let time_s = step_sample as f64 / fs;
            let half = spec.protected_half_width();
            protected.push((time_s - half, time_s + half));
            labels.push(EventLabel {
                time_s,
                channel_id: spec.channel_id.clone(),
                appliance: appliance.to_string(),
                kind,
            });
        }
    }

    let max_attempts = 1000 * spec.n_nuisance_transients.max(1);
    let mut attempts = 0;
    let mut placed = 0;
    while placed < spec.n_nuisance_transients {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Infeasible(format!(
                "placed only {placed} of {} nuisance transients",
                spec.n_nuisance_transients
            )));
        }
        let sawtooth = rng.random::<bool>();
        let lo = if sawtooth { SAWTOOTH_MIN_S } else { PULSE_MIN_S };
        let len = lo + rng.random::<f64>() * (NUISANCE_MAX_S - lo);
        let amp = NUISANCE_MIN_W + rng.random::<f64>() * (NUISANCE_MAX_W - NUISANCE_MIN_W);
        let room = spec.duration_s - len;
        if room <= 0.0 {
            continue;
        }
        let start = rng.random::<f64>() * room;
        let end = start + len;
        let hits = {
            let i = protected.partition_point(|&(_, b)| b <= start);
            i < protected.len() && protected[i].0 < end
        };
        if hits {
            continue;
        }
        let (s0, s1) = (to_sample(start), to_sample(end).min(n_samples));
        if s1 <= s0 {
            continue;
        }
        components.push(Component {
            start: s0,
            end: s1,
            profile: if sawtooth {
                Profile::Ramp(0.0, amp)
            } else {
                Profile::Constant(amp)
            },
            waveform: Waveform::SwitchedMode,
        });
        placed += 1;
    }

    let envelope = Envelope {
        fs: spec.fs,
        n_samples,
        base_load_w: spec.base_load_w,
        components,
    };
    Ok((envelope, GroundTruth::new(labels)?))
}

/// Renders an envelope into voltage and current samples.
pub fn render(spec: &SynthSpec, env: &Envelope) -> Result<RawRecording> {
    let n = env.n_samples;
    let per = (spec.fs / spec.mains_hz) as usize;
    let sine: Vec<f64> = (0..per)
        .map(|k| (2.0 * PI * k as f64 / per as f64).sin())
        .collect();
    // Unit-RMS odd-harmonic current of a rectifier front end.
    let smps_norm = (1.0f64 + 0.16 + 0.04).sqrt();
    let smps: Vec<f64> = (0..per)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / per as f64;
            (w.sin() + 0.4 * (3.0 * w).sin() + 0.2 * (5.0 * w).sin()) / smps_norm
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_c0ffee);
    let i_noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let v_noise = Normal::new(0.0, VOLTAGE_NOISE_V).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let amp_per_w = SQRT_2 / spec.nominal_voltage_v;
    let v_peak = spec.nominal_voltage_v * SQRT_2;
    let base = spec.base_load_w * amp_per_w;

    let mut voltage = Vec::with_capacity(n);
    let mut current = Vec::with_capacity(n);
    for k in 0..n {
        let s = sine[k % per];
        voltage.push((v_peak * s + v_noise.sample(&mut rng)) as f32);
        current.push((base * s + i_noise.sample(&mut rng)) as f32);
    }
    for c in &env.components {
        let table = match c.waveform {
            Waveform::Resistive => &sine,
            Waveform::SwitchedMode => &smps,
        };
        for k in c.start..c.end.min(n) {
            current[k] += (c.power(k) * amp_per_w * table[k % per]) as f32;
        }
    }
    RawRecording::new(spec.fs, spec.mains_hz, voltage, current, 0.0, spec.channel_id.clone())
}

/// Synthesises a recording and its ground truth. Identical specs give
/// bit-identical output.
pub fn synth_recording(spec: &SynthSpec) -> Result<(RawRecording, GroundTruth)> {
    let (env, gt) = synth_envelope(spec)?;
    Ok((render(spec, &env)?, gt))
}
