//! Recordings, ground truth and the synthetic data generator.

mod recording;
mod synth;
mod truth;

pub use recording::{
    load_recording, payload_path_for, slice_segment, slice_window, store_recording, Channel,
    Manifest, RawRecording, WaveformSegment, ENCODING_F32LE, WINDOW_S,
};
pub use synth::{
    render, synth_envelope, synth_recording, Component, Envelope, Profile, SynthSpec, Waveform,
};
pub use truth::{
    load_ground_truth, parse_ground_truth, EventKind, EventLabel, GroundTruth,
    GROUND_TRUTH_HEADER,
};
