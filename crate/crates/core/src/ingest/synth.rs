use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImuFrame, LabeledFrame, CHANNELS, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Per-channel sinusoid plus white noise standing in for a wearer repeating
/// one unit pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternProfile {
    pub name: String,
    pub baseline: [f64; CHANNELS],
    pub amplitude: [f64; CHANNELS],
    pub frequency_hz: [f64; CHANNELS],
    pub noise_sigma: f64,
}

impl PatternProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::argument(format!("{}: noise_sigma must be >= 0", self.name)));
        }
        if self.frequency_hz.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::argument(format!("{}: frequencies must be >= 0", self.name)));
        }
        if self.baseline.iter().chain(&self.amplitude).any(|v| !v.is_finite()) {
            return Err(Error::argument(format!("{}: non-finite baseline or amplitude", self.name)));
        }
        Ok(())
    }

    /// Noise-free value of every channel at time `t_s`.
    pub fn clean_sample(&self, t_s: f64) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.baseline[c] + self.amplitude[c] * (TAU * self.frequency_hz[c] * t_s).sin())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSegment {
    pub profile: PatternProfile,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
}

impl From<(PatternProfile, f64)> for SynthSegment {
    fn from((profile, duration_s): (PatternProfile, f64)) -> Self {
        SynthSegment { profile, duration_s, activity: None }
    }
}

/// Deterministic frame generator. Segments are laid end to end on one 20 Hz
/// clock, so timestamps advance by exactly 50 ms throughout.
pub struct SynthStream {
    segments: Vec<SynthSegment>,
    seg: usize,
    left_in_seg: u64,
    index: u64,
    rng: ChaCha8Rng,
}

pub fn synth_stream<I, S>(segments: I, seed: u64) -> Result<SynthStream>
where
    I: IntoIterator<Item = S>,
    S: Into<SynthSegment>,
{
    let segments: Vec<SynthSegment> = segments.into_iter().map(Into::into).collect();
    for s in &segments {
        s.profile.validate()?;
        if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
            return Err(Error::argument(format!(
                "segment {:?} duration must be positive, got {}",
                s.profile.name, s.duration_s
            )));
        }
    }
    let left = segments.first().map_or(0, frames_in);
    Ok(SynthStream { segments, seg: 0, left_in_seg: left, index: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
}

fn frames_in(s: &SynthSegment) -> u64 {
    (s.duration_s * SAMPLE_RATE_HZ).round() as u64
}

impl SynthStream {
    /// Total number of frames the stream will produce.
    pub fn total_frames(&self) -> u64 {
        self.segments.iter().map(frames_in).sum()
    }
}

impl Iterator for SynthStream {
    type Item = LabeledFrame;

    fn next(&mut self) -> Option<LabeledFrame> {
        while self.left_in_seg == 0 {
            self.seg += 1;
            let s = self.segments.get(self.seg)?;
            self.left_in_seg = frames_in(s);
        }
        let seg = &self.segments[self.seg];
        let t_ms = self.index * (1000.0 / SAMPLE_RATE_HZ) as u64;
        let t_s = self.index as f64 / SAMPLE_RATE_HZ;
        let mut ch = seg.profile.clean_sample(t_s);
        // Normal::new only fails for negative or NaN sigma, rejected above.
        let noise = Normal::new(0.0, seg.profile.noise_sigma).expect("validated sigma");
        for v in ch.iter_mut() {
            *v += noise.sample(&mut self.rng);
        }
        self.index += 1;
        self.left_in_seg -= 1;
        Some(LabeledFrame {
            frame: ImuFrame::from_channels(t_ms, ch),
            pattern: Some(seg.profile.name.clone()),
            activity: seg.activity.clone(),
        })
    }
}
