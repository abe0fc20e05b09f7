//! Mono PCM clips and the WAV boundary.
//!
//! Everything downstream of this module works on [`AudioClip`]: a non-empty
//! run of finite samples in `[-1, 1]` tagged with its sample rate.

mod resample;
mod wav;

use std::path::Path;

pub use resample::{resample, resample_to_len};
pub use wav::{decode_wav, encode_wav};

use crate::error::{Error, Result};

/// Sample rate the feature pipeline is calibrated for.
pub const PIPELINE_RATE_HZ: u32 = 44_100;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
    source_bit_depth: u16,
}

impl AudioClip {
    /// Builds a clip, rejecting empty, non-finite or out-of-range input.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        Self::with_bit_depth(samples, sample_rate_hz, 32)
    }

    pub fn with_bit_depth(
        samples: Vec<f32>,
        sample_rate_hz: u32,
        source_bit_depth: u16,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate_hz == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Precondition(format!(
                "sample {i} = {s} is not a finite value in [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_bit_depth,
        })
    }

    /// Builds a clip after hard-clipping every sample into `[-1, 1]`.
    ///
    /// Non-finite input is still an error; only overshoot is repaired.
    pub fn from_unclipped(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        let clipped = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Self::new(clipped, sample_rate_hz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_bit_depth(&self) -> u16 {
        self.source_bit_depth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / self.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Reads a RIFF/WAVE PCM file and returns it as a mono clip.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Writes a clip as 16-bit integer or 32-bit float PCM.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>, bit_depth: u16) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, bit_depth)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
