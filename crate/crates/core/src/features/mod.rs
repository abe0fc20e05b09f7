//! Three-channel log-Mel feature maps.
//!
//! Each channel is a log-Mel spectrogram at its own time scale
//! (25/10 ms, 50/25 ms and 100/50 ms window/hop). Channels are brought to a
//! common frame count by linear interpolation along time and stacked into a
//! `[n_mels, frames, 3]` map.

mod container;
mod mel;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use container::{read_feature_map, read_npy, write_feature_map, write_npy};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};

use crate::audio::{AudioClip, PIPELINE_RATE_HZ};
use crate::error::{Error, Result};
use crate::spectral::Stft;

pub const N_MELS: usize = 128;
pub const FLOOR_DB: f32 = -80.0;
pub const CHANNELS: usize = 3;

/// Analysis settings for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

/// Milliseconds to samples, rounding half away from zero.
pub fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
}

impl ChannelConfig {
    /// Full-band channel with `fft_size` the next power of two at or above
    /// the window length.
    pub fn new(window_ms: f64, hop_ms: f64, sample_rate_hz: u32) -> Self {
        let win = ms_to_samples(window_ms, sample_rate_hz).max(1);
        Self {
            window_ms,
            hop_ms,
            n_mels: N_MELS,
            fft_size: win.next_power_of_two(),
            fmin_hz: 0.0,
            fmax_hz: f64::from(sample_rate_hz) / 2.0,
        }
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.window_ms, sample_rate_hz)
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.hop_ms, sample_rate_hz)
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let win = self.window_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if win == 0 || hop == 0 {
            return Err(Error::Config("window and hop must cover at least one sample".into()));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::Config(format!(
                "hop {} ms exceeds window {} ms",
                self.hop_ms, self.window_ms
            )));
        }
        if self.fft_size < win {
            return Err(Error::Parameter(format!(
                "fft size {} shorter than window of {win} samples",
                self.fft_size
            )));
        }
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "frequency range [{}, {}] invalid for Nyquist {nyquist}",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Input length presets: whole phrases or single cut characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePreset {
    Phrase,
    Character,
}

impl FeaturePreset {
    pub fn target_frames(self) -> usize {
        match self {
            FeaturePreset::Phrase => 256,
            FeaturePreset::Character => 128,
        }
    }

    pub fn from_frames(frames: usize) -> Option<Self> {
        match frames {
            256 => Some(FeaturePreset::Phrase),
            128 => Some(FeaturePreset::Character),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeaturePreset::Phrase => "phrase",
            FeaturePreset::Character => "character",
        }
    }
}

impl std::str::FromStr for FeaturePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phrase" => Ok(FeaturePreset::Phrase),
            "character" | "char" => Ok(FeaturePreset::Character),
            other => Err(Error::Config(format!("unknown feature preset {other:?}"))),
        }
    }
}

/// The three channel configurations, in stacking order.
pub fn default_channels(sample_rate_hz: u32) -> [ChannelConfig; 3] {
    [
        ChannelConfig::new(25.0, 10.0, sample_rate_hz),
        ChannelConfig::new(50.0, 25.0, sample_rate_hz),
        ChannelConfig::new(100.0, 50.0, sample_rate_hz),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub config_hash: String,
}

/// Log-Mel feature tensor `[n_mels, frames, channels]` in dB re the per-channel
/// maximum, floored at `floor_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f32>,
    pub floor_db: f32,
    pub provenance: Provenance,
}

impl FeatureMap {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Magnitude STFT, `[fft_size / 2 + 1, frames]`, Hann window, centred frames.
pub fn stft_magnitude(
    clip: &AudioClip,
    window_ms: f64,
    hop_ms: f64,
    fft_size: usize,
) -> Result<Array2<f64>> {
    let sr = clip.sample_rate_hz();
    let win = ms_to_samples(window_ms, sr);
    let hop = ms_to_samples(hop_ms, sr);
    if win == 0 || hop == 0 {
        return Err(Error::Parameter("window and hop must cover at least one sample".into()));
    }
    if fft_size < win {
        return Err(Error::Parameter(format!(
            "fft size {fft_size} shorter than window of {win} samples"
        )));
    }
    let x: Vec<f64> = clip.samples().iter().map(|&s| f64::from(s)).collect();
    let frames = Stft::new(fft_size, win, hop).forward(&x);
    let bins = fft_size / 2 + 1;
    let mut out = Array2::zeros((bins, frames.len()));
    for (t, spec) in frames.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            out[[k, t]] = c.norm();
        }
    }
    Ok(out)
}

/// One channel: power spectrogram through the Mel filterbank, in dB relative
/// to the map's maximum, floored at `floor_db`. Silence maps to a uniform
/// floor.
pub fn log_mel_channel(clip: &AudioClip, cfg: &ChannelConfig) -> Result<Array2<f64>> {
    log_mel_channel_with(clip, cfg, &MelFilterbank::new(cfg, clip.sample_rate_hz())?)
}

fn log_mel_channel_with(
    clip: &AudioClip,
    cfg: &ChannelConfig,
    bank: &MelFilterbank,
) -> Result<Array2<f64>> {
    cfg.validate(clip.sample_rate_hz())?;
    let mag = stft_magnitude(clip, cfg.window_ms, cfg.hop_ms, cfg.fft_size)?;
    let power = mag.mapv(|m| m * m);
    let mel = bank.apply(&power);
    Ok(power_to_db(&mel, f64::from(FLOOR_DB)))
}

fn power_to_db(mel: &Array2<f64>, floor_db: f64) -> Array2<f64> {
    let reference = mel.iter().cloned().fold(0.0f64, f64::max);
    if reference <= 0.0 {
        return Array2::from_elem(mel.raw_dim(), floor_db);
    }
    mel.mapv(|p| {
        if p <= 0.0 {
            floor_db
        } else {
            (10.0 * (p / reference).log10()).clamp(floor_db, 0.0)
        }
    })
}

/// Linear interpolation of each row onto `target` equally spaced frames,
/// endpoints aligned.
pub fn interpolate_frames(m: &Array2<f64>, target: usize) -> Array2<f64> {
    let (rows, n) = m.dim();
    if n == target {
        return m.clone();
    }
    let mut out = Array2::zeros((rows, target));
    for j in 0..target {
        let pos = if target == 1 || n == 1 {
            0.0
        } else {
            j as f64 * (n - 1) as f64 / (target - 1) as f64
        };
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        for r in 0..rows {
            let a = m[[r, i]];
            out[[r, j]] = if frac == 0.0 || i + 1 >= n {
                a
            } else {
                a + (m[[r, i + 1]] - a) * frac
            };
        }
    }
    out
}

/// Hex digest identifying a channel set and output size.
pub fn config_hash(configs: &[ChannelConfig; 3], target_frames: usize) -> String {
    let blob = serde_json::to_vec(&(configs, target_frames, FLOOR_DB)).expect("configs serialize");
    hex::encode(&Sha256::digest(&blob)[..8])
}

/// Reusable extractor: filterbanks are built once and shared.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    configs: [ChannelConfig; 3],
    banks: Vec<MelFilterbank>,
    target_frames: usize,
    sample_rate_hz: u32,
    hash: String,
}

impl FeatureExtractor {
    pub fn new(configs: [ChannelConfig; 3], target_frames: usize, sample_rate_hz: u32) -> Result<Self> {
        if target_frames == 0 {
            return Err(Error::Config("target frame count must be positive".into()));
        }
        let mut hops: Vec<u64> = configs.iter().map(|c| c.hop_ms.to_bits()).collect();
        hops.sort_unstable();
        hops.dedup();
        if hops.len() != 3 {
            return Err(Error::Config("channel hop lengths must be distinct".into()));
        }
        let banks = configs
            .iter()
            .map(|c| {
                c.validate(sample_rate_hz)?;
                MelFilterbank::new(c, sample_rate_hz)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hash: config_hash(&configs, target_frames),
            configs,
            banks,
            target_frames,
            sample_rate_hz,
        })
    }

    /// The standard extractor for a preset at the pipeline rate.
    pub fn for_preset(preset: FeaturePreset) -> Self {
        Self::new(default_channels(PIPELINE_RATE_HZ), preset.target_frames(), PIPELINE_RATE_HZ)
            .expect("default channel configs are valid")
    }

    pub fn configs(&self) -> &[ChannelConfig; 3] {
        &self.configs
    }

    pub fn target_frames(&self) -> usize {
        self.target_frames
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn extract(&self, clip: &AudioClip, sample_id: &str) -> Result<FeatureMap> {
        if clip.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::Precondition(format!(
                "clip at {} Hz, extractor expects {} Hz",
                clip.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        let n_mels = self.configs[0].n_mels;
        if self.configs.iter().any(|c| c.n_mels != n_mels) {
            return Err(Error::Config("all channels must share n_mels".into()));
        }
        let mut values = Array3::<f32>::zeros((n_mels, self.target_frames, CHANNELS));
        for (ch, (cfg, bank)) in self.configs.iter().zip(&self.banks).enumerate() {
            let db = log_mel_channel_with(clip, cfg, bank)?;
            let db = interpolate_frames(&db, self.target_frames);
            values
                .index_axis_mut(Axis(2), ch)
                .assign(&db.mapv(|v| v as f32));
        }
        Ok(FeatureMap {
            values,
            floor_db: FLOOR_DB,
            provenance: Provenance {
                sample_id: sample_id.to_string(),
                config_hash: self.hash.clone(),
            },
        })
    }
}

/// Computes the three channels independently and stacks them after
/// interpolating each to `target_frames`.
pub fn stack_three_channels(
    clip: &AudioClip,
    configs: &[ChannelConfig; 3],
    target_frames: usize,
) -> Result<FeatureMap> {
    if target_frames != 128 && target_frames != 256 {
        return Err(Error::Parameter(format!(
            "target frame count {target_frames} is not one of 128, 256"
        )));
    }
    FeatureExtractor::new(*configs, target_frames, clip.sample_rate_hz())?.extract(clip, "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SR: u32 = 44_100;

    fn tone(freq: f64, len: usize) -> AudioClip {
        let s = (0..len)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / f64::from(SR)).sin()) as f32)
            .collect();
        AudioClip::new(s, SR).unwrap()
    }

    #[test]
    fn fft_sizes_follow_window() {
        let c = default_channels(SR);
        assert_eq!([c[0].fft_size, c[1].fft_size, c[2].fft_size], [2048, 4096, 8192]);
        assert_eq!(c[0].window_samples(SR), 1103);
        assert_eq!(c[1].window_samples(SR), 2205);
        assert_eq!(c[2].window_samples(SR), 4410);
    }

    #[test]
    fn stft_frame_count() {
        let clip = tone(1000.0, 44_100);
        let m = stft_magnitude(&clip, 25.0, 10.0, 2048).unwrap();
        // direct count of centre positions 0, hop, 2*hop, ... <= len
        let centres = (0..=44_100).step_by(441).count();
        assert_eq!(m.dim(), (1025, centres));
        assert_eq!(centres, 101);
    }

    #[test]
    fn stft_zero_and_peak() {
        let zero = AudioClip::new(vec![0.0; 4000], SR).unwrap();
        let m = stft_magnitude(&zero, 25.0, 10.0, 2048).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));

        let clip = tone(1000.0, 44_100);
        let m = stft_magnitude(&clip, 25.0, 10.0, 2048).unwrap();
        let expect = (1000.0f64 * 2048.0 / 44_100.0).round() as usize;
        for t in 3..m.ncols() - 3 {
            let col = m.column(t);
            let k = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(k, expect, "frame {t}");
        }
        assert!(matches!(stft_magnitude(&clip, 25.0, 10.0, 1024), Err(Error::Parameter(_))));
    }

    #[test]
    fn log_mel_properties() {
        let cfg = ChannelConfig::new(25.0, 10.0, SR);
        let silence = AudioClip::new(vec![0.0; 8000], SR).unwrap();
        let db = log_mel_channel(&silence, &cfg).unwrap();
        assert!(db.iter().all(|&v| v == f64::from(FLOOR_DB)));

        let clip = tone(440.0, 22_050);
        let db = log_mel_channel(&clip, &cfg).unwrap();
        let max = db.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 0.0);
        assert!(db.iter().all(|&v| (f64::from(FLOOR_DB)..=0.0).contains(&v)));

        // Filterbank geometry oracle: the mel bins whose triangle support
        // contains 440 Hz.
        let edges: Vec<f64> = (0..=N_MELS + 1)
            .map(|i| mel_to_hz(i as f64 * hz_to_mel(f64::from(SR) / 2.0) / (N_MELS + 1) as f64))
            .collect();
        let containing: Vec<usize> = (0..N_MELS)
            .filter(|&m| edges[m] < 440.0 && 440.0 < edges[m + 2])
            .collect();
        assert_eq!(containing.len(), 2);
        for t in 2..db.ncols() - 2 {
            let col = db.column(t);
            let m = (0..N_MELS).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert!(containing.contains(&m), "frame {t}: bin {m}, expected {containing:?}");
        }
    }

    #[test]
    fn preset_shapes() {
        let clip = tone(300.0, 30_000);
        for preset in [FeaturePreset::Phrase, FeaturePreset::Character] {
            let fm = FeatureExtractor::for_preset(preset).extract(&clip, "x").unwrap();
            assert_eq!(fm.shape(), [128, preset.target_frames(), 3]);
            assert!(fm.values.iter().all(|v| v.is_finite() && (FLOOR_DB..=0.0).contains(v)));
        }
        let silence = AudioClip::new(vec![0.0; 100], SR).unwrap();
        let fm = FeatureExtractor::for_preset(FeaturePreset::Character)
            .extract(&silence, "s")
            .unwrap();
        assert!(fm.values.iter().all(|&v| v == FLOOR_DB));
    }

    #[test]
    fn stacking_order_and_identity_interpolation() {
        // 1.27 s at 10 ms hop gives exactly 128 frames on channel 0.
        let len = 127 * 441;
        let clip = tone(500.0, len);
        let configs = default_channels(SR);
        let fm = stack_three_channels(&clip, &configs, 128).unwrap();
        let ch0 = log_mel_channel(&clip, &configs[0]).unwrap();
        assert_eq!(ch0.ncols(), 128);
        for ((m, t), v) in ch0.indexed_iter() {
            assert_eq!(fm.values[[m, t, 0]], *v as f32);
        }
        let ch2 = interpolate_frames(&log_mel_channel(&clip, &configs[2]).unwrap(), 128);
        assert_eq!(fm.values[[40, 64, 2]], ch2[[40, 64]] as f32);
        assert!(stack_three_channels(&clip, &configs, 100).is_err());
    }

    #[test]
    fn interpolation_does_not_overshoot() {
        let m = Array2::from_shape_fn((3, 7), |(r, c)| ((r * 7 + c) as f64 * 1.7).sin());
        let out = interpolate_frames(&m, 20);
        for r in 0..3 {
            let row = m.row(r);
            let (lo, hi) = row.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(out.row(r).iter().all(|&v| v >= lo && v <= hi));
            assert_eq!(out[[r, 0]], m[[r, 0]]);
            assert_eq!(out[[r, 19]], m[[r, 6]]);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let clip = tone(700.0, 20_000);
        let ex = FeatureExtractor::for_preset(FeaturePreset::Character);
        assert_eq!(ex.extract(&clip, "a").unwrap(), ex.extract(&clip, "a").unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = default_channels(SR);
        c[1].hop_ms = c[0].hop_ms;
        assert!(FeatureExtractor::new(c, 128, SR).is_err());
        let mut c = default_channels(SR);
        c[0].fmax_hz = 30_000.0;
        assert!(FeatureExtractor::new(c, 128, SR).is_err());
        let mut c = default_channels(SR);
        c[0].hop_ms = 40.0;
        assert!(FeatureExtractor::new(c, 128, SR).is_err());
    }
}
