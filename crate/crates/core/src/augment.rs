//! Waveform augmentations and the deterministic nine-fold expansion used to
//! build training segments.
//!
//! Every transform is a pure function of its inputs. The only randomness
//! (noise, and the parameters drawn by [`ExpansionPlan`]) comes from ChaCha
//! streams seeded explicitly, so results never depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{resample_to_len, AudioClip};
use crate::error::{Error, Result};
use crate::spectral::Stft;

const VOCODER_FFT: usize = 2048;
const VOCODER_HOP: usize = 512;
/// Level detector integration time for the compressor.
const DRC_RMS_WINDOW_MS: f64 = 10.0;

/// Shifts pitch by `semitones` while keeping duration.
///
/// Phase-vocoder time stretch by `2^(s/12)` followed by band-limited
/// resampling back to the original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip> {
    if !semitones.is_finite() || semitones.abs() > 12.0 {
        return Err(Error::Parameter(format!(
            "pitch shift of {semitones} semitones outside [-12, 12]"
        )));
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = time_stretch(clip, factor)?;
    let out = resample_to_len(&stretched, clip.len())?;
    Ok(out)
}

/// Phase-vocoder time stretch: the output lasts `factor` times as long and
/// keeps the input's pitch.
pub fn time_stretch(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Parameter(format!("stretch factor {factor} must be positive")));
    }
    let x: Vec<f64> = clip.samples().iter().map(|&s| f64::from(s)).collect();
    let stft = Stft::new(VOCODER_FFT, VOCODER_FFT, VOCODER_HOP);
    let spec = stft.forward(&x);
    let stretched = phase_vocoder(&spec, 1.0 / factor, VOCODER_HOP, VOCODER_FFT);
    let out_len = ((x.len() as f64) * factor).round().max(1.0) as usize;
    let y = stft.inverse(&stretched, out_len);
    AudioClip::from_unclipped(y.into_iter().map(|v| v as f32).collect(), clip.sample_rate_hz())
}

/// Re-times a sequence of STFT frames by `rate` (frames advance `rate` input
/// frames per output frame), interpolating magnitude and accumulating phase.
fn phase_vocoder(
    spec: &[Vec<num_complex::Complex64>],
    rate: f64,
    hop: usize,
    fft_size: usize,
) -> Vec<Vec<num_complex::Complex64>> {
    use num_complex::Complex64;
    use std::f64::consts::PI;

    let n_frames = spec.len();
    let bins = spec[0].len();
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * hop as f64 * k as f64 / fft_size as f64)
        .collect();
    let zero = vec![Complex64::new(0.0, 0.0); bins];
    let frame = |i: usize| spec.get(i).unwrap_or(&zero);

    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let steps = (n_frames as f64 / rate).ceil() as usize;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let step = t as f64 * rate;
        if step >= n_frames as f64 {
            break;
        }
        let i = step.floor() as usize;
        let alpha = step - i as f64;
        let (a, b) = (frame(i), frame(i + 1));
        let mut col = Vec::with_capacity(bins);
        for k in 0..bins {
            let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
            col.push(Complex64::from_polar(mag, phase[k]));
            let mut d = b[k].arg() - a[k].arg() - advance[k];
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            phase[k] += advance[k] + d;
        }
        out.push(col);
    }
    out
}

/// Circular shift by `round(fraction * len)` samples (positive = later).
pub fn time_shift(clip: &AudioClip, fraction: f64) -> Result<AudioClip> {
    if !(fraction.is_finite() && fraction.abs() < 1.0) {
        return Err(Error::Parameter(format!("time shift fraction {fraction} outside (-1, 1)")));
    }
    let n = clip.len() as i64;
    let shift = (fraction * n as f64).round() as i64;
    let mut samples = clip.samples().to_vec();
    samples.rotate_right(shift.rem_euclid(n) as usize);
    AudioClip::with_bit_depth(samples, clip.sample_rate_hz(), clip.source_bit_depth())
}

/// Plays the clip `factor` times faster (pitch follows speed).
/// The output has `round(len / factor)` samples.
pub fn speed_scale(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Parameter(format!("speed factor {factor} outside [0.5, 2.0]")));
    }
    let out_len = (clip.len() as f64 / factor).round().max(1.0) as usize;
    resample_to_len(clip, out_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrcParams {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
}

impl Default for DrcParams {
    fn default() -> Self {
        Self {
            threshold_db: -20.0,
            ratio: 4.0,
            attack_ms: 5.0,
            release_ms: 50.0,
        }
    }
}

/// Feed-forward compressor with an RMS level detector.
///
/// Level is the RMS over a trailing 10 ms window, expressed as
/// `20 log10(rms)`. Above `threshold_db` the static curve reduces gain by
/// `(1 - 1/ratio)` dB per dB; the gain then follows attack/release
/// one-pole ballistics. Gain never exceeds 0 dB.
pub fn dynamic_range_compress(clip: &AudioClip, p: &DrcParams) -> Result<AudioClip> {
    if !(p.ratio >= 1.0) {
        return Err(Error::Parameter(format!("compression ratio {} below 1", p.ratio)));
    }
    if !(p.threshold_db <= 0.0) {
        return Err(Error::Parameter(format!("threshold {} dB above 0 dBFS", p.threshold_db)));
    }
    if !(p.attack_ms > 0.0 && p.release_ms > 0.0) {
        return Err(Error::Parameter("attack and release must be positive".into()));
    }
    let sr = f64::from(clip.sample_rate_hz());
    let window = ((DRC_RMS_WINDOW_MS * sr / 1000.0).round() as usize).max(1);
    let attack = (-1000.0 / (p.attack_ms * sr)).exp();
    let release = (-1000.0 / (p.release_ms * sr)).exp();
    let slope = 1.0 - 1.0 / p.ratio;

    let x = clip.samples();
    let mut sum_sq = 0.0f64;
    let mut gain_db = 0.0f64;
    let mut out = Vec::with_capacity(x.len());
    for (n, &s) in x.iter().enumerate() {
        let s = f64::from(s);
        sum_sq += s * s;
        if n >= window {
            let old = f64::from(x[n - window]);
            sum_sq -= old * old;
        }
        let ms = (sum_sq / window as f64).max(0.0);
        let level_db = if ms > 0.0 { 10.0 * ms.log10() } else { f64::NEG_INFINITY };
        let target = if level_db > p.threshold_db {
            -slope * (level_db - p.threshold_db)
        } else {
            0.0
        };
        let coeff = if target < gain_db { attack } else { release };
        gain_db = coeff * gain_db + (1.0 - coeff) * target;
        let g = 10f64.powf(gain_db.min(0.0) / 20.0);
        out.push((s * g) as f32);
    }
    AudioClip::with_bit_depth(out, clip.sample_rate_hz(), clip.source_bit_depth())
}

/// Multiplies by `10^(gain_db/20)` and hard-clips to `[-1, 1]`.
pub fn apply_gain(clip: &AudioClip, gain_db: f64) -> Result<AudioClip> {
    if !(gain_db.is_finite() && gain_db.abs() <= 24.0) {
        return Err(Error::Parameter(format!("gain {gain_db} dB outside [-24, 24]")));
    }
    let g = 10f64.powf(gain_db / 20.0);
    let samples = clip
        .samples()
        .iter()
        .map(|&s| (f64::from(s) * g).clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::with_bit_depth(samples, clip.sample_rate_hz(), clip.source_bit_depth())
}

/// White Gaussian noise whose mean power is exactly `P_signal / 10^(snr/10)`.
pub fn snr_noise(clip: &AudioClip, snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if !(snr_db.is_finite() && snr_db >= 0.0) {
        return Err(Error::Parameter(format!("SNR {snr_db} dB must be >= 0")));
    }
    let p_signal = clip.power();
    if p_signal <= 0.0 {
        return Err(Error::DegenerateInput("signal has zero power".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..clip.len()).map(|_| rng.sample(StandardNormal)).collect();
    let p_raw = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let p_target = p_signal / 10f64.powf(snr_db / 10.0);
    let scale = if p_raw > 0.0 { (p_target / p_raw).sqrt() } else { 0.0 };
    noise.iter_mut().for_each(|v| *v *= scale);
    Ok(noise)
}

/// Adds white Gaussian noise at the requested SNR, then clips to `[-1, 1]`.
pub fn add_noise_snr(clip: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip> {
    let noise = snr_noise(clip, snr_db, seed)?;
    let samples = clip
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&s, n)| (f64::from(s) + n).clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::with_bit_depth(samples, clip.sample_rate_hz(), clip.source_bit_depth())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    PitchShift { semitones: f64 },
    TimeShift { fraction: f64 },
    SpeedScale { factor: f64 },
    DynamicRangeCompress(DrcParams),
    Gain { db: f64 },
    AddNoise { snr_db: f64, seed: u64 },
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Augmentation::PitchShift { semitones } => semitones.abs() <= 12.0,
            Augmentation::TimeShift { fraction } => fraction.abs() < 1.0,
            Augmentation::SpeedScale { factor } => (0.5..=2.0).contains(factor),
            Augmentation::DynamicRangeCompress(p) => p.ratio >= 1.0 && p.threshold_db <= 0.0,
            Augmentation::Gain { db } => db.abs() <= 24.0,
            Augmentation::AddNoise { snr_db, .. } => *snr_db >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("augmentation out of range: {self:?}")))
        }
    }

    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip> {
        match *self {
            Augmentation::PitchShift { semitones } => pitch_shift(clip, semitones),
            Augmentation::TimeShift { fraction } => time_shift(clip, fraction),
            Augmentation::SpeedScale { factor } => speed_scale(clip, factor),
            Augmentation::DynamicRangeCompress(ref p) => dynamic_range_compress(clip, p),
            Augmentation::Gain { db } => apply_gain(clip, db),
            Augmentation::AddNoise { snr_db, seed } => add_noise_snr(clip, snr_db, seed),
        }
    }
}

/// Ranges the expansion draws its random parameters from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub pitch_semitones: f64,
    pub shift_fraction: f64,
    pub speed_range: (f64, f64),
    pub gain_db_range: (f64, f64),
    pub snr_db_range: (f64, f64),
    pub drc: DrcParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pitch_semitones: 2.0,
            shift_fraction: 0.10,
            speed_range: (0.75, 1.25),
            gain_db_range: (-3.0, 3.0),
            snr_db_range: (0.0, 10.0),
            drc: DrcParams::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("speed_range", self.speed_range),
            ("gain_db_range", self.gain_db_range),
            ("snr_db_range", self.snr_db_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} [{lo}, {hi}] is not a range")));
            }
        }
        let probe = [
            Augmentation::PitchShift { semitones: self.pitch_semitones },
            Augmentation::TimeShift { fraction: self.shift_fraction },
            Augmentation::SpeedScale { factor: self.speed_range.0 },
            Augmentation::SpeedScale { factor: self.speed_range.1 },
            Augmentation::Gain { db: self.gain_db_range.0 },
            Augmentation::Gain { db: self.gain_db_range.1 },
            Augmentation::AddNoise { snr_db: self.snr_db_range.0, seed: 0 },
            Augmentation::DynamicRangeCompress(self.drc),
        ];
        probe.iter().try_for_each(Augmentation::validate)
    }
}

/// The eight variants produced alongside each original training clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    variants: Vec<Augmentation>,
}

impl ExpansionPlan {
    pub const VARIANTS: usize = 8;

    /// Derives the plan for one sample. The PRNG is keyed by
    /// `(sample_id, master_seed)` only.
    pub fn derive(sample_id: &str, master_seed: u64, cfg: &AugmentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_key(sample_id, master_seed));
        let mut uniform = |(lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        };
        let speed = uniform(cfg.speed_range);
        let gain = uniform(cfg.gain_db_range);
        let snr = uniform(cfg.snr_db_range);
        let noise_seed = rng.gen();
        Self {
            variants: vec![
                Augmentation::PitchShift { semitones: cfg.pitch_semitones },
                Augmentation::PitchShift { semitones: -cfg.pitch_semitones },
                Augmentation::TimeShift { fraction: cfg.shift_fraction },
                Augmentation::TimeShift { fraction: -cfg.shift_fraction },
                Augmentation::SpeedScale { factor: speed },
                Augmentation::DynamicRangeCompress(cfg.drc),
                Augmentation::Gain { db: gain },
                Augmentation::AddNoise { snr_db: snr, seed: noise_seed },
            ],
        }
    }

    pub fn variants(&self) -> &[Augmentation] {
        &self.variants
    }

    /// Original followed by the eight variants.
    pub fn apply(&self, clip: &AudioClip) -> Result<Vec<AudioClip>> {
        let mut out = Vec::with_capacity(Self::VARIANTS + 1);
        out.push(clip.clone());
        for v in &self.variants {
            out.push(v.apply(clip)?);
        }
        Ok(out)
    }
}

/// 64-bit key for per-sample random streams.
pub fn sample_key(sample_id: &str, master_seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(sample_id.as_bytes());
    h.update([0u8]);
    h.update(master_seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Returns `[original, pitch+, pitch-, shift+, shift-, speed, drc, gain, noise]`.
pub fn expand_nine_fold(clip: &AudioClip, sample_id: &str, master_seed: u64) -> Result<Vec<AudioClip>> {
    expand_with(clip, sample_id, master_seed, &AugmentConfig::default())
}

pub fn expand_with(
    clip: &AudioClip,
    sample_id: &str,
    master_seed: u64,
    cfg: &AugmentConfig,
) -> Result<Vec<AudioClip>> {
    ExpansionPlan::derive(sample_id, master_seed, cfg).apply(clip)
}
