//! Band-limited sample-rate conversion.
//!
//! Kaiser-windowed sinc (beta 8.6) with 32 taps per output phase at unity
//! ratio. The kernel is tabulated at a fine sub-sample resolution and linearly
//! interpolated between table entries, so any real-valued ratio is supported
//! without a rational decomposition. When downsampling the cutoff follows the
//! output Nyquist and the kernel widens accordingly.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::AudioClip;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.6;
const HALF_TAPS: usize = 16;
const TABLE_PHASES: usize = 512;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Windowed sinc sampled on `[0, HALF_TAPS]` zero crossings, `TABLE_PHASES`
/// points per crossing. Symmetric, so only the right half is stored.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = HALF_TAPS * TABLE_PHASES + 2;
        let norm = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let x = i as f64 / TABLE_PHASES as f64;
                if x >= HALF_TAPS as f64 {
                    return 0.0;
                }
                let sinc = if i == 0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let r = x / HALF_TAPS as f64;
                sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
            })
            .collect()
    })
}

fn kernel(x: f64) -> f64 {
    let table = kernel_table();
    let pos = x.abs() * TABLE_PHASES as f64;
    let i = pos as usize;
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = pos - i as f64;
    table[i] + (table[i + 1] - table[i]) * frac
}

/// Resamples `input` so that `output.len() == out_len`, treating the two
/// sequences as covering the same time span.
fn sinc_interpolate(input: &[f32], out_len: usize) -> Vec<f32> {
    let ratio = out_len as f64 / input.len() as f64;
    let cutoff = ROLLOFF * ratio.min(1.0);
    let reach = HALF_TAPS as f64 / cutoff;
    let n = input.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - reach).ceil() as isize).max(0);
            let hi = ((t + reach).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                acc += f64::from(input[i as usize]) * kernel((t - i as f64) * cutoff);
            }
            (acc * cutoff).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Converts a clip to `target_rate_hz`.
///
/// The output has `round(len * target / source)` samples (at least one).
/// Equal rates return the input unchanged.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz == 0 {
        return Err(Error::Parameter("target sample rate must be positive".into()));
    }
    if target_rate_hz == clip.sample_rate_hz() {
        return Ok(clip.clone());
    }
    let out_len = (clip.len() as f64 * f64::from(target_rate_hz) / f64::from(clip.sample_rate_hz()))
        .round()
        .max(1.0) as usize;
    let samples = sinc_interpolate(clip.samples(), out_len);
    AudioClip::with_bit_depth(samples, target_rate_hz, clip.source_bit_depth())
}

/// Stretches or squeezes a clip to exactly `out_len` samples while keeping its
/// nominal sample rate (the time base changes, so pitch moves with length).
pub fn resample_to_len(clip: &AudioClip, out_len: usize) -> Result<AudioClip> {
    if out_len == 0 {
        return Err(Error::Parameter("output length must be positive".into()));
    }
    if out_len == clip.len() {
        return Ok(clip.clone());
    }
    let samples = sinc_interpolate(clip.samples(), out_len);
    AudioClip::with_bit_depth(samples, clip.sample_rate_hz(), clip.source_bit_depth())
}
