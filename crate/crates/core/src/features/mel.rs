use ndarray::Array2;

use super::ChannelConfig;
use crate::error::{Error, Result};

/// HTK mel scale in its natural-log form, `1127 ln(1 + f/700)`. The common
/// `2595 log10` spelling rounds the constant and lands 0.015 below 1000 mel
/// at 1 kHz.
pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (hz / 700.0).ln_1p()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (mel / 1127.0).exp_m1()
}

/// Triangular filters on `n_mels + 2` mel-spaced edges, each scaled so its
/// largest weight is exactly 1.
///
/// Returns a configuration error when two adjacent filter centres fall on the
/// same FFT bin, since the filters would then be indistinguishable.
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate_hz: u32,
    fmin_hz: f64,
    fmax_hz: f64,
) -> Result<Array2<f64>> {
    if n_mels == 0 || fft_size < 2 || sample_rate_hz == 0 {
        return Err(Error::Config("filterbank dimensions must be positive".into()));
    }
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    if !(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= nyquist) {
        return Err(Error::Config(format!(
            "frequency range [{fmin_hz}, {fmax_hz}] invalid for Nyquist {nyquist}"
        )));
    }
    let bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate_hz) / fft_size as f64;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin_hz), hz_to_mel(fmax_hz));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let centre_bins: Vec<i64> = edges[1..=n_mels]
        .iter()
        .map(|f| (f / bin_hz).round() as i64)
        .collect();
    if let Some(w) = centre_bins.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "{n_mels} mel bands too many for fft size {fft_size}: filters {w} and {} share bin {}",
            w + 1,
            centre_bins[w]
        )));
    }

    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            fb[[m, k]] = rising.min(falling).max(0.0);
        }
        let peak = fb.row(m).iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::Config(format!("mel filter {m} covers no FFT bin")));
        }
        fb.row_mut(m).mapv_inplace(|v| v / peak);
    }
    Ok(fb)
}

/// Filterbank stored as per-row nonzero spans for fast projection.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bins: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(cfg: &ChannelConfig, sample_rate_hz: u32) -> Result<Self> {
        let dense = mel_filterbank(cfg.n_mels, cfg.fft_size, sample_rate_hz, cfg.fmin_hz, cfg.fmax_hz)?;
        Ok(Self::from_dense(&dense))
    }

    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&v| v != 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&v| v != 0.0).unwrap_or(0);
                (first, row.iter().skip(first).take(last + 1 - first).cloned().collect())
            })
            .collect();
        Self {
            bins: dense.ncols(),
            rows,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    /// `[bins, frames]` power spectrogram to `[n_mels, frames]`.
    pub fn apply(&self, power: &Array2<f64>) -> Array2<f64> {
        assert_eq!(power.nrows(), self.bins, "spectrogram bin count mismatch");
        let frames = power.ncols();
        let mut out = Array2::zeros((self.rows.len(), frames));
        for (m, (start, weights)) in self.rows.iter().enumerate() {
            for t in 0..frames {
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w * power[[start + i, t]];
                }
                out[[m, t]] = acc;
            }
        }
        out
    }
}
