//! Short-time Fourier transform plumbing shared by feature extraction and the
//! phase vocoder.
//!
//! Frames are centred: the signal is reflect-padded by `fft_size / 2` on both
//! sides, so frame `t` is centred on sample `t * hop` and a signal of `len`
//! samples yields `1 + len / hop` frames.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of `len` points.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Maps any integer index onto `[0, n)` by mirror reflection about the end
/// samples (numpy "reflect" mode, repeated for pads longer than the signal).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Number of centred frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Window of `win_len` points zero-padded (centred) to `fft_size`.
pub fn padded_window(win_len: usize, fft_size: usize) -> Vec<f64> {
    let mut w = vec![0.0; fft_size];
    let offset = (fft_size - win_len) / 2;
    w[offset..offset + win_len].copy_from_slice(&hann(win_len));
    w
}

pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(fft_size: usize, win_len: usize, hop: usize) -> Self {
        assert!(win_len <= fft_size && hop > 0);
        let mut planner = FftPlanner::new();
        Self {
            fft_size,
            hop,
            window: padded_window(win_len, fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Complex spectra, one `Vec` of `fft_size / 2 + 1` bins per frame.
    pub fn forward(&self, signal: &[f64]) -> Vec<Vec<Complex64>> {
        let n = signal.len();
        let half = (self.fft_size / 2) as isize;
        let frames = frame_count(n, self.hop);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..frames)
            .map(|t| {
                let start = (t * self.hop) as isize - half;
                for (k, slot) in buf.iter_mut().enumerate() {
                    let w = self.window[k];
                    *slot = if w == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(signal[reflect_index(start + k as isize, n)] * w, 0.0)
                    };
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse, normalised by the summed squared window,
    /// trimmed to `out_len` samples.
    pub fn inverse(&self, frames: &[Vec<Complex64>], out_len: usize) -> Vec<f64> {
        let n_fft = self.fft_size;
        let half = n_fft / 2;
        let total = half + out_len + n_fft;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (t, spec) in frames.iter().enumerate() {
            let start = t * self.hop;
            if start >= total {
                break;
            }
            for k in 0..n_fft {
                buf[k] = if k <= half {
                    spec[k]
                } else {
                    spec[n_fft - k].conj()
                };
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_fft {
                let i = start + k;
                if i >= total {
                    break;
                }
                let w = self.window[k];
                acc[i] += buf[k].re / n_fft as f64 * w;
                norm[i] += w * w;
            }
        }
        (0..out_len)
            .map(|i| {
                let j = i + half;
                if norm[j] > 1e-10 {
                    acc[j] / norm[j]
                } else {
                    acc[j]
                }
            })
            .collect()
    }
}
