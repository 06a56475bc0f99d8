use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{HOP, N_BINS, N_FFT};
use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided short-time spectrum, stored frame-major (`frames x N_BINS`).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: Vec<Complex<f64>>) -> Result<Self> {
        if frames == 0 || bins.len() != frames * N_BINS {
            return Err(Error::Format(format!(
                "spectrogram of {frames} frames needs {} bins, got {}",
                frames * N_BINS,
                bins.len()
            )));
        }
        Ok(Spectrogram { frames, bins })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.bins[t * N_BINS..][..N_BINS]
    }

    pub fn bins(&self) -> &[Complex<f64>] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.bins
    }

    /// Number of samples an inverse transform produces.
    pub fn signal_len(&self) -> usize {
        (self.frames - 1) * HOP + N_FFT
    }
}

pub fn frame_count(len: usize) -> usize {
    if len < N_FFT {
        0
    } else {
        1 + (len - N_FFT) / HOP
    }
}

/// Frame `t` covers samples `[HOP*t, HOP*t + N_FFT)`; trailing samples that do
/// not fill a frame are ignored.
pub fn stft(samples: &[f64]) -> Result<Spectrogram> {
    if samples.len() < N_FFT {
        return Err(Error::TooShort {
            required: N_FFT,
            got: samples.len(),
        });
    }
    let frames = frame_count(samples.len());
    let window = hann(N_FFT);
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut bins = Vec::with_capacity(frames * N_BINS);
    for t in 0..frames {
        let seg = &samples[t * HOP..][..N_FFT];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        bins.extend_from_slice(&buf[..N_BINS]);
    }
    Spectrogram::new(frames, bins)
}

const NORM_FLOOR: f64 = 1e-3;

/// Weighted overlap-add with window-squared normalization. The normalizer is
/// floored so that edge samples, covered only by the window tails, cannot
/// amplify an inconsistent spectrogram by more than `1/sqrt(NORM_FLOOR)`.
pub fn istft(spec: &Spectrogram) -> Vec<f64> {
    let window = hann(N_FFT);
    let ifft = FftPlanner::new().plan_fft_inverse(N_FFT);
    let len = spec.signal_len();
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for t in 0..spec.frames() {
        let frame = spec.frame(t);
        buf[..N_BINS].copy_from_slice(frame);
        for k in 1..N_FFT - N_BINS + 1 {
            buf[N_FFT - k] = frame[k].conj();
        }
        // A real signal has real DC and Nyquist bins.
        buf[0].im = 0.0;
        buf[N_BINS - 1].im = 0.0;
        ifft.process(&mut buf);
        let start = t * HOP;
        for (i, (&w, b)) in window.iter().zip(&buf).enumerate() {
            out[start + i] += w * b.re / N_FFT as f64;
            norm[start + i] += w * w;
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        *o /= n.max(NORM_FLOOR);
    }
    out
}
