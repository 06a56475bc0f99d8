use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use super::stft::{istft, Spectrogram};
use super::{LOG_EPS, N_BINS, N_FFT, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// What the filterbank integrates: squared or plain bin magnitudes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumScale {
    #[default]
    Power,
    Magnitude,
}

/// Mel-by-frame matrix, stored row-major (`N_MELS x frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub frames: usize,
    pub data: Vec<f64>,
}

impl MelSpec {
    pub fn new(frames: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || data.len() != frames * N_MELS {
            return Err(Error::Format(format!(
                "mel matrix of {frames} frames needs {} values, got {}",
                frames * N_MELS,
                data.len()
            )));
        }
        Ok(MelSpec { frames, data })
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * self.frames + frame]
    }
}

/// Triangular filters with unit peaks, centers evenly spaced in mel between
/// 0 Hz and the Nyquist frequency.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    edges: Vec<f64>,
    pinv: DMatrix<f64>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let fmax = SAMPLE_RATE as f64 / 2.0;
        let top = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let mut weights = vec![0.0; N_MELS * N_BINS];
        for m in 0..N_MELS {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..N_BINS {
                let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * N_BINS + k] = w;
            }
        }
        let fb = DMatrix::from_row_slice(N_MELS, N_BINS, &weights);
        let pinv = fb.pseudo_inverse(1e-12).expect("non-negative epsilon");
        MelFilterbank { weights, edges, pinv }
    }

    /// Filter `m` as (lower edge, center, upper edge) in Hz.
    pub fn filter_hz(&self, m: usize) -> (f64, f64, f64) {
        (self.edges[m], self.edges[m + 1], self.edges[m + 2])
    }

    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        self.weights[mel * N_BINS + bin]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the filterbank to one frame of per-bin energies.
    pub fn apply(&self, energy: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(N_BINS)
            .map(|row| row.iter().zip(energy).map(|(w, e)| w * e).sum())
            .collect()
    }

    /// Least-squares per-bin energies for one frame of mel energies, clamped at 0.
    pub fn invert(&self, mel: &[f64]) -> Vec<f64> {
        let v = &self.pinv * nalgebra::DVector::from_column_slice(mel);
        v.iter().map(|x| x.max(0.0)).collect()
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

/// `ln(fb * |s|^p + eps)` per frame.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank, scale: SpectrumScale) -> MelSpec {
    let frames = spec.frames();
    let mut data = vec![0.0; N_MELS * frames];
    for t in 0..frames {
        let energy: Vec<f64> = spec
            .frame(t)
            .iter()
            .map(|c| match scale {
                SpectrumScale::Power => c.norm_sqr(),
                SpectrumScale::Magnitude => c.norm(),
            })
            .collect();
        for (m, e) in fb.apply(&energy).into_iter().enumerate() {
            data[m * frames + t] = (e + LOG_EPS).ln();
        }
    }
    MelSpec { frames, data }
}

/// Rebuilds a waveform from a predicted log-mel matrix using the filterbank
/// pseudo-inverse for magnitudes and `phase_source` for phases.
pub fn mel_invert(
    pred: &MelSpec,
    phase_source: &Spectrogram,
    fb: &MelFilterbank,
    scale: SpectrumScale,
) -> Result<Vec<f64>> {
    if pred.frames != phase_source.frames() {
        return Err(Error::Format(format!(
            "mel has {} frames, phase source {}",
            pred.frames,
            phase_source.frames()
        )));
    }
    let frames = pred.frames;
    let mut bins = Vec::with_capacity(frames * N_BINS);
    let mut column = vec![0.0; N_MELS];
    for t in 0..frames {
        for (m, c) in column.iter_mut().enumerate() {
            *c = pred.get(m, t).exp();
        }
        let energy = fb.invert(&column);
        for (e, p) in energy.iter().zip(phase_source.frame(t)) {
            let mag = match scale {
                SpectrumScale::Power => e.sqrt(),
                SpectrumScale::Magnitude => *e,
            };
            let r = p.norm();
            let unit = if r > 0.0 { p / r } else { Complex::new(1.0, 0.0) };
            bins.push(unit * mag);
        }
    }
    Ok(istft(&Spectrogram::new(frames, bins)?))
}
