use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const STOI_RATE: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per short-time segment (384 ms).
const SEGMENT: usize = 30;
/// Lower SDR bound of the clipping step, in dB.
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational-rate resampler with a Kaiser-windowed sinc lowpass evaluated in
/// polyphase form.
#[derive(Clone, Debug)]
pub struct Resampler {
    up: usize,
    down: usize,
    taps: Vec<f64>,
}

impl Resampler {
    /// Lowpass with passband edge `pass_hz`, stopband edge `stop_hz` and
    /// `atten_db` stopband attenuation, designed at `from_hz * up`.
    pub fn new(from_hz: usize, to_hz: usize, pass_hz: f64, stop_hz: f64, atten_db: f64) -> Self {
        let g = gcd(from_hz, to_hz);
        let (up, down) = (to_hz / g, from_hz / g);
        let fs = (from_hz * up) as f64;
        let width = 2.0 * PI * (stop_hz - pass_hz) / fs;
        let beta = if atten_db > 50.0 {
            0.1102 * (atten_db - 8.7)
        } else if atten_db >= 21.0 {
            0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
        } else {
            0.0
        };
        let mut len = ((atten_db - 7.95) / (2.285 * width)).ceil() as usize + 1;
        len |= 1;
        let mid = (len / 2) as f64;
        let fc = (pass_hz + stop_hz) / 2.0 / fs;
        let i0b = bessel_i0(beta);
        let taps = (0..len)
            .map(|n| {
                let t = n as f64 - mid;
                let sinc = if t == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * t).sin() / (PI * t)
                };
                let r = t / mid;
                let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
                sinc * w * up as f64
            })
            .collect();
        Resampler { up, down, taps }
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (up, down) = (self.up as isize, self.down as isize);
        let len = self.taps.len() as isize;
        let mid = len / 2;
        let out_len = (x.len() * self.up).div_ceil(self.down);
        (0..out_len as isize)
            .map(|m| {
                // Position on the upsampled grid, centred on the filter.
                let p = m * down + mid;
                let first = ((p - len + 1).max(0) as usize).div_ceil(up as usize) as isize;
                let last = (p / up).min(x.len() as isize - 1);
                (first..=last)
                    .map(|n| x[n as usize] * self.taps[(p - n * up) as usize])
                    .sum()
            })
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The 16 kHz to 10 kHz converter used before analysis.
pub fn resample_to_stoi_rate(x: &[f64]) -> Vec<f64> {
    Resampler::new(crate::audio::SAMPLE_RATE as usize, STOI_RATE, 4500.0, 5000.0, 60.0).process(x)
}

/// Symmetric Hann of `n` points without the zero endpoints.
fn analysis_window() -> Vec<f64> {
    (1..=FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (FRAME + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than 40 dB below the loudest clean frame from both
/// signals and overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let energy = |s: &[f64], start: usize| -> f64 {
        let e: f64 = (0..FRAME).map(|i| (w[i] * s[start + i]).powi(2)).sum();
        20.0 * (e.sqrt() + f64::EPSILON).log10()
    };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts.iter().map(|&s| energy(x, s)).collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| e > max - DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let len = if keep.is_empty() {
        0
    } else {
        (keep.len() - 1) * HOP + FRAME
    };
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (k, &s) in keep.iter().enumerate() {
        for i in 0..FRAME {
            xs[k * HOP + i] += w[i] * x[s + i];
            ys[k * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Bin ranges `[lo, hi)` of the one-third-octave bands.
fn band_bins() -> Vec<(usize, usize)> {
    let nearest = |f: f64| -> usize {
        let bin = f * NFFT as f64 / STOI_RATE as f64;
        (bin.round() as usize).min(NFFT / 2)
    };
    (0..BANDS)
        .map(|k| {
            let lo = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 - 1.0 / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 + 1.0 / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn third_octave_envelopes(s: &[f64], w: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for start in frame_starts(s.len()) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i] = Complex::new(w[i] * s[start + i], 0.0);
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            out[b].push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

fn is_silent(s: &[f64]) -> bool {
    s.iter().all(|&v| v == 0.0)
}

/// Short-time objective intelligibility of `processed` against `clean`, both
/// at 16 kHz. Returns the mean clipped envelope correlation, floored at 0.
pub fn stoi(clean: &[f64], processed: &[f64]) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::Format(format!(
            "signals differ in length: {} vs {}",
            clean.len(),
            processed.len()
        )));
    }
    if is_silent(clean) || is_silent(processed) {
        return Err(Error::Degenerate(
            "intelligibility is undefined for a silent signal".into(),
        ));
    }
    let w = analysis_window();
    let x = resample_to_stoi_rate(clean);
    let y = resample_to_stoi_rate(processed);
    let (x, y) = remove_silent_frames(&x, &y, &w);
    let bands = band_bins();
    let xe = third_octave_envelopes(&x, &w, &bands);
    let ye = third_octave_envelopes(&y, &w, &bands);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(Error::Degenerate(format!(
            "{frames} active frames, need at least {SEGMENT} for one segment"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT + 1;
    for m in 0..segments {
        for b in 0..BANDS {
            let xs = &xe[b][m..m + SEGMENT];
            let ys = &ye[b][m..m + SEGMENT];
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let alpha = norm(xs) / (norm(ys) + f64::EPSILON);
            let yc: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (alpha * yv).min(clip * xv))
                .collect();
            total += correlation(xs, &yc);
        }
    }
    Ok((total / (segments * BANDS) as f64).clamp(0.0, 1.0))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let da: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let db: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = da.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON;
    let nb = db.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON;
    da.iter().zip(&db).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}
