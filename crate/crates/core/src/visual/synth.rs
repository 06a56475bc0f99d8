//! Deterministic toy speech with a matching mouth video.
//!
//! Audio is a voiced harmonic complex whose pitch changes every 200 ms, mixed
//! with an equal-power 50 Hz glottal pulse train, all under a slowly varying
//! loudness envelope. The pulse train keeps energy in every mel band, so
//! light additive noise only nudges the log-mel values. Video is an ellipse
//! whose height follows the envelope, one frame per 40 ms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{VideoSegment, FRAMES, SIZE};
use crate::audio::{chunk, mix_at_snr, waveform_log_mel, Chunk, MelFilterbank, SpectrumScale, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Samples per 200 ms segment.
pub const SEGMENT_SAMPLES: usize = 3200;
/// Samples per 40 ms video frame.
pub const FRAME_SAMPLES: usize = SEGMENT_SAMPLES / FRAMES;
const LEVEL: f64 = 0.1;
const ENVELOPE_FLOOR: f64 = 0.5;
const PULSE_PERIOD: usize = 320;
const PULSE_OFFSET: usize = 80;
const MAX_HARMONICS: usize = 4;
const BABBLE_TALKERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Babble,
}

impl NoiseKind {
    pub fn label(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Babble => "babble",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "babble" => Ok(NoiseKind::Babble),
            _ => Err(Error::config(
                "noise",
                format!("unknown noise kind {s:?}, expected white or babble"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClean {
    pub samples: Vec<f64>,
    /// Per-sample loudness envelope in `[0.5, 1]`.
    pub envelope: Vec<f64>,
    pub segments: usize,
}

fn segments_for(duration_s: f64) -> Result<usize> {
    if !(duration_s.is_finite() && duration_s >= 0.2 - 1e-9) {
        return Err(Error::config(
            "duration",
            format!("{duration_s} s is shorter than one 0.2 s chunk"),
        ));
    }
    Ok((duration_s / 0.2 + 1e-9).floor() as usize)
}

/// Clean toy speech; the length is `duration_s` rounded down to whole 200 ms segments.
pub fn synth_clean(seed: u64, duration_s: f64) -> Result<SynthClean> {
    let segments = segments_for(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean_from_rng(&mut rng, segments))
}

fn clean_from_rng(rng: &mut ChaCha8Rng, segments: usize) -> SynthClean {
    let n = segments * SEGMENT_SAMPLES;
    let knots: Vec<f64> = (0..segments * FRAMES + 1)
        .map(|_| ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * rng.random::<f64>())
        .collect();
    let envelope: Vec<f64> = (0..n)
        .map(|i| {
            let k = i / FRAME_SAMPLES;
            let frac = (i % FRAME_SAMPLES) as f64 / FRAME_SAMPLES as f64;
            knots[k] + (knots[k + 1] - knots[k]) * frac
        })
        .collect();

    let mut harmonic = vec![0.0; n];
    let mut phase = [0.0; MAX_HARMONICS];
    for s in 0..segments {
        let f0 = rng.random_range(100.0..250.0);
        let count = rng.random_range(2..=MAX_HARMONICS);
        let mut amps: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 0.2).collect();
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a *= 2f64.sqrt() / norm);
        let seg = &mut harmonic[s * SEGMENT_SAMPLES..][..SEGMENT_SAMPLES];
        for (h, a) in amps.iter().enumerate() {
            let w = 2.0 * PI * (h + 1) as f64 * f0 / SAMPLE_RATE as f64;
            for (t, v) in seg.iter_mut().enumerate() {
                *v += a * (phase[h] + w * t as f64).sin();
            }
        }
        for (h, p) in phase.iter_mut().enumerate() {
            let w = 2.0 * PI * (h + 1) as f64 * f0 / SAMPLE_RATE as f64;
            *p = (*p + w * SEGMENT_SAMPLES as f64) % (2.0 * PI);
        }
    }

    let pulse = (PULSE_PERIOD as f64).sqrt();
    let half = 0.5f64.sqrt();
    let samples = (0..n)
        .map(|i| {
            let p = if i % PULSE_PERIOD == PULSE_OFFSET { pulse } else { 0.0 };
            LEVEL * envelope[i] * half * (harmonic[i] + p)
        })
        .collect();
    SynthClean {
        samples,
        envelope,
        segments,
    }
}

/// White Gaussian noise or a babble of independent toy talkers, `len` samples long.
pub fn synth_noise(kind: NoiseKind, seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        NoiseKind::White => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (0..len).map(|_| normal.sample(&mut rng)).collect()
        }
        NoiseKind::Babble => {
            let segments = len.div_ceil(SEGMENT_SAMPLES).max(1);
            let mut out = vec![0.0; len];
            for _ in 0..BABBLE_TALKERS {
                let talker = clean_from_rng(&mut rng, segments);
                out.iter_mut().zip(&talker.samples).for_each(|(o, t)| *o += t);
            }
            out
        }
    }
}

/// Mouth aperture in `[0.5, 1]` per video frame: RMS of the envelope over the frame.
pub fn apertures(envelope: &[f64]) -> Vec<f64> {
    envelope
        .chunks(FRAME_SAMPLES)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect()
}

fn render_video(aperture: &[f64], rng: &mut ChaCha8Rng) -> Vec<VideoSegment> {
    let noise = Normal::new(0.0, 0.02).expect("positive std");
    let center = SIZE as f64 / 2.0;
    aperture
        .chunks(FRAMES)
        .map(|frames| {
            let mut data = Vec::with_capacity(FRAMES * SIZE * SIZE);
            for &a in frames {
                let semi_v = 2.0 + 18.0 * a;
                for r in 0..SIZE {
                    for c in 0..SIZE {
                        let dy = (r as f64 - center) / semi_v;
                        let dx = (c as f64 - center) / 20.0;
                        let base: f64 = if dx * dx + dy * dy <= 1.0 { 0.9 } else { 0.1 };
                        data.push((base + noise.sample(rng)).clamp(0.0, 1.0));
                    }
                }
            }
            VideoSegment { data }
        })
        .collect()
}

/// One synthetic recording with its video and a noisy mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub seed: u64,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub clean: Vec<f64>,
    /// Scaled noise as added to the clean signal.
    pub noise: Vec<f64>,
    pub mixture: Vec<f64>,
    pub video: Vec<VideoSegment>,
    pub aperture: Vec<f64>,
}

pub fn synth_utterance(seed: u64, duration_s: f64, snr_db: f64, kind: NoiseKind) -> Result<Utterance> {
    let clean = synth_clean(seed, duration_s)?;
    let aperture = apertures(&clean.envelope);
    let mut video_rng = ChaCha8Rng::seed_from_u64(seed);
    video_rng.set_stream(1);
    let video = render_video(&aperture, &mut video_rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);
    let noise_seed = noise_rng.random::<u64>();
    let noise = synth_noise(kind, noise_seed, clean.samples.len());
    let mix = mix_at_snr(&clean.samples, &noise, snr_db, &mut noise_rng)?;
    Ok(Utterance {
        id: format!("utt{seed:06}"),
        seed,
        snr_db,
        noise_kind: kind,
        clean: clean.samples,
        noise: mix.noise,
        mixture: mix.samples,
        video,
        aperture,
    })
}

/// One aligned 200 ms training unit.
#[derive(Clone, Debug, PartialEq)]
pub struct AvExample {
    pub mixture: Chunk,
    pub clean: Chunk,
    pub video: VideoSegment,
    pub utterance: String,
    pub index: usize,
    pub snr_db: f64,
    pub duration_ms: u32,
}

impl Utterance {
    /// Cuts the utterance into aligned chunk/segment triples.
    pub fn examples(&self, fb: &MelFilterbank, scale: SpectrumScale) -> Result<Vec<AvExample>> {
        let mix = chunk(&waveform_log_mel(&self.mixture, fb, scale)?);
        let clean = chunk(&waveform_log_mel(&self.clean, fb, scale)?);
        if mix.len() != self.video.len() {
            return Err(Error::Format(format!(
                "{}: {} audio chunks but {} video segments",
                self.id,
                mix.len(),
                self.video.len()
            )));
        }
        Ok(mix
            .into_iter()
            .zip(clean)
            .zip(&self.video)
            .enumerate()
            .map(|(index, ((mixture, clean), video))| AvExample {
                mixture,
                clean,
                video: video.clone(),
                utterance: self.id.clone(),
                index,
                snr_db: self.snr_db,
                duration_ms: 200,
            })
            .collect())
    }
}

/// Synthetic examples for one utterance with white noise at `snr_db`.
pub fn synth_av_pair(seed: u64, duration_s: f64, snr_db: f64) -> Result<Vec<AvExample>> {
    let utt = synth_utterance(seed, duration_s, snr_db, NoiseKind::White)?;
    utt.examples(&MelFilterbank::new(), SpectrumScale::Power)
}
