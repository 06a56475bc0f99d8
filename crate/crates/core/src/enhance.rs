//! Inference path from a noisy waveform and its video to an enhanced waveform.

use crate::audio::{
    assemble, chunk, log_mel, mel_invert, stft, Chunk, MelFilterbank, MelSpec, SpectrumScale, CHUNK_FRAMES, N_MELS,
};
use crate::error::{Error, Result};
use crate::model::Avcrn;
use crate::tensor::Tensor;
use crate::visual::{VideoSegment, FRAMES, SEGMENT_LEN, SIZE};

/// Chunks per forward pass.
const BATCH: usize = 16;

pub struct Enhanced {
    /// Predicted clean log-mel matrix.
    pub log_mel: MelSpec,
    /// Log-mel matrix of the input mixture.
    pub mixture_log_mel: MelSpec,
    /// Reconstructed waveform, zero-padded to the input length.
    pub samples: Vec<f64>,
}

/// Enhances `mixture` in eval mode. `video` must hold one segment per
/// 20-frame chunk; `None` feeds black frames.
pub fn enhance(model: &Avcrn, mixture: &[f64], video: Option<&[VideoSegment]>) -> Result<Enhanced> {
    let fb = MelFilterbank::new();
    let spec = stft(mixture)?;
    let mix_mel = log_mel(&spec, &fb, SpectrumScale::Power);
    let chunks = chunk(&mix_mel);
    if let Some(v) = video {
        if v.len() != chunks.len() {
            return Err(Error::Format(format!(
                "{} audio chunks but {} video segments",
                chunks.len(),
                v.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(chunks.len());
    for (g, group) in chunks.chunks(BATCH).enumerate() {
        let n = group.len();
        let mut audio = Vec::with_capacity(n * N_MELS * CHUNK_FRAMES);
        let mut frames = Vec::with_capacity(n * SEGMENT_LEN);
        for (i, c) in group.iter().enumerate() {
            audio.extend_from_slice(&c.data);
            match video {
                Some(v) => frames.extend_from_slice(&v[g * BATCH + i].data),
                None => frames.resize(frames.len() + SEGMENT_LEN, 0.0),
            }
        }
        let audio = Tensor::new(&[n, 1, N_MELS, CHUNK_FRAMES], audio)?;
        let frames = Tensor::new(&[n, FRAMES, SIZE, SIZE], frames)?;
        let pred = model.predict(&audio, &frames)?;
        for (c, data) in group.iter().zip(pred.data().chunks(N_MELS * CHUNK_FRAMES)) {
            out.push(Chunk {
                data: data.to_vec(),
                valid_frames: c.valid_frames,
            });
        }
    }
    let pred = assemble(&out)?;
    let mut samples = mel_invert(&pred, &spec, &fb, SpectrumScale::Power)?;
    samples.resize(mixture.len(), 0.0);
    Ok(Enhanced {
        log_mel: pred,
        mixture_log_mel: mix_mel,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub lsd_db: f64,
}

fn scores(clean: &[f64], clean_mel: &MelSpec, estimate: &[f64], estimate_mel: &MelSpec) -> Result<Scores> {
    Ok(Scores {
        stoi: crate::metrics::stoi(clean, estimate)?,
        si_sdr_db: crate::metrics::si_sdr(clean, estimate)?,
        lsd_db: crate::metrics::log_spectral_distance(clean_mel, estimate_mel)?,
    })
}

fn clean_log_mel(clean: &[f64]) -> Result<MelSpec> {
    crate::audio::waveform_log_mel(clean, &MelFilterbank::new(), SpectrumScale::Power)
}

/// Scores of the noisy input itself.
pub fn score_unprocessed(clean: &[f64], mixture: &[f64]) -> Result<Scores> {
    let fb = MelFilterbank::new();
    let mix_mel = crate::audio::waveform_log_mel(mixture, &fb, SpectrumScale::Power)?;
    scores(clean, &clean_log_mel(clean)?, mixture, &mix_mel)
}

/// Scores of the enhanced waveform and of the predicted log-mel matrix.
pub fn score_enhanced(model: &Avcrn, clean: &[f64], mixture: &[f64], video: Option<&[VideoSegment]>) -> Result<Scores> {
    let out = enhance(model, mixture, video)?;
    scores(clean, &clean_log_mel(clean)?, &out.samples, &out.log_mel)
}
