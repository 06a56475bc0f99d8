//! Waveform to log-mel transforms and back, plus chunking and noise mixing.

mod mel;
mod mix;
mod stft;
mod wav;

pub use mel::{hz_to_mel, log_mel, mel_invert, mel_to_hz, MelFilterbank, MelSpec, SpectrumScale};
pub use mix::{fit_noise, mix_at_snr, power, Mixture};
pub use stft::{frame_count, hann, istft, stft, Spectrogram};
pub use wav::{quantize, read_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 640;
pub const HOP: usize = 160;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 80;
pub const CHUNK_FRAMES: usize = 20;
pub const LOG_EPS: f64 = 1e-10;

/// One `N_MELS x CHUNK_FRAMES` network unit; columns past `valid_frames` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub data: Vec<f64>,
    pub valid_frames: usize,
}

impl Chunk {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * CHUNK_FRAMES + frame]
    }
}

/// Splits the frame axis into consecutive 20-frame chunks, zero-padding the last.
pub fn chunk(mel: &MelSpec) -> Vec<Chunk> {
    let mut out = Vec::with_capacity(mel.frames.div_ceil(CHUNK_FRAMES));
    for start in (0..mel.frames).step_by(CHUNK_FRAMES) {
        let valid = CHUNK_FRAMES.min(mel.frames - start);
        let mut data = vec![0.0; N_MELS * CHUNK_FRAMES];
        for m in 0..N_MELS {
            let src = &mel.data[m * mel.frames + start..][..valid];
            data[m * CHUNK_FRAMES..][..valid].copy_from_slice(src);
        }
        out.push(Chunk {
            data,
            valid_frames: valid,
        });
    }
    out
}

/// Inverse of [`chunk`]: concatenates the valid columns of each chunk.
pub fn assemble(chunks: &[Chunk]) -> Result<MelSpec> {
    let frames: usize = chunks.iter().map(|c| c.valid_frames).sum();
    if chunks
        .iter()
        .any(|c| c.valid_frames == 0 || c.valid_frames > CHUNK_FRAMES || c.data.len() != N_MELS * CHUNK_FRAMES)
    {
        return Err(Error::Format("malformed chunk".into()));
    }
    let mut data = vec![0.0; N_MELS * frames];
    let mut at = 0;
    for c in chunks {
        for m in 0..N_MELS {
            data[m * frames + at..][..c.valid_frames].copy_from_slice(&c.data[m * CHUNK_FRAMES..][..c.valid_frames]);
        }
        at += c.valid_frames;
    }
    MelSpec::new(frames, data)
}

/// Full front end: waveform to log-mel matrix.
pub fn waveform_log_mel(samples: &[f64], fb: &MelFilterbank, scale: SpectrumScale) -> Result<MelSpec> {
    Ok(log_mel(&stft(samples)?, fb, scale))
}
