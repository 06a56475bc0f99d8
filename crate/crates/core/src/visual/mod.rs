//! Mouth-region video segments: the raw segment file format and a synthetic
//! generator whose video tracks the loudness of its audio.

mod synth;

pub use synth::{
    synth_av_pair, synth_clean, synth_noise, synth_utterance, AvExample, NoiseKind, SynthClean, Utterance,
};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FRAMES: usize = 5;
pub const SIZE: usize = 80;
pub const SEGMENT_LEN: usize = FRAMES * SIZE * SIZE;
const MAGIC: &[u8; 5] = b"AVSG1";

/// Five grayscale 80x80 frames in `[0, 1]`, frame-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSegment {
    pub data: Vec<f64>,
}

impl VideoSegment {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != SEGMENT_LEN {
            return Err(Error::Format(format!(
                "segment needs {SEGMENT_LEN} pixels, got {}",
                data.len()
            )));
        }
        Ok(VideoSegment { data })
    }

    pub fn black() -> Self {
        VideoSegment {
            data: vec![0.0; SEGMENT_LEN],
        }
    }

    pub fn pixel(&self, frame: usize, row: usize, col: usize) -> f64 {
        self.data[(frame * SIZE + row) * SIZE + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::new(bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

pub fn encode_segments(segments: &[VideoSegment]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + segments.len() * SEGMENT_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for s in segments {
        out.extend_from_slice(&s.to_bytes());
    }
    out
}

pub fn decode_segments(bytes: &[u8]) -> Result<Vec<VideoSegment>> {
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::Format("segment file: bad magic, expected AVSG1".into()));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[9..];
    if payload.len() != count * SEGMENT_LEN {
        return Err(Error::Format(format!(
            "segment file: header promises {count} segments of {SEGMENT_LEN} bytes, payload has {}",
            payload.len()
        )));
    }
    payload
        .chunks_exact(SEGMENT_LEN)
        .map(VideoSegment::from_bytes)
        .collect()
}

pub fn load_segments(path: &Path) -> Result<Vec<VideoSegment>> {
    decode_segments(&fs::read(path)?)
}

pub fn save_segments(path: &Path, segments: &[VideoSegment]) -> Result<()> {
    fs::write(path, encode_segments(segments))?;
    Ok(())
}
