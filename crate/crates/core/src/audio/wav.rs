use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Reads 16-bit mono PCM at 16 kHz into `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = WavReader::open(path)?;
    let s = reader.spec();
    if s != spec() {
        return Err(Error::Format(format!(
            "{}: need 16-bit mono PCM at {SAMPLE_RATE} Hz, got {} ch, {} Hz, {} bit {:?}",
            path.display(),
            s.channels,
            s.sample_rate,
            s.bits_per_sample,
            s.sample_format
        )));
    }
    reader.into_samples::<i16>().map(|v| Ok(v? as f64 / 32768.0)).collect()
}

/// Writes samples as 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let mut w = WavWriter::create(path, spec())?;
    for &x in samples {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite sample in waveform".into()));
        }
        w.write_sample(quantize(x))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
