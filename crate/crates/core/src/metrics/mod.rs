//! Objective quality measures and the evaluation report.

mod report;
mod stoi;

pub use report::{build_report, EvalReport, EvalRow, ItemScore, UNPROCESSED};
pub use stoi::{resample_to_stoi_rate, stoi, Resampler, STOI_RATE};

use crate::audio::MelSpec;
use crate::error::{Error, Result};

/// Bound on reported SI-SDR magnitudes.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB, clamped to ±100 dB.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Format(format!(
            "signals differ in length: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let energy: f64 = reference.iter().map(|r| r * r).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("reference signal is silent".into()));
    }
    let dot: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let scale = dot / energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let t = scale * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    let db = if target == 0.0 {
        -SI_SDR_CAP_DB
    } else if residual == 0.0 {
        SI_SDR_CAP_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Root-mean-square difference of two natural-log spectra, in dB.
pub fn log_spectral_distance(clean: &MelSpec, enhanced: &MelSpec) -> Result<f64> {
    if clean.frames != enhanced.frames || clean.data.len() != enhanced.data.len() {
        return Err(Error::Format(format!(
            "log-mel frame counts differ: {} vs {}",
            clean.frames, enhanced.frames
        )));
    }
    if clean.frames == 0 {
        return Err(Error::Degenerate("no frames to compare".into()));
    }
    let mse = clean
        .data
        .iter()
        .zip(&enhanced.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / clean.data.len() as f64;
    Ok(10.0 / std::f64::consts::LN_10 * mse.sqrt())
}
