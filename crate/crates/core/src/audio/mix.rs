use rand::Rng;

use crate::error::{Error, Result};

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Crops `noise` at a random offset, or tiles it, to exactly `len` samples.
pub fn fit_noise<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::Degenerate("noise is empty".into()));
    }
    if noise.len() >= len {
        let offset = rng.random_range(0..=noise.len() - len);
        Ok(noise[offset..offset + len].to_vec())
    } else {
        Ok(noise.iter().copied().cycle().take(len).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub samples: Vec<f64>,
    /// Scaled noise actually added to the clean signal.
    pub noise: Vec<f64>,
    pub gain: f64,
}

/// `clean + g * noise` with `g = sqrt(P_clean / (P_noise * 10^(snr/10)))`.
/// `noise` is fitted to the clean length first.
pub fn mix_at_snr<R: Rng + ?Sized>(clean: &[f64], noise: &[f64], snr_db: f64, rng: &mut R) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::config("snr_db", format!("{snr_db} is not finite")));
    }
    let noise = fit_noise(noise, clean.len(), rng)?;
    let pc = power(clean);
    let pn = power(&noise);
    if pc == 0.0 {
        return Err(Error::Degenerate("clean signal is silent".into()));
    }
    if pn == 0.0 {
        return Err(Error::Degenerate("noise signal is silent".into()));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let noise: Vec<f64> = noise.iter().map(|n| gain * n).collect();
    let samples = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
    Ok(Mixture { samples, noise, gain })
}
