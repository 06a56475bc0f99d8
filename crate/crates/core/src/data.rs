//! On-disk synthetic datasets: WAV pairs, segment files and a JSON index.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, MelFilterbank, SpectrumScale};
use crate::error::{Error, Result};
use crate::visual::{load_segments, save_segments, synth_utterance, AvExample, NoiseKind, Utterance};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub seed: u64,
    pub snr_db: f64,
    pub noise: NoiseKind,
    /// Paths relative to the index file.
    pub clean: String,
    pub mixture: String,
    pub video: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub seed: u64,
    pub items: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub duration_s: f64,
    /// Cycled over the utterances.
    pub snrs_db: Vec<f64>,
    /// Cycled over the utterances, changing once per full SNR cycle.
    pub noises: Vec<NoiseKind>,
}

/// Utterance seeds drawn from one generator so that any prefix of a larger
/// dataset equals the smaller one.
pub fn utterance_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Utterance>> {
    if spec.snrs_db.is_empty() || spec.noises.is_empty() {
        return Err(Error::config(
            "snr_db",
            "at least one SNR and one noise kind are needed",
        ));
    }
    utterance_seeds(spec.seed, spec.count)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let snr = spec.snrs_db[i % spec.snrs_db.len()];
            let noise = spec.noises[(i / spec.snrs_db.len()) % spec.noises.len()];
            let mut utt = synth_utterance(s, spec.duration_s, snr, noise)?;
            utt.id = format!("utt{i:05}");
            Ok(utt)
        })
        .collect()
}

/// Writes each utterance as `<id>_clean.wav`, `<id>_mix.wav`, `<id>.avsg` and
/// an index of all of them. Returns the written paths, index last.
pub fn write_dataset(dir: &Path, seed: u64, utterances: &[Utterance]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut items = Vec::with_capacity(utterances.len());
    for u in utterances {
        let entry = IndexEntry {
            id: u.id.clone(),
            seed: u.seed,
            snr_db: u.snr_db,
            noise: u.noise_kind,
            clean: format!("{}_clean.wav", u.id),
            mixture: format!("{}_mix.wav", u.id),
            video: format!("{}.avsg", u.id),
        };
        write_wav(&dir.join(&entry.clean), &u.clean)?;
        write_wav(&dir.join(&entry.mixture), &u.mixture)?;
        save_segments(&dir.join(&entry.video), &u.video)?;
        written.extend([&entry.clean, &entry.mixture, &entry.video].map(|p| dir.join(p)));
        items.push(entry);
    }
    let index = dir.join(INDEX_FILE);
    fs::write(&index, serde_json::to_string_pretty(&DatasetIndex { seed, items })?)?;
    written.push(index);
    Ok(written)
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads every indexed utterance back. Noise is recovered as mixture - clean.
pub fn load_dataset(dir: &Path) -> Result<Vec<Utterance>> {
    read_index(dir)?
        .items
        .into_iter()
        .map(|e| {
            let clean = read_wav(&dir.join(&e.clean))?;
            let mixture = read_wav(&dir.join(&e.mixture))?;
            if clean.len() != mixture.len() {
                return Err(Error::Format(format!("{}: clean and mixture lengths differ", e.id)));
            }
            let video = load_segments(&dir.join(&e.video))?;
            Ok(Utterance {
                noise: mixture.iter().zip(&clean).map(|(m, c)| m - c).collect(),
                id: e.id,
                seed: e.seed,
                snr_db: e.snr_db,
                noise_kind: e.noise,
                clean,
                mixture,
                video,
                aperture: Vec::new(),
            })
        })
        .collect()
}

/// Network examples of every utterance, one inner vector per utterance.
pub fn to_examples(utterances: &[Utterance]) -> Result<Vec<Vec<AvExample>>> {
    let fb = MelFilterbank::new();
    utterances
        .iter()
        .map(|u| u.examples(&fb, SpectrumScale::Power))
        .collect()
}
