#![allow(dead_code)]

pub mod oracles;

use avcrn::model::Avcrn;
use avcrn::tensor::Tensor;
use avcrn::train::{make_batch, Batch};
use avcrn::visual::{synth_av_pair, AvExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two one-chunk utterances whose audio is iid noise and whose video repeats
/// with period 2, so finite differences stay clear of max-pool ties.
pub fn grad_check_batch() -> Batch {
    let utts: Vec<Vec<AvExample>> = (0..2).map(|s| synth_av_pair(40 + s, 0.2, 0.0).unwrap()).collect();
    let refs: Vec<&[AvExample]> = utts.iter().map(Vec::as_slice).collect();
    let mut batch = make_batch(&refs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = batch.mixture.shape().to_vec();
    batch.mixture = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    batch.target = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    batch.mask = Tensor::full(&shape, 1.0);
    batch.video = Tensor::from_fn(&[2, 5, 80, 80], |i| {
        let (c, r, f, s) = (i % 80, (i / 80) % 80, (i / 6400) % 5, i / 32000);
        let phase = (f + s) % 4;
        if (r % 2) * 2 + c % 2 == phase {
            0.9 - 0.2 * s as f64
        } else {
            0.1 + 0.05 * f as f64
        }
    });
    batch
}

/// Sets both attention weights of every block to `value`.
pub fn set_attention_weights(model: &mut Avcrn, value: f64) {
    for (name, t) in model.store.params_mut() {
        if name.ends_with("alpha") || name.ends_with("mhca.beta") {
            t.data_mut().fill(value);
        }
    }
}

/// Synthetic utterances of `durations` seconds, SNR cycling over `snrs`.
pub fn utterances(seed: u64, durations: &[f64], snrs: &[f64]) -> Vec<Vec<AvExample>> {
    durations
        .iter()
        .enumerate()
        .map(|(i, &d)| synth_av_pair(seed + i as u64, d, snrs[i % snrs.len()]).unwrap())
        .collect()
}
