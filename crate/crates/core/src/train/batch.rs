use crate::audio::{CHUNK_FRAMES, N_MELS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::visual::{AvExample, SEGMENT_LEN};

const CHUNK_LEN: usize = N_MELS * CHUNK_FRAMES;

/// Utterances padded to a common chunk count, flattened to `[B * L, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub mixture: Tensor,
    pub target: Tensor,
    pub video: Tensor,
    /// 1 where a target value is real, 0 in padded columns and padded chunks.
    pub mask: Tensor,
    /// Per slot: does the chunk come from real data?
    pub present: Vec<bool>,
    pub lengths: Vec<usize>,
}

/// Pads each utterance's chunk sequence with zero chunks up to the longest one.
pub fn make_batch(utterances: &[&[AvExample]]) -> Result<Batch> {
    let longest = utterances.iter().map(|u| u.len()).max().unwrap_or(0);
    if longest == 0 {
        return Err(Error::Format("batch has no chunks".into()));
    }
    let slots = utterances.len() * longest;
    let mut mixture = vec![0.0; slots * CHUNK_LEN];
    let mut target = vec![0.0; slots * CHUNK_LEN];
    let mut video = vec![0.0; slots * SEGMENT_LEN];
    let mut mask = vec![0.0; slots * CHUNK_LEN];
    let mut present = vec![false; slots];
    for (b, utt) in utterances.iter().enumerate() {
        for (i, ex) in utt.iter().enumerate() {
            let s = b * longest + i;
            present[s] = true;
            mixture[s * CHUNK_LEN..][..CHUNK_LEN].copy_from_slice(&ex.mixture.data);
            target[s * CHUNK_LEN..][..CHUNK_LEN].copy_from_slice(&ex.clean.data);
            video[s * SEGMENT_LEN..][..SEGMENT_LEN].copy_from_slice(&ex.video.data);
            let m = &mut mask[s * CHUNK_LEN..][..CHUNK_LEN];
            for row in m.chunks_mut(CHUNK_FRAMES) {
                row[..ex.clean.valid_frames].fill(1.0);
            }
        }
    }
    let chunk_shape = [slots, 1, N_MELS, CHUNK_FRAMES];
    Ok(Batch {
        mixture: Tensor::new(&chunk_shape, mixture)?,
        target: Tensor::new(&chunk_shape, target)?,
        video: Tensor::new(
            &[slots, crate::visual::FRAMES, crate::visual::SIZE, crate::visual::SIZE],
            video,
        )?,
        mask: Tensor::new(&chunk_shape, mask)?,
        present,
        lengths: utterances.iter().map(|u| u.len()).collect(),
    })
}

fn select(t: &Tensor, keep: &[usize]) -> Result<Tensor> {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(keep.len() * per);
    for &k in keep {
        data.extend_from_slice(&t.data()[k * per..][..per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = keep.len();
    Ok(Tensor::new(&shape, data)?)
}

impl Batch {
    pub fn slots(&self) -> usize {
        self.present.len()
    }

    /// The same batch without fully padded chunks, so they never reach the network.
    pub fn compact(&self) -> Result<Batch> {
        let keep: Vec<usize> = (0..self.slots()).filter(|&s| self.present[s]).collect();
        Ok(Batch {
            mixture: select(&self.mixture, &keep)?,
            target: select(&self.target, &keep)?,
            video: select(&self.video, &keep)?,
            mask: select(&self.mask, &keep)?,
            present: vec![true; keep.len()],
            lengths: self.lengths.clone(),
        })
    }
}

/// Mean squared error over positions where `mask` is 1.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var, mask: Var) -> Result<Var> {
    let count: f64 = g.value(mask).iter().sum();
    if count <= 0.0 {
        return Err(Error::Numeric("loss mask selects no elements".into()));
    }
    let diff = g.sub(pred, target)?;
    let masked = g.mul(diff, mask)?;
    let sq = g.mul(masked, diff)?;
    let total = g.sum(sq)?;
    Ok(g.scale(total, 1.0 / count)?)
}
