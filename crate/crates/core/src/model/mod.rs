//! Audio-visual convolutional recurrent network.
//!
//! Audio and video run through parallel encoders that are fused at every
//! layer. The deepest audio and fused maps meet in a two-layer LSTM, and a
//! transposed-conv decoder mirrors the audio encoder, with one attention gate
//! per decoder layer reading the fused map of the matching encoder layer.

mod checkpoint;

pub use checkpoint::Checkpoint;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mhca::{init_mhca, mhca_forward, MhcaOptions, MhcaTrace};
use crate::nn::{init_bn, init_conv, init_conv_bn, init_linear, init_lstm, Forward, ParamStore};
use crate::tensor::{Tensor, Var};

/// Decoder kernel: 4 rows so a stride-2 step exactly doubles the frequency axis.
pub const DECODER_KERNEL: (usize, usize) = (4, 3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub audio_channels: Vec<usize>,
    pub video_channels: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub mel_bins: usize,
    pub chunk_frames: usize,
    pub video_frames: usize,
    pub video_size: usize,
    pub heads: usize,
    pub strict_paper_mode: bool,
    pub mhca_kernel: usize,
    pub gate_kernel: usize,
    pub disable_mhca: bool,
    pub disable_balancing: bool,
    pub disable_filtering: bool,
    pub disable_video: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            audio_channels: vec![8, 16, 32, 64],
            video_channels: vec![8, 16, 32, 64],
            lstm_hidden: 64,
            lstm_layers: 2,
            mel_bins: 80,
            chunk_frames: 20,
            video_frames: 5,
            video_size: 80,
            heads: 1,
            strict_paper_mode: false,
            mhca_kernel: 1,
            gate_kernel: 1,
            disable_mhca: false,
            disable_balancing: false,
            disable_filtering: false,
            disable_video: false,
        }
    }
}

/// The four systems compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoFiltering,
    NoBalancing,
    NoMhca,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoFiltering,
        Variant::NoBalancing,
        Variant::NoMhca,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFiltering => "wo_filtering",
            Variant::NoBalancing => "wo_balancing",
            Variant::NoMhca => "wo_mhca",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl ModelConfig {
    /// Two layers with 2 and 4 channels and an 8-unit LSTM.
    pub fn tiny() -> Self {
        ModelConfig {
            num_layers: 2,
            audio_channels: vec![2, 4],
            video_channels: vec![2, 4],
            lstm_hidden: 8,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.disable_mhca = variant == Variant::NoMhca;
        self.disable_balancing = variant == Variant::NoBalancing;
        self.disable_filtering = variant == Variant::NoFiltering;
        self
    }

    /// Report label: the ablation variant, with `_ao` for audio-only models.
    pub fn label(&self) -> String {
        let base = match (self.disable_mhca, self.disable_balancing, self.disable_filtering) {
            (true, _, _) => Variant::NoMhca.label(),
            (false, false, false) => Variant::Full.label(),
            (false, true, false) => Variant::NoBalancing.label(),
            (false, false, true) => Variant::NoFiltering.label(),
            (false, true, true) => "gate_only",
        };
        if self.disable_video {
            format!("{base}_ao")
        } else {
            base.to_string()
        }
    }

    pub fn mhca_options(&self) -> MhcaOptions {
        MhcaOptions {
            heads: self.heads,
            strict: self.strict_paper_mode,
            balancing: !self.disable_balancing,
            filtering: !self.disable_filtering,
            kernel: self.mhca_kernel,
            gate_kernel: self.gate_kernel,
        }
    }

    /// Frequency extent after encoder layer `l`.
    pub fn audio_height(&self, l: usize) -> usize {
        (0..=l).fold(self.mel_bins, |h, _| h.div_ceil(2))
    }

    /// Square video extent after encoder layer `l`.
    pub fn video_extent(&self, l: usize) -> usize {
        self.video_size >> (l + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("mel_bins", self.mel_bins),
            ("chunk_frames", self.chunk_frames),
            ("video_frames", self.video_frames),
            ("video_size", self.video_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, list) in [
            ("audio_channels", &self.audio_channels),
            ("video_channels", &self.video_channels),
        ] {
            if list.len() != self.num_layers {
                return Err(Error::config(
                    field,
                    format!("has {} entries, num_layers is {}", list.len(), self.num_layers),
                ));
            }
            if list.contains(&0) {
                return Err(Error::config(field, "channel counts must be positive"));
            }
        }
        if !self.mel_bins.is_multiple_of(1 << self.num_layers) {
            return Err(Error::config(
                "num_layers",
                format!(
                    "{} mel bins do not halve evenly {} times, so the decoder cannot mirror the encoder",
                    self.mel_bins, self.num_layers
                ),
            ));
        }
        if !self.disable_video {
            for l in 0..self.num_layers {
                if self.video_extent(l) == 0 {
                    return Err(Error::config(
                        "num_layers",
                        format!(
                            "video extent {} pools to nothing at layer {l}; cannot reduce to the audio grid",
                            self.video_size
                        ),
                    ));
                }
            }
        }
        if !self.disable_mhca {
            let opts = self.mhca_options();
            for &c in &self.audio_channels {
                opts.validate(c)?;
            }
        }
        Ok(())
    }
}

/// Intermediate maps from one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ModelTrace {
    pub fused: Vec<Var>,
    /// Attention traces indexed by decoder layer (same index as the encoder layer).
    pub mhca: Vec<Option<MhcaTrace>>,
    pub bottleneck: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Avcrn {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl Avcrn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (mut a_in, mut v_in) = (1, c.video_frames);
        for l in 0..c.num_layers {
            let (ac, vc) = (c.audio_channels[l], c.video_channels[l]);
            init_conv_bn(&mut store, &mut rng, &format!("enc{l}.audio"), a_in, ac, (3, 3));
            if !c.disable_video {
                init_conv_bn(&mut store, &mut rng, &format!("enc{l}.video"), v_in, vc, (3, 3));
            }
            init_conv_bn(&mut store, &mut rng, &format!("enc{l}.fuse"), ac + vc, ac, (1, 1));
            a_in = ac;
            v_in = vc;
        }
        let last = c.num_layers - 1;
        let feat = c.audio_channels[last] * c.audio_height(last);
        let mut input = 2 * feat;
        for k in 0..c.lstm_layers {
            init_lstm(
                &mut store,
                &mut rng,
                &format!("bottleneck.lstm{k}"),
                input,
                c.lstm_hidden,
            );
            input = c.lstm_hidden;
        }
        init_linear(&mut store, &mut rng, "bottleneck.proj", c.lstm_hidden, feat);
        let opts = c.mhca_options();
        for l in (0..c.num_layers).rev() {
            let ch = c.audio_channels[l];
            if !c.disable_mhca {
                init_mhca(&mut store, &mut rng, &format!("dec{l}.mhca"), ch, &opts)?;
            }
            let out = if l == 0 { 1 } else { c.audio_channels[l - 1] };
            let (kh, kw) = DECODER_KERNEL;
            init_conv(&mut store, &mut rng, &format!("dec{l}.deconv"), [ch, out, kh, kw], true);
            if l > 0 {
                init_bn(&mut store, &format!("dec{l}.bn"), out);
            }
        }
        store.insert_buffer("io.mean", Tensor::zeros(&[1]));
        store.insert_buffer("io.std", Tensor::full(&[1], 1.0));
        Ok(Avcrn { config, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Fixes the affine map applied to inputs (and inverted on outputs).
    pub fn set_normalization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
            return Err(Error::config("normalization", format!("mean {mean}, std {std}")));
        }
        self.store.buffer_mut("io.mean")?.data_mut()[0] = mean;
        self.store.buffer_mut("io.std")?.data_mut()[0] = std;
        Ok(())
    }

    pub fn normalization(&self) -> (f64, f64) {
        let get = |n| self.store.buffer(n).map(|t| t.data()[0]);
        (get("io.mean").unwrap_or(0.0), get("io.std").unwrap_or(1.0))
    }

    pub fn check_inputs(&self, audio: &[usize], video: &[usize]) -> Result<()> {
        let c = &self.config;
        if audio.len() != 4 || audio[1] != 1 || audio[2] != c.mel_bins || audio[3] == 0 {
            return Err(Error::Format(format!(
                "audio batch must be [N, 1, {}, T], got {audio:?}",
                c.mel_bins
            )));
        }
        let expect = [audio[0], c.video_frames, c.video_size, c.video_size];
        if video != expect {
            return Err(Error::Format(format!("video batch must be {expect:?}, got {video:?}")));
        }
        Ok(())
    }

    /// Records the full network on `f`, reading parameters from `f`'s store.
    pub fn forward(&self, f: &mut Forward, audio: Var, video: Var) -> Result<(Var, ModelTrace)> {
        let c = &self.config;
        let a_shape = f.g.shape(audio).to_vec();
        self.check_inputs(&a_shape, f.g.shape(video))?;
        let n = a_shape[0];
        let mean = f.store().buffer("io.mean")?.data()[0];
        let std = f.store().buffer("io.std")?.data()[0];

        let shift = f.g.constant(&a_shape, vec![-mean / std; a_shape.iter().product()])?;
        let scaled = f.g.scale(audio, 1.0 / std)?;
        let mut a = f.g.add(scaled, shift)?;
        let mut v = video;
        let mut trace = ModelTrace::default();

        for l in 0..c.num_layers {
            a = f.conv_bn_elu(&format!("enc{l}.audio"), a, (2, 1), (1, 1))?;
            let (h, t) = (f.g.shape(a)[2], f.g.shape(a)[3]);
            let vc = c.video_channels[l];
            let va = if c.disable_video {
                f.g.constant(&[n, vc, h, t], vec![0.0; n * vc * h * t])?
            } else {
                v = f.conv_bn_elu(&format!("enc{l}.video"), v, (1, 1), (1, 1))?;
                v = f.g.max_pool2(v)?;
                f.g.adaptive_avg_pool2d(v, (h, t))?
            };
            let cat = f.g.concat(&[a, va], 1)?;
            let fused = f.conv_bn_elu(&format!("enc{l}.fuse"), cat, (1, 1), (0, 0))?;
            trace.fused.push(fused);
        }

        let last = *trace.fused.last().expect("at least one layer");
        let (ch, h, t) = (f.g.shape(a)[1], f.g.shape(a)[2], f.g.shape(a)[3]);
        let seq = |f: &mut Forward, x: Var| -> Result<Var> {
            let p = f.g.permute(x, &[3, 0, 1, 2])?;
            Ok(f.g.reshape(p, &[t, n, ch * h])?)
        };
        let sa = seq(f, a)?;
        let sf = seq(f, last)?;
        let mut s = f.g.concat(&[sa, sf], 2)?;
        for k in 0..c.lstm_layers {
            s = f.lstm(&format!("bottleneck.lstm{k}"), s)?;
        }
        let s = f.g.reshape(s, &[t * n, c.lstm_hidden])?;
        let s = f.linear("bottleneck.proj", s)?;
        let s = f.g.reshape(s, &[t, n, ch, h])?;
        let mut d = f.g.permute(s, &[1, 2, 3, 0])?;
        trace.bottleneck = Some(d);

        trace.mhca = vec![None; c.num_layers];
        let opts = c.mhca_options();
        for l in (0..c.num_layers).rev() {
            if !c.disable_mhca {
                let (out, mt) = mhca_forward(f, &format!("dec{l}.mhca"), trace.fused[l], d, &opts)?;
                d = out;
                trace.mhca[l] = Some(mt);
            }
            d = f.conv_transpose2d(&format!("dec{l}.deconv"), d, (2, 1), (1, 1))?;
            if l > 0 {
                d = f.batch_norm(&format!("dec{l}.bn"), d)?;
                d = f.g.elu(d)?;
            }
        }

        let d = f.g.scale(d, std)?;
        let ds = f.g.shape(d).to_vec();
        let offset = f.g.constant(&ds, vec![mean; ds.iter().product()])?;
        let out = f.g.add(d, offset)?;
        Ok((out, trace))
    }

    /// Eval-mode prediction for `audio: [N,1,mel,T]`, `video: [N,frames,S,S]`.
    pub fn predict(&self, audio: &Tensor, video: &Tensor) -> Result<Tensor> {
        let mut f = Forward::new(&self.store, false);
        let a = f.input(audio)?;
        let v = f.input(video)?;
        let (out, _) = self.forward(&mut f, a, v)?;
        Ok(f.g.tensor(out))
    }
}
