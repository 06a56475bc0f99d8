//! Named parameter storage and the per-pass binding of parameters to a graph.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::lstm::{lstm_sequence, LstmWeights};
use crate::tensor::{BatchMoments, Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Learnable tensors plus non-learnable buffers (batch-norm running stats,
/// normalization constants), both keyed by dotted names in sorted order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t.with_grad());
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}")))
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Folds batch statistics into the running buffers by exponential moving
    /// average, storing the unbiased variance.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchMoments)]) -> Result<()> {
        for (prefix, m) in updates {
            let unbias = m.count as f64 / (m.count as f64 - 1.0);
            let mean = self.buffer_mut(&format!("{prefix}.running_mean"))?;
            for (r, v) in mean.data_mut().iter_mut().zip(&m.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
            let var = self.buffer_mut(&format!("{prefix}.running_var"))?;
            for (r, v) in var.data_mut().iter_mut().zip(&m.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
        Ok(())
    }
}

/// Uniform `(-bound, bound)` initializer.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Registers a conv kernel and bias with fan-in scaled init. Plain kernels are
/// `[cout, cin, kh, kw]`; transposed kernels are `[cin, cout, kh, kw]`.
pub fn init_conv(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, shape: [usize; 4], transposed: bool) {
    let (out, fan_in) = if transposed {
        (shape[1], shape[1] * shape[2] * shape[3])
    } else {
        (shape[0], shape[1] * shape[2] * shape[3])
    };
    let bound = 1.0 / (fan_in as f64).sqrt();
    store.insert_param(format!("{prefix}.weight"), uniform(rng, &shape, bound));
    store.insert_param(format!("{prefix}.bias"), uniform(rng, &[out], bound));
}

pub fn init_bn(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert_param(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0));
    store.insert_param(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
    store.insert_buffer(format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0));
}

/// Conv -> batch norm -> ELU block parameters.
pub fn init_conv_bn(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: (usize, usize),
) {
    init_conv(store, rng, &format!("{prefix}.conv"), [cout, cin, k.0, k.1], false);
    init_bn(store, &format!("{prefix}.bn"), cout);
}

pub fn init_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, output: usize) {
    let bound = 1.0 / (input as f64).sqrt();
    store.insert_param(format!("{prefix}.weight"), uniform(rng, &[output, input], bound));
    store.insert_param(format!("{prefix}.bias"), uniform(rng, &[output], bound));
}

pub fn init_lstm(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert_param(format!("{prefix}.w_ih"), uniform(rng, &[4 * hidden, input], bound));
    store.insert_param(format!("{prefix}.w_hh"), uniform(rng, &[4 * hidden, hidden], bound));
    store.insert_param(format!("{prefix}.bias"), uniform(rng, &[4 * hidden], bound));
}

/// Gradients for every parameter touched by a pass, keyed by name.
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

/// One forward pass: a fresh graph with parameters bound on first use.
pub struct Forward<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    train: bool,
    bn_updates: Vec<(String, BatchMoments)>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Forward {
            g: Graph::new(),
            store,
            bound: HashMap::new(),
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = self.g.input(self.store.param(name)?)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        Ok(self.g.input(t)?)
    }

    pub fn bn_updates(&self) -> &[(String, BatchMoments)] {
        &self.bn_updates
    }

    pub fn conv2d(&mut self, prefix: &str, x: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(self.g.conv2d(x, w, Some(b), stride, pad)?)
    }

    pub fn conv_transpose2d(
        &mut self,
        prefix: &str,
        x: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(self.g.conv_transpose2d(x, w, Some(b), stride, pad)?)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        if self.train {
            let (y, moments) = self.g.batch_norm_train(x, gamma, beta, BN_EPS)?;
            self.bn_updates.push((prefix.to_string(), moments));
            Ok(y)
        } else {
            let mean = self.store.buffer(&format!("{prefix}.running_mean"))?;
            let var = self.store.buffer(&format!("{prefix}.running_var"))?;
            Ok(self
                .g
                .batch_norm_eval(x, gamma, beta, mean.data(), var.data(), BN_EPS)?)
        }
    }

    /// Conv -> batch norm -> ELU with "same" padding at stride 1 for odd kernels.
    pub fn conv_bn_elu(&mut self, prefix: &str, x: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let y = self.conv2d(&format!("{prefix}.conv"), x, stride, pad)?;
        let y = self.batch_norm(&format!("{prefix}.bn"), y)?;
        Ok(self.g.elu(y)?)
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        Ok(self.g.linear(x, w, Some(b))?)
    }

    pub fn lstm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let weights = LstmWeights {
            w_ih: self.param(&format!("{prefix}.w_ih"))?,
            w_hh: self.param(&format!("{prefix}.w_hh"))?,
            bias: self.param(&format!("{prefix}.bias"))?,
        };
        Ok(lstm_sequence(&mut self.g, x, &weights)?)
    }

    /// Runs backward from `loss` and returns gradients of all bound parameters.
    /// Batch statistics gathered during the pass are returned alongside so the
    /// caller can fold them into the running buffers.
    pub fn backward(mut self, loss: Var) -> Result<(ParamGrads, Vec<(String, BatchMoments)>)> {
        let grads = self.g.backward(loss)?;
        let mut out = ParamGrads::new();
        for (name, var) in &self.bound {
            let g = match grads.get(*var) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.store.param(name)?.numel()],
            };
            out.insert(name.clone(), g);
        }
        Ok((out, std::mem::take(&mut self.bn_updates)))
    }
}
