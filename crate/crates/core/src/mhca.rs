//! Two-stage multi-head cross attention between fused encoder features and
//! decoder features.
//!
//! The balancing stage attends channels of the fused map to themselves; the
//! filtering stage lets decoder channels reweight the balanced map. The result
//! drives a sigmoid gate on the decoder features.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_conv, init_conv_bn, Forward, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhcaOptions {
    pub heads: usize,
    /// Drop the residual terms, leaving the bare attention sums.
    pub strict: bool,
    pub balancing: bool,
    pub filtering: bool,
    /// Square kernel for the K/V/Q conv blocks.
    pub kernel: usize,
    /// Square kernel for the gate deconvolution.
    pub gate_kernel: usize,
}

impl Default for MhcaOptions {
    fn default() -> Self {
        MhcaOptions {
            heads: 1,
            strict: false,
            balancing: true,
            filtering: true,
            kernel: 1,
            gate_kernel: 1,
        }
    }
}

impl MhcaOptions {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.heads == 0 || !channels.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("{channels} channels cannot split into {} heads", self.heads),
            ));
        }
        for (field, k) in [("mhca_kernel", self.kernel), ("gate_kernel", self.gate_kernel)] {
            if k % 2 == 0 {
                return Err(Error::config(field, format!("kernel {k} must be odd")));
            }
        }
        Ok(())
    }
}

/// Registers the block's parameters under `prefix`.
pub fn init_mhca(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    channels: usize,
    opts: &MhcaOptions,
) -> Result<()> {
    opts.validate(channels)?;
    let k = (opts.kernel, opts.kernel);
    if opts.balancing {
        init_conv_bn(store, rng, &format!("{prefix}.key"), channels, channels, k);
        init_conv_bn(store, rng, &format!("{prefix}.value"), channels, channels, k);
        store.insert_param(format!("{prefix}.alpha"), Tensor::full(&[1], 0.0));
    }
    if opts.filtering {
        init_conv_bn(store, rng, &format!("{prefix}.query"), channels, channels, k);
        store.insert_param(format!("{prefix}.beta"), Tensor::full(&[1], 0.0));
    }
    let gk = opts.gate_kernel;
    init_conv(
        store,
        rng,
        &format!("{prefix}.gate"),
        [channels, channels, gk, gk],
        true,
    );
    Ok(())
}

/// Intermediate values of one block evaluation, for inspection in tests.
#[derive(Clone, Debug, Default)]
pub struct MhcaTrace {
    /// Balancing attention maps `[N, C/h, C/h]`, one per head.
    pub x: Vec<Var>,
    /// Filtering attention maps, one per head.
    pub y: Vec<Var>,
    pub v: Option<Var>,
    /// Balanced map `[N, C, H*W]`.
    pub g: Option<Var>,
    /// Filtered map `[N, C, H*W]`.
    pub l: Option<Var>,
    pub gate: Option<Var>,
}

/// `x = softmax_i(<V_j, K_i>)`, `G = alpha * (x V) (+ V)` on flattened `[N, C, P]`.
pub fn balance_core(g: &mut Graph, k: Var, v: Var, alpha: Var, strict: bool) -> Result<(Var, Var)> {
    let kt = g.transpose_last(k)?;
    let scores = g.matmul(v, kt)?;
    let x = g.softmax(scores, 2)?;
    let mixed = g.matmul(x, v)?;
    let mut out = g.scale_by(mixed, alpha)?;
    if !strict {
        out = g.add(out, v)?;
    }
    Ok((out, x))
}

/// `y = softmax_i(<G_j, Q_i>)`, `L = beta * (y G) (+ G)` on flattened `[N, C, P]`.
pub fn filter_core(g: &mut Graph, q: Var, gm: Var, beta: Var, strict: bool) -> Result<(Var, Var)> {
    let qt = g.transpose_last(q)?;
    let scores = g.matmul(gm, qt)?;
    let y = g.softmax(scores, 2)?;
    let mixed = g.matmul(y, gm)?;
    let mut out = g.scale_by(mixed, beta)?;
    if !strict {
        out = g.add(out, gm)?;
    }
    Ok((out, y))
}

fn per_head(
    g: &mut Graph,
    heads: usize,
    a: Var,
    b: Var,
    mut stage: impl FnMut(&mut Graph, Var, Var) -> Result<(Var, Var)>,
) -> Result<(Var, Vec<Var>)> {
    if heads == 1 {
        let (out, map) = stage(g, a, b)?;
        return Ok((out, vec![map]));
    }
    let c = g.shape(a)[1] / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let ah = g.narrow(a, 1, h * c, c)?;
        let bh = g.narrow(b, 1, h * c, c)?;
        let (out, map) = stage(g, ah, bh)?;
        outs.push(out);
        maps.push(map);
    }
    Ok((g.concat(&outs, 1)?, maps))
}

/// Balancing stage over channel groups; `k`, `v` are `[N, C, P]`.
pub fn balance(g: &mut Graph, k: Var, v: Var, alpha: Var, strict: bool, heads: usize) -> Result<(Var, Vec<Var>)> {
    per_head(g, heads, k, v, |g, k, v| balance_core(g, k, v, alpha, strict))
}

/// Filtering stage over channel groups; `q`, `gm` are `[N, C, P]`.
pub fn filter(g: &mut Graph, q: Var, gm: Var, beta: Var, strict: bool, heads: usize) -> Result<(Var, Vec<Var>)> {
    per_head(g, heads, q, gm, |g, q, gm| filter_core(g, q, gm, beta, strict))
}

/// Gated decoder features `sigmoid(deconv(L)) * fd` for `ff`, `fd` of shape `[N, C, H, W]`.
pub fn mhca_forward(f: &mut Forward, prefix: &str, ff: Var, fd: Var, opts: &MhcaOptions) -> Result<(Var, MhcaTrace)> {
    let shape = f.g.shape(fd).to_vec();
    if f.g.shape(ff) != shape.as_slice() {
        return Err(crate::tensor::TensorError::Shape {
            op: "mhca",
            detail: format!("fused {:?} vs decoder {shape:?}", f.g.shape(ff)),
        }
        .into());
    }
    opts.validate(shape[1])?;
    let flat = [shape[0], shape[1], shape[2] * shape[3]];
    let p = opts.kernel / 2;
    let mut trace = MhcaTrace::default();

    let gm = if opts.balancing {
        let k = f.conv_bn_elu(&format!("{prefix}.key"), ff, (1, 1), (p, p))?;
        let v = f.conv_bn_elu(&format!("{prefix}.value"), ff, (1, 1), (p, p))?;
        let k = f.g.reshape(k, &flat)?;
        let v = f.g.reshape(v, &flat)?;
        let alpha = f.param(&format!("{prefix}.alpha"))?;
        let (gm, maps) = balance(&mut f.g, k, v, alpha, opts.strict, opts.heads)?;
        trace.x = maps;
        trace.v = Some(v);
        gm
    } else {
        f.g.reshape(ff, &flat)?
    };
    trace.g = Some(gm);

    let l = if opts.filtering {
        let q = f.conv_bn_elu(&format!("{prefix}.query"), fd, (1, 1), (p, p))?;
        let q = f.g.reshape(q, &flat)?;
        let beta = f.param(&format!("{prefix}.beta"))?;
        let (l, maps) = filter(&mut f.g, q, gm, beta, opts.strict, opts.heads)?;
        trace.y = maps;
        l
    } else {
        gm
    };
    trace.l = Some(l);

    let l = f.g.reshape(l, &shape)?;
    let gp = opts.gate_kernel / 2;
    let logits = f.conv_transpose2d(&format!("{prefix}.gate"), l, (1, 1), (gp, gp))?;
    let gate = f.g.sigmoid(logits)?;
    trace.gate = Some(gate);
    let out = f.g.mul(gate, fd)?;
    Ok((out, trace))
}
