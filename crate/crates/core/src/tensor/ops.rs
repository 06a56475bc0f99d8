use super::graph::{Graph, Op, Var};
use super::{numel, shape_err, Result, TensorError};

/// Per-channel batch statistics from a train-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn window(i: usize, inp: usize, out: usize) -> (usize, usize) {
    let start = i * inp / out;
    let end = ((i + 1) * inp).div_ceil(out);
    (start, end)
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", shape, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push("sub", shape, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", shape, v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).iter().map(|v| v * c).collect();
        self.push("scale", self.shape(x).to_vec(), v, Op::Scale(x, c))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return shape_err(
                "scale_by",
                format!("scale must hold one value, got {:?}", self.shape(s)),
            );
        }
        let c = self.value(s)[0];
        let v = self.value(x).iter().map(|v| v * c).collect();
        self.push("scale_by", self.shape(x).to_vec(), v, Op::ScaleBy { x, s })
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let v = self
            .value(x)
            .iter()
            .map(|&v| if v >= 0.0 { v } else { v.exp_m1() })
            .collect();
        self.push("elu", self.shape(x).to_vec(), v, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push("sigmoid", self.shape(x).to_vec(), v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push("tanh", self.shape(x).to_vec(), v, Op::Tanh(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("softmax", format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xv[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (xv[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, axis })
    }

    /// Matrix product over the last two axes; rank 2 or rank 3 with equal batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if k == k2 && ba == bb => (*ba, *m, *k, *n),
            _ => return shape_err("matmul", format!("inner dimensions disagree: {sa:?} x {sb:?}")),
        };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let am = &av[bi * m * k..][..m * k];
            let bm = &bv[bi * k * n..][..k * n];
            let om = &mut out[bi * m * n..][..m * n];
            matmul_into(am, bm, om, m, k, n);
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        self.push("matmul", shape, out, Op::MatMul { a, b, batch, m, k, n })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("transpose_last", format!("need rank >= 2, got {shape:?}"));
        }
        let v = transpose_last(&shape, self.value(x));
        let mut out_shape = shape.clone();
        let r = shape.len();
        out_shape.swap(r - 1, r - 2);
        self.push("transpose_last", out_shape, v, Op::TransposeLast(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape(x)),
            );
        }
        let v = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), v, Op::Reshape(x))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return shape_err(
                "permute",
                format!("{perm:?} is not a permutation of {} axes", shape.len()),
            );
        }
        let v = permute_values(&shape, self.value(x), perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        self.push("permute", out_shape, v, Op::Permute { x, perm: perm.to_vec() })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::Invalid("concat: no inputs".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} vs {base:?} off axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x)[o * len..][..len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { xs: xs.to_vec(), axis })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            );
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push("narrow", out_shape, out, Op::Narrow { x, axis, start })
    }

    /// `x: [rows, feat]`, `w: [out, feat]`, `b: [out]` -> `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err("linear", format!("inner dimensions disagree: {xs:?} x {ws:?}^T"));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return shape_err("linear", format!("bias {:?} vs {} outputs", self.shape(b), ws[0]));
            }
        }
        let (rows, feat, out) = (xs[0], xs[1], ws[0]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let xr = &xv[r * feat..][..feat];
            for o in 0..out {
                let wr = &wv[o * feat..][..feat];
                y[r * out + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_mut(out) {
                row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
            }
        }
        self.push("linear", vec![rows, out], y, Op::Linear { x, w, b })
    }

    /// Train-mode batch normalization over `N, H, W` per channel of `x: [N,C,H,W]`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchMoments)> {
        let shape = self.bn_check(x, gamma, beta)?;
        let (c, plane) = (shape[1], shape[2] * shape[3]);
        let count = shape[0] * plane;
        if count < 2 {
            return Err(TensorError::DegenerateBatch { elements: count });
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (i, chunk) in xv.chunks(plane).enumerate() {
            mean[i % c] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for (i, chunk) in xv.chunks(plane).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        // An overflowed variance would silently normalize everything to zero.
        if !var.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "batch_norm" });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std, c, plane);
        let var_out = self.push(
            "batch_norm",
            shape,
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        )?;
        Ok((var_out, BatchMoments { mean, var, count }))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let shape = self.bn_check(x, gamma, beta)?;
        let (c, plane) = (shape[1], shape[2] * shape[3]);
        if mean.len() != c || var.len() != c {
            return shape_err(
                "batch_norm",
                format!("running stats for {} channels, input has {c}", mean.len()),
            );
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, mean, &inv_std, c, plane);
        self.push(
            "batch_norm",
            shape,
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        )
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<Vec<usize>> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return shape_err("batch_norm", format!("input must be [N,C,H,W], got {shape:?}"));
        }
        if self.shape(gamma) != [shape[1]] || self.shape(beta) != [shape[1]] {
            return shape_err(
                "batch_norm",
                format!(
                    "affine params {:?}/{:?} vs {} channels",
                    self.shape(gamma),
                    self.shape(beta),
                    shape[1]
                ),
            );
        }
        Ok(shape)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        c: usize,
        plane: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for (i, (src, (h, o))) in xv
            .chunks(plane)
            .zip(xhat.chunks_mut(plane).zip(y.chunks_mut(plane)))
            .enumerate()
        {
            let ch = i % c;
            for k in 0..plane {
                h[k] = (src[k] - mean[ch]) * inv_std[ch];
                o[k] = h[k] * g[ch] + b[ch];
            }
        }
        (y, xhat)
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return shape_err("max_pool2", format!("need [N,C,H>=2,W>=2], got {s:?}"));
        }
        let (oh, ow) = (s[2] / 2, s[3] / 2);
        let xv = self.value(x);
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * s[2] * s[3];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * s[3] + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * s[3] + 2 * j + dj;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.push("max_pool2", vec![s[0], s[1], oh, ow], out, Op::MaxPool2 { x, argmax })
    }

    /// Averages `[floor(i*H/oh), ceil((i+1)*H/oh))` windows; upsamples by
    /// replication when the target is larger than the input.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || out_hw.0 == 0 || out_hw.1 == 0 {
            return shape_err("adaptive_avg_pool2d", format!("{s:?} -> {out_hw:?}"));
        }
        let (oh, ow) = out_hw;
        let xv = self.value(x);
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let plane = &xv[p * s[2] * s[3]..][..s[2] * s[3]];
            for i in 0..oh {
                let (r0, r1) = window(i, s[2], oh);
                for j in 0..ow {
                    let (c0, c1) = window(j, s[3], ow);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        acc += plane[r * s[3] + c0..r * s[3] + c1].iter().sum::<f64>();
                    }
                    out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        self.push(
            "adaptive_avg_pool2d",
            vec![s[0], s[1], oh, ow],
            out,
            Op::AdaptiveAvgPool { x },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", vec![], vec![m], Op::Mean(x))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..][..n];
            orow.iter_mut().zip(brow).for_each(|(o, b)| *o += av * b);
        }
    }
}

pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dy: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for bi in 0..batch {
        let am = &a[bi * m * k..][..m * k];
        let bm = &b[bi * k * n..][..k * n];
        let g = &dy[bi * m * n..][..m * n];
        let gam = &mut ga[bi * m * k..][..m * k];
        // dA = dY B^T
        for i in 0..m {
            for p in 0..k {
                gam[i * k + p] = (0..n).map(|j| g[i * n + j] * bm[p * n + j]).sum();
            }
        }
        // dB = A^T dY
        let gbm = &mut gb[bi * k * n..][..k * n];
        for i in 0..m {
            for p in 0..k {
                let av = am[i * k + p];
                let grow = &g[i * n..][..n];
                gbm[p * n..][..n].iter_mut().zip(grow).for_each(|(o, g)| *o += av * g);
            }
        }
    }
    (ga, gb)
}

pub(crate) fn transpose_last(shape: &[usize], v: &[f64]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.chunks(rows * cols).zip(out.chunks_mut(rows * cols)) {
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn permute_values(shape: &[usize], v: &[f64], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(v.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..v.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(v[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn softmax_backward(shape: &[usize], axis: usize, y: &[f64], dy: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut g = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: f64 = (0..len).map(|k| dy[idx(k)] * y[idx(k)]).sum();
            for k in 0..len {
                g[idx(k)] = y[idx(k)] * (dy[idx(k)] - dot);
            }
        }
    }
    g
}

pub(crate) fn split_grad(out_shape: &[usize], shapes: &[&[usize]], axis: usize, dy: &[f64]) -> Vec<Vec<f64>> {
    let (outer, _, inner) = axis_split(out_shape, axis);
    let mut parts: Vec<Vec<f64>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (part, s) in parts.iter_mut().zip(shapes) {
            let len = s[axis] * inner;
            part.extend_from_slice(&dy[pos..pos + len]);
            pos += len;
        }
    }
    parts
}

pub(crate) fn narrow_backward(
    in_shape: &[usize],
    out_shape: &[usize],
    axis: usize,
    start: usize,
    dy: &[f64],
) -> Vec<f64> {
    let (outer, full, inner) = axis_split(in_shape, axis);
    let len = out_shape[axis];
    let mut g = vec![0.0; numel(in_shape)];
    for o in 0..outer {
        g[(o * full + start) * inner..][..len * inner].copy_from_slice(&dy[o * len * inner..][..len * inner]);
    }
    g
}

pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    feat: usize,
    out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; rows * feat];
    let mut gw = vec![0.0; out * feat];
    let mut gb = vec![0.0; out];
    for r in 0..rows {
        let xr = &x[r * feat..][..feat];
        let gxr = &mut gx[r * feat..][..feat];
        for o in 0..out {
            let g = dy[r * out + o];
            gb[o] += g;
            let wr = &w[o * feat..][..feat];
            gxr.iter_mut().zip(wr).for_each(|(a, w)| *a += g * w);
            gw[o * feat..][..feat].iter_mut().zip(xr).for_each(|(a, x)| *a += g * x);
        }
    }
    (gx, gw, gb)
}

pub(crate) fn batch_norm_backward(
    shape: &[usize],
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    dy: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let count = (shape[0] * plane) as f64;
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for (i, (g, h)) in dy.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
        gb[i % c] += g.iter().sum::<f64>();
        gg[i % c] += g.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
    let mut gx = vec![0.0; dy.len()];
    for (i, ((dst, g), h)) in gx
        .chunks_mut(plane)
        .zip(dy.chunks(plane))
        .zip(xhat.chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        let k = gamma[ch] * inv_std[ch];
        if batch_stats {
            for p in 0..plane {
                dst[p] = k * (g[p] - gb[ch] / count - h[p] * gg[ch] / count);
            }
        } else {
            for p in 0..plane {
                dst[p] = k * g[p];
            }
        }
    }
    (gx, gg, gb)
}

pub(crate) fn adaptive_avg_pool_backward(in_shape: &[usize], out_shape: &[usize], dy: &[f64]) -> Vec<f64> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let planes = in_shape[0] * in_shape[1];
    let mut g = vec![0.0; planes * h * w];
    for p in 0..planes {
        let dst = &mut g[p * h * w..][..h * w];
        let src = &dy[p * oh * ow..][..oh * ow];
        for i in 0..oh {
            let (r0, r1) = window(i, h, oh);
            for j in 0..ow {
                let (c0, c1) = window(j, w, ow);
                let share = src[i * ow + j] / ((r1 - r0) * (c1 - c0)) as f64;
                for r in r0..r1 {
                    dst[r * w + c0..r * w + c1].iter_mut().for_each(|v| *v += share);
                }
            }
        }
    }
    g
}
