use super::conv::{self, ConvGeometry};
use super::ops;
use super::{numel, Result, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy {
        x: Var,
        s: Var,
    },
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    TransposeLast(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool {
        x: Var,
    },
    Sum(Var),
    Mean(Var),
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A dynamic tape of executed ops, rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Graph::backward`], indexed by leaf handle.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf holding a copy of `t`; it is differentiated iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.push_leaf("input", t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return super::shape_err("constant", format!("shape {shape:?} vs {} values", data.len()));
        }
        self.push_leaf("constant", shape.to_vec(), data, false)
    }

    fn push_leaf(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len(), "{name}");
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph node shape is consistent")
    }

    /// Reverse sweep from a scalar loss. A graph can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::BackwardReplayed);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss_node.shape.clone(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.node_backward(i, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, g: Vec<f64>| accumulate(&self.nodes, grads, v, g);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                acc(*a, dy.iter().zip(bv).map(|(g, b)| g * b).collect());
                acc(*b, dy.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(x, c) => acc(*x, dy.iter().map(|g| g * c).collect()),
            Op::ScaleBy { x, s } => {
                let xv = &self.nodes[x.0].value;
                let sv = self.nodes[s.0].value[0];
                acc(*x, dy.iter().map(|g| g * sv).collect());
                acc(*s, vec![dy.iter().zip(xv).map(|(g, x)| g * x).sum()]);
            }
            Op::Elu(x) => {
                let xv = &self.nodes[x.0].value;
                let g = dy
                    .iter()
                    .zip(xv.iter().zip(y))
                    .map(|(g, (&x, &y))| if x >= 0.0 { *g } else { g * (y + 1.0) })
                    .collect();
                acc(*x, g);
            }
            Op::Sigmoid(x) => acc(*x, dy.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Tanh(x) => acc(*x, dy.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Softmax { x, axis } => {
                let g = ops::softmax_backward(&node.shape, *axis, y, dy);
                acc(*x, g);
            }
            Op::MatMul { a, b, batch, m, k, n } => {
                let (ga, gb) =
                    ops::matmul_backward(&self.nodes[a.0].value, &self.nodes[b.0].value, dy, *batch, *m, *k, *n);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::TransposeLast(x) => {
                let g = ops::transpose_last(&node.shape, dy);
                acc(*x, g);
            }
            Op::Reshape(x) => acc(*x, dy.to_vec()),
            Op::Permute { x, perm } => {
                let inv = ops::inverse_perm(perm);
                let g = ops::permute_values(&node.shape, dy, &inv);
                acc(*x, g);
            }
            Op::Concat { xs, axis } => {
                let shapes: Vec<&[usize]> = xs.iter().map(|v| self.shape(*v)).collect();
                for (v, g) in xs.iter().zip(ops::split_grad(&node.shape, &shapes, *axis, dy)) {
                    acc(*v, g);
                }
            }
            Op::Narrow { x, axis, start } => {
                let g = ops::narrow_backward(self.shape(*x), &node.shape, *axis, *start, dy);
                acc(*x, g);
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (rows, feat) = (xs[0], xs[1]);
                let out = self.shape(*w)[0];
                let (gx, gw, gb) =
                    ops::linear_backward(&self.nodes[x.0].value, &self.nodes[w.0].value, dy, rows, feat, out);
                acc(*x, gx);
                acc(*w, gw);
                if let Some(b) = b {
                    acc(*b, gb);
                }
            }
            Op::Conv2d { x, w, b, geo } => {
                let wv = &self.nodes[w.0].value;
                if self.nodes[x.0].requires_grad {
                    acc(*x, conv::scatter(dy, wv, geo));
                }
                acc(*w, conv::weight_grad(dy, &self.nodes[x.0].value, geo));
                if let Some(b) = b {
                    acc(*b, conv::bias_grad(dy, geo.cout, geo.out_h * geo.out_w));
                }
            }
            Op::ConvTranspose2d { x, w, b, geo } => {
                // geo describes the forward correlation whose adjoint this op is
                let wv = &self.nodes[w.0].value;
                if self.nodes[x.0].requires_grad {
                    acc(*x, conv::correlate(dy, wv, None, geo));
                }
                acc(*w, conv::weight_grad(&self.nodes[x.0].value, dy, geo));
                if let Some(b) = b {
                    acc(*b, conv::bias_grad(dy, geo.cin, geo.in_h * geo.in_w));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (gx, gg, gb) =
                    ops::batch_norm_backward(&node.shape, &self.nodes[gamma.0].value, xhat, inv_std, dy, *batch_stats);
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut g = vec![0.0; self.nodes[x.0].value.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    g[src] += dy[o];
                }
                acc(*x, g);
            }
            Op::AdaptiveAvgPool { x } => {
                let g = ops::adaptive_avg_pool_backward(self.shape(*x), &node.shape, dy);
                acc(*x, g);
            }
            Op::Sum(x) => acc(*x, vec![dy[0]; self.nodes[x.0].value.len()]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                acc(*x, vec![dy[0] / n as f64; n]);
            }
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::ScaleBy { x, s } => vec![*x, *s],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::Scale(x, _)
        | Op::Elu(x)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::TransposeLast(x)
        | Op::Reshape(x)
        | Op::Sum(x)
        | Op::Mean(x) => vec![*x],
        Op::Softmax { x, .. }
        | Op::Permute { x, .. }
        | Op::Narrow { x, .. }
        | Op::MaxPool2 { x, .. }
        | Op::AdaptiveAvgPool { x } => vec![*x],
        Op::Concat { xs, .. } => xs.clone(),
        Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
    }
}
