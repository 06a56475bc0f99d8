//! 2-D cross-correlation and its adjoints.
//!
//! Everything is phrased in terms of one forward correlation: `conv2d` runs
//! it, `conv_transpose2d` runs its input-adjoint (`scatter`) with the same
//! kernel layout, which is what makes the two exact adjoints of each other.

use super::graph::{Graph, Op, Var};
use super::{shape_err, Result};

/// Geometry of the forward correlation `[n, cin, in_h, in_w] -> [n, cout, out_h, out_w]`
/// with kernel layout `[cout, cin, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub cout: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

/// Output indices `o` in `[lo, hi)` for which `o * s + k - p` lands inside `[0, len)`.
fn valid_range(out: usize, len: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    if len + p <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + p - k) / s + 1).min(out);
    (lo.min(hi), hi)
}

pub(crate) fn correlate(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![0.0; g.n * g.cout * out_plane];
    for b in 0..g.n {
        for co in 0..g.cout {
            let dst = &mut out[(b * g.cout + co) * out_plane..][..out_plane];
            if let Some(bias) = bias {
                dst.fill(bias[co]);
            }
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * in_plane..][..in_plane];
                for ki in 0..g.kh {
                    let (oh0, oh1) = valid_range(g.out_h, g.in_h, ki, g.sh, g.ph);
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        let (ow0, ow1) = valid_range(g.out_w, g.in_w, kj, g.sw, g.pw);
                        for oh in oh0..oh1 {
                            let ih = oh * g.sh + ki - g.ph;
                            let drow = &mut dst[oh * g.out_w..][..g.out_w];
                            let srow = &src[ih * g.in_w..][..g.in_w];
                            for ow in ow0..ow1 {
                                drow[ow] += wv * srow[ow * g.sw + kj - g.pw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Input-adjoint of [`correlate`]: maps an output-shaped buffer back to input shape.
pub(crate) fn scatter(dy: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut dx = vec![0.0; g.n * g.cin * in_plane];
    for b in 0..g.n {
        for ci in 0..g.cin {
            let dst = &mut dx[(b * g.cin + ci) * in_plane..][..in_plane];
            for co in 0..g.cout {
                let src = &dy[(b * g.cout + co) * out_plane..][..out_plane];
                for ki in 0..g.kh {
                    let (oh0, oh1) = valid_range(g.out_h, g.in_h, ki, g.sh, g.ph);
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        let (ow0, ow1) = valid_range(g.out_w, g.in_w, kj, g.sw, g.pw);
                        for oh in oh0..oh1 {
                            let ih = oh * g.sh + ki - g.ph;
                            let drow = &mut dst[ih * g.in_w..][..g.in_w];
                            let srow = &src[oh * g.out_w..][..g.out_w];
                            for ow in ow0..ow1 {
                                drow[ow * g.sw + kj - g.pw] += wv * srow[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Kernel-adjoint of [`correlate`].
pub(crate) fn weight_grad(dy: &[f64], x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut dw = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for b in 0..g.n {
        for co in 0..g.cout {
            let gy = &dy[(b * g.cout + co) * out_plane..][..out_plane];
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * in_plane..][..in_plane];
                for ki in 0..g.kh {
                    let (oh0, oh1) = valid_range(g.out_h, g.in_h, ki, g.sh, g.ph);
                    for kj in 0..g.kw {
                        let (ow0, ow1) = valid_range(g.out_w, g.in_w, kj, g.sw, g.pw);
                        let mut s = 0.0;
                        for oh in oh0..oh1 {
                            let ih = oh * g.sh + ki - g.ph;
                            let grow = &gy[oh * g.out_w..][..g.out_w];
                            let srow = &src[ih * g.in_w..][..g.in_w];
                            for ow in ow0..ow1 {
                                s += grow[ow] * srow[ow * g.sw + kj - g.pw];
                            }
                        }
                        dw[((co * g.cin + ci) * g.kh + ki) * g.kw + kj] += s;
                    }
                }
            }
        }
    }
    dw
}

pub(crate) fn bias_grad(dy: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    db
}

fn check_kernel(op: &'static str, x: &[usize], w: &[usize], stride: (usize, usize)) -> Result<()> {
    if x.len() != 4 {
        return shape_err(op, format!("input must be [N,C,H,W], got {x:?}"));
    }
    if w.len() != 4 {
        return shape_err(op, format!("kernel must be rank 4, got {w:?}"));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return shape_err(op, format!("stride must be >= 1, got {stride:?}"));
    }
    Ok(())
}

impl Graph {
    /// Cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_kernel("conv2d", &xs, &ws, stride)?;
        if ws[1] != xs[1] {
            return shape_err(
                "conv2d",
                format!("axis 1: input has {} channels, kernel expects {}", xs[1], ws[1]),
            );
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return shape_err(
                    "conv2d",
                    format!("bias {:?} vs {} output channels", self.shape(b), ws[0]),
                );
            }
        }
        let (ph, pw) = padding;
        if xs[2] + 2 * ph < ws[2] || xs[3] + 2 * pw < ws[3] {
            return shape_err(
                "conv2d",
                format!(
                    "kernel {}x{} does not fit padded input {}x{}",
                    ws[2],
                    ws[3],
                    xs[2] + 2 * ph,
                    xs[3] + 2 * pw
                ),
            );
        }
        let geo = ConvGeometry {
            n: xs[0],
            cin: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            cout: ws[0],
            out_h: (xs[2] + 2 * ph - ws[2]) / stride.0 + 1,
            out_w: (xs[3] + 2 * pw - ws[3]) / stride.1 + 1,
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            ph,
            pw,
        };
        let value = correlate(self.value(x), self.value(w), b.map(|b| self.value(b)), &geo);
        self.push(
            "conv2d",
            vec![geo.n, geo.cout, geo.out_h, geo.out_w],
            value,
            Op::Conv2d { x, w, b, geo },
        )
    }

    /// Transposed convolution of `x: [N,Cin,H,W]` with `w: [Cin,Cout,kh,kw]`;
    /// output extent `(H-1)*s - 2p + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_kernel("conv_transpose2d", &xs, &ws, stride)?;
        if ws[0] != xs[1] {
            return shape_err(
                "conv_transpose2d",
                format!("axis 1: input has {} channels, kernel expects {}", xs[1], ws[0]),
            );
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return shape_err(
                    "conv_transpose2d",
                    format!("bias {:?} vs {} output channels", self.shape(b), ws[1]),
                );
            }
        }
        let (ph, pw) = padding;
        let out_h = ((xs[2] - 1) * stride.0 + ws[2]) as isize - 2 * ph as isize;
        let out_w = ((xs[3] - 1) * stride.1 + ws[3]) as isize - 2 * pw as isize;
        if out_h <= 0 || out_w <= 0 {
            return shape_err(
                "conv_transpose2d",
                format!("padding {padding:?} leaves empty output ({out_h}x{out_w})"),
            );
        }
        let geo = ConvGeometry {
            n: xs[0],
            cin: ws[1],
            in_h: out_h as usize,
            in_w: out_w as usize,
            cout: xs[1],
            out_h: xs[2],
            out_w: xs[3],
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            ph,
            pw,
        };
        let mut value = scatter(self.value(x), self.value(w), &geo);
        if let Some(b) = b {
            let bias = self.value(b);
            let plane = geo.in_h * geo.in_w;
            for (i, chunk) in value.chunks_mut(plane).enumerate() {
                let c = bias[i % geo.cin];
                chunk.iter_mut().for_each(|v| *v += c);
            }
        }
        self.push(
            "conv_transpose2d",
            vec![geo.n, geo.cin, geo.in_h, geo.in_w],
            value,
            Op::ConvTranspose2d { x, w, b, geo },
        )
    }
}
