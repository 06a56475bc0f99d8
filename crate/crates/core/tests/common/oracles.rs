#![allow(dead_code)]

use std::f64::consts::PI;

use avcrn::tensor::Tensor;

/// Nested-loop cross-correlation on row-major buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, _, kh, kw] = ws;
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for bn in 0..n {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = (i * stride.0 + u) as isize - pad.0 as isize;
                                let c = (j * stride.1 + v) as isize - pad.1 as isize;
                                if r < 0 || c < 0 || r >= h as isize || c >= wd as isize {
                                    continue;
                                }
                                let xi = ((bn * cin + ci) * h + r as usize) * wd + c as usize;
                                let wi = ((co * cin + ci) * kh + u) * kw + v;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((bn * cout + co) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, [n, cout, oh, ow])
}

/// Triple-loop (batched) matrix product on row-major buffers.
pub fn matmul_oracle(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut want = Vec::new();
    for p in 0..batch.max(1) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a[(p * m + i) * k + t] * b[(p * k + t) * n + j];
                }
                want.push(acc);
            }
        }
    }
    want
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Scalar-loop LSTM over `[T, N, F]` with `[i, f, g, o]` gate rows.
pub fn lstm_oracle(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (steps, n, feat) = (s[0], s[1], s[2]);
    let hd = w_ih.shape()[0] / 4;
    let mut h = vec![0.0; n * hd];
    let mut c = vec![0.0; n * hd];
    let mut out = Vec::new();
    for t in 0..steps {
        let mut next_h = vec![0.0; n * hd];
        for b in 0..n {
            let pre = |row: usize| {
                let mut acc = bias.data()[row];
                for k in 0..feat {
                    acc += w_ih.data()[row * feat + k] * x.data()[(t * n + b) * feat + k];
                }
                for k in 0..hd {
                    acc += w_hh.data()[row * hd + k] * h[b * hd + k];
                }
                acc
            };
            for u in 0..hd {
                let i = sigmoid(pre(u));
                let f = sigmoid(pre(hd + u));
                let gc = pre(2 * hd + u).tanh();
                let o = sigmoid(pre(3 * hd + u));
                c[b * hd + u] = f * c[b * hd + u] + i * gc;
                next_h[b * hd + u] = o * c[b * hd + u].tanh();
            }
        }
        h = next_h;
        out.extend_from_slice(&h);
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out_j = s * sum_i softmax_i(<a_j, b_i>) a_i (+ a_j)` for one `[C, P]` sample.
pub fn attention_oracle(b: &[f64], a: &[f64], c: usize, s: f64, strict: bool) -> (Vec<f64>, Vec<f64>) {
    let p = a.len() / c;
    let mut map = vec![0.0; c * c];
    let mut out = vec![0.0; c * p];
    for j in 0..c {
        let scores: Vec<f64> = (0..c).map(|i| dot(&a[j * p..][..p], &b[i * p..][..p])).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|v| (v - top).exp()).sum();
        for i in 0..c {
            map[j * c + i] = (scores[i] - top).exp() / z;
        }
        for t in 0..p {
            let mixed: f64 = (0..c).map(|i| map[j * c + i] * a[i * p + t]).sum();
            out[j * p + t] = s * mixed + if strict { 0.0 } else { a[j * p + t] };
        }
    }
    (map, out)
}

fn resample(x: &[f64]) -> Vec<f64> {
    let fc = 4750.0 / 16000.0;
    let half = 96.0;
    let n_out = (x.len() * 5).div_ceil(8);
    let mut y = vec![0.0; n_out];
    for (n, yn) in y.iter_mut().enumerate() {
        let t = n as f64 * 1.6;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(x.len() - 1);
        for (k, xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let tau = t - k as f64;
            let sinc = if tau == 0.0 {
                1.0
            } else {
                (2.0 * PI * fc * tau).sin() / (2.0 * PI * fc * tau)
            };
            let r = tau / half;
            let blackman = 0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos();
            *yn += xk * 2.0 * fc * sinc * blackman;
        }
    }
    y
}

fn window() -> Vec<f64> {
    let mut w = vec![0.0; 256];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = 0.5 * (1.0 - (2.0 * PI * (i + 1) as f64 / 257.0).cos());
    }
    w
}

fn starts(len: usize) -> Vec<usize> {
    let mut s = Vec::new();
    let mut i = 0;
    while i + 256 < len {
        s.push(i);
        i += 128;
    }
    s
}

fn envelopes(s: &[f64], w: &[f64]) -> Vec<Vec<f64>> {
    let freqs: Vec<f64> = (0..=256).map(|k| k as f64 * 10000.0 / 512.0).collect();
    let argmin = |f: f64| {
        let mut best = 0;
        for k in 0..freqs.len() {
            if (freqs[k] - f).powi(2) < (freqs[best] - f).powi(2) {
                best = k;
            }
        }
        best
    };
    let mut bands = Vec::new();
    for j in 0..15 {
        let lo = 150.0 * 2f64.powf((2.0 * j as f64 - 1.0) / 6.0);
        let hi = 150.0 * 2f64.powf((2.0 * j as f64 + 1.0) / 6.0);
        bands.push((argmin(lo), argmin(hi)));
    }
    let mut out = vec![Vec::new(); 15];
    for start in starts(s.len()) {
        let mut power = vec![0.0; 257];
        for (k, p) in power.iter_mut().enumerate().take(bands[14].1) {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..256 {
                let v = w[i] * s[start + i];
                let a = -2.0 * PI * (k * i) as f64 / 512.0;
                re += v * a.cos();
                im += v * a.sin();
            }
            *p = re * re + im * im;
        }
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            let mut e = 0.0;
            for p in &power[lo..hi] {
                e += p;
            }
            out[j].push(e.sqrt());
        }
    }
    out
}

/// Loop-style intelligibility reference: windowed-sinc interpolation to
/// 10 kHz, a direct DFT and explicit band sums.
pub fn stoi_oracle(x: &[f64], y: &[f64]) -> f64 {
    let w = window();
    let x = resample(x);
    let y = resample(y);
    let st = starts(x.len());
    let mut energy = Vec::new();
    for &s in &st {
        let mut e = 0.0;
        for i in 0..256 {
            e += (w[i] * x[s + i]).powi(2);
        }
        energy.push(20.0 * (e.sqrt() + f64::EPSILON).log10());
    }
    let max = energy.iter().cloned().fold(f64::MIN, f64::max);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut k = 0;
    for (i, &s) in st.iter().enumerate() {
        if energy[i] > max - 40.0 {
            xs.resize(k * 128 + 256, 0.0);
            ys.resize(k * 128 + 256, 0.0);
            for n in 0..256 {
                xs[k * 128 + n] += w[n] * x[s + n];
                ys[k * 128 + n] += w[n] * y[s + n];
            }
            k += 1;
        }
    }
    let xe = envelopes(&xs, &w);
    let ye = envelopes(&ys, &w);
    let frames = xe[0].len();
    let clip = 1.0 + 10f64.powf(15.0 / 20.0);
    let mut sum = 0.0;
    let mut count = 0.0;
    for m in 30..=frames {
        for j in 0..15 {
            let a = &xe[j][m - 30..m];
            let b = &ye[j][m - 30..m];
            let (mut na, mut nb) = (0.0, 0.0);
            for t in 0..30 {
                na += a[t] * a[t];
                nb += b[t] * b[t];
            }
            let alpha = na.sqrt() / (nb.sqrt() + f64::EPSILON);
            let mut c = [0.0; 30];
            for t in 0..30 {
                c[t] = (alpha * b[t]).min(clip * a[t]);
            }
            let ma = a.iter().sum::<f64>() / 30.0;
            let mc = c.iter().sum::<f64>() / 30.0;
            let (mut num, mut da, mut dc) = (0.0, 0.0, 0.0);
            for t in 0..30 {
                num += (a[t] - ma) * (c[t] - mc);
                da += (a[t] - ma).powi(2);
                dc += (c[t] - mc).powi(2);
            }
            sum += num / ((da.sqrt() + f64::EPSILON) * (dc.sqrt() + f64::EPSILON));
            count += 1.0;
        }
    }
    sum / count
}
