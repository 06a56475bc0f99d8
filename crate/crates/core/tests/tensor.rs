mod common;

use avcrn::tensor::lstm::{lstm_sequence, LstmWeights};
use avcrn::tensor::{Graph, Tensor, TensorError, Var};
use common::oracles::{conv_oracle, lstm_oracle, matmul_oracle, sigmoid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..60 {
        let n = rng.random_range(1..3);
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let kh = rng.random_range(1..4);
        let kw = rng.random_range(1..4);
        let stride = (rng.random_range(1..3), rng.random_range(1..3));
        let pad = (rng.random_range(0..2), rng.random_range(0..2));
        let h = rng.random_range(kh..kh + 5);
        let wd = rng.random_range(kw..kw + 5);
        let x = random(&mut rng, &[n, cin, h, wd]);
        let w = random(&mut rng, &[cout, cin, kh, kw]);
        let b = random(&mut rng, &[cout]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(&x).unwrap(), g.input(&w).unwrap(), g.input(&b).unwrap());
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let (want, shape) = conv_oracle(
            x.data(),
            [n, cin, h, wd],
            w.data(),
            [cout, cin, kh, kw],
            b.data(),
            stride,
            pad,
        );
        assert_eq!(g.shape(y), shape.as_slice(), "case {case}");
        close(g.value(y), &want, 1e-12);
    }
}

#[test]
fn conv2d_spec_case_stride_two_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 2, 5, 5]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let mut g = Graph::new();
    let (xv, wv) = (g.input(&x).unwrap(), g.input(&w).unwrap());
    let y = g.conv2d(xv, wv, None, (2, 1), (0, 0)).unwrap();
    let (want, shape) = conv_oracle(
        x.data(),
        [1, 2, 5, 5],
        w.data(),
        [3, 2, 3, 3],
        &[0.0; 3],
        (2, 1),
        (0, 0),
    );
    assert_eq!(shape, [1, 3, 2, 3]);
    close(g.value(y), &want, 1e-12);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..60 {
        let batch = rng.random_range(0..3);
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let (sa, sb): (Vec<usize>, Vec<usize>) = if batch == 0 {
            (vec![m, k], vec![k, n])
        } else {
            (vec![batch, m, k], vec![batch, k, n])
        };
        let a = random(&mut rng, &sa);
        let b = random(&mut rng, &sb);
        let mut g = Graph::new();
        let (av, bv) = (g.input(&a).unwrap(), g.input(&b).unwrap());
        let y = g.matmul(av, bv).unwrap();
        let want = matmul_oracle(a.data(), b.data(), batch, m, k, n);
        close(g.value(y), &want, 1e-12);
    }
}

#[test]
fn matmul_two_by_three() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = g.constant(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y), &[58.0, 64.0, 139.0, 154.0]);
    let bad = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(g.matmul(a, bad), Err(TensorError::Shape { .. })));
}

fn lstm_weights(g: &mut Graph, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> LstmWeights {
    LstmWeights {
        w_ih: g.input(w_ih).unwrap(),
        w_hh: g.input(w_hh).unwrap(),
        bias: g.input(bias).unwrap(),
    }
}

#[test]
fn lstm_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (steps, n, feat, hd) = (
            rng.random_range(1..6),
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let x = random(&mut rng, &[steps, n, feat]);
        let w_ih = random(&mut rng, &[4 * hd, feat]);
        let w_hh = random(&mut rng, &[4 * hd, hd]);
        let bias = random(&mut rng, &[4 * hd]);
        let mut g = Graph::new();
        let xv = g.input(&x).unwrap();
        let w = lstm_weights(&mut g, &w_ih, &w_hh, &bias);
        let y = lstm_sequence(&mut g, xv, &w).unwrap();
        assert_eq!(g.shape(y), &[steps, n, hd]);
        close(g.value(y), &lstm_oracle(&x, &w_ih, &w_hh, &bias), 1e-12);
    }
}

#[test]
fn lstm_single_unit_hand_cell() {
    // x = 1, w_ih = [0.5, -0.5, 1, 2], bias = [0.1, 0.2, 0.3, 0.4], zero state.
    let x = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
    let w_ih = Tensor::new(&[4, 1], vec![0.5, -0.5, 1.0, 2.0]).unwrap();
    let w_hh = Tensor::new(&[4, 1], vec![0.3, 0.3, 0.3, 0.3]).unwrap();
    let bias = Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let mut g = Graph::new();
    let xv = g.input(&x).unwrap();
    let w = lstm_weights(&mut g, &w_ih, &w_hh, &bias);
    let y = lstm_sequence(&mut g, xv, &w).unwrap();
    let i = sigmoid(0.6);
    let c = i * 1.3f64.tanh();
    let h = sigmoid(2.4) * c.tanh();
    assert!((g.value(y)[0] - h).abs() < 1e-15);
    assert!((h - 0.463_258_502).abs() < 1e-9, "{h}");
}

#[test]
fn lstm_zero_everything_gives_zero() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::zeros(&[7, 2, 3])).unwrap();
    let w = lstm_weights(
        &mut g,
        &Tensor::zeros(&[8, 3]),
        &Tensor::zeros(&[8, 2]),
        &Tensor::zeros(&[8]),
    );
    let y = lstm_sequence(&mut g, x, &w).unwrap();
    assert!(g.value(y).iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_saturated_forget_gate_carries_cell() {
    // Step 0 writes c0 = sigmoid(10) * tanh(1); afterwards the input gate is
    // closed and the forget gate open, so c stays put and h = sigmoid(10) * tanh(c).
    let steps = 20;
    let mut xs = vec![0.0; steps];
    xs[0] = 1.0;
    let x = Tensor::new(&[steps, 1, 1], xs).unwrap();
    let w_ih = Tensor::new(&[4, 1], vec![20.0, 0.0, 1.0, 0.0]).unwrap();
    let w_hh = Tensor::zeros(&[4, 1]);
    let bias = Tensor::new(&[4], vec![-10.0, 10.0, 0.0, 10.0]).unwrap();
    let mut g = Graph::new();
    let xv = g.input(&x).unwrap();
    let w = lstm_weights(&mut g, &w_ih, &w_hh, &bias);
    let y = lstm_sequence(&mut g, xv, &w).unwrap();
    let o = sigmoid(10.0);
    let c0 = (g.value(y)[0] / o).atanh();
    let c_last = (g.value(y)[steps - 1] / o).atanh();
    assert!((c0 - sigmoid(10.0) * 1f64.tanh()).abs() < 1e-9);
    assert!((c_last - c0).abs() < 1e-3, "{c0} -> {c_last}");
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    while cases < 50 {
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
        let (kh, kw) = (rng.random_range(1..5), rng.random_range(1..4));
        let stride = (rng.random_range(1..3), rng.random_range(1..3));
        let pad = (rng.random_range(0..kh), rng.random_range(0..kw));
        let (h, wd) = (rng.random_range(kh..kh + 6), rng.random_range(kw..kw + 6));
        // Otherwise the last input rows need an output padding the op does not take.
        if (h + 2 * pad.0 - kh) % stride.0 != 0 || (wd + 2 * pad.1 - kw) % stride.1 != 0 {
            continue;
        }
        cases += 1;
        let x = random(&mut rng, &[2, cin, h, wd]).with_grad();
        let k = random(&mut rng, &[cout, cin, kh, kw]);
        let mut g = Graph::new();
        let (xv, kv) = (g.input(&x).unwrap(), g.input(&k).unwrap());
        let y = g.conv2d(xv, kv, None, stride, pad).unwrap();
        let up = random(&mut rng, g.shape(y));
        let upv = g.input(&up).unwrap();
        let weighted = g.mul(y, upv).unwrap();
        let loss = g.sum(weighted).unwrap();
        let grads = g.backward(loss).unwrap();
        let dx = grads.get(xv).unwrap().to_vec();

        // The kernel read as [Cin_t = Cout, Cout_t = Cin] maps the upstream
        // gradient back onto the input grid.
        let mut g2 = Graph::new();
        let upv = g2.input(&up).unwrap();
        let kv = g2.input(&k).unwrap();
        let back = g2.conv_transpose2d(upv, kv, None, stride, pad).unwrap();
        assert_eq!(g2.shape(back), x.shape());
        close(g2.value(back), &dx, 1e-12);
    }
}

#[test]
fn conv_then_transposed_restores_extent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    while checked < 50 {
        let (kh, kw) = (rng.random_range(1..6), rng.random_range(1..6));
        let stride = (rng.random_range(1..4), rng.random_range(1..4));
        let pad = (rng.random_range(0..kh), rng.random_range(0..kw));
        let (h, wd) = (rng.random_range(kh..20), rng.random_range(kw..20));
        if (h + 2 * pad.0 - kh) % stride.0 != 0 || (wd + 2 * pad.1 - kw) % stride.1 != 0 {
            continue;
        }
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(&[1, 2, h, wd])).unwrap();
        let k = g.input(&Tensor::zeros(&[3, 2, kh, kw])).unwrap();
        let kt = g.input(&Tensor::zeros(&[3, 2, kh, kw])).unwrap();
        let y = g.conv2d(x, k, None, stride, pad).unwrap();
        let z = g.conv_transpose2d(y, kt, None, stride, pad).unwrap();
        assert_eq!(g.shape(z), &[1, 2, h, wd]);
        checked += 1;
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let shape = [rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6)];
        let scale = 10f64.powi(rng.random_range(-2..4));
        let x = Tensor::from_fn(&shape, |_| scale * rng.random_range(-1.0..1.0));
        for axis in 0..3 {
            let mut g = Graph::new();
            let xv = g.input(&x).unwrap();
            let y = g.softmax(xv, axis).unwrap();
            let stride: usize = shape[axis + 1..].iter().product();
            let v = g.value(y);
            for outer in 0..shape[..axis].iter().product::<usize>() {
                for inner in 0..stride {
                    let s: f64 = (0..shape[axis])
                        .map(|j| v[(outer * shape[axis] + j) * stride + inner])
                        .sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
            assert!(v.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn batch_norm_eval_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[3, 4, 2, 5]);
    let gamma = random(&mut rng, &[4]);
    let beta = random(&mut rng, &[4]);
    let mean: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..2.0)).collect();
    let mut g = Graph::new();
    let (xv, gv, bv) = (g.input(&x).unwrap(), g.input(&gamma).unwrap(), g.input(&beta).unwrap());
    let y = g.batch_norm_eval(xv, gv, bv, &mean, &var, 1e-5).unwrap();
    for (i, (&xi, &yi)) in x.data().iter().zip(g.value(y)).enumerate() {
        let c = (i / 10) % 4;
        let want = (xi - mean[c]) / (var[c] + 1e-5).sqrt() * gamma.data()[c] + beta.data()[c];
        assert!((yi - want).abs() < 1e-12);
    }
}

#[test]
fn gradient_of_sum_and_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[3, 4]).with_grad();
    let mut g = Graph::new();
    let xv = g.input(&x).unwrap();
    let sq = g.mul(xv, xv).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    close(grads.get(xv).unwrap(), &want, 1e-15);
}

#[test]
fn second_backward_is_an_error() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::full(&[2], 1.0).with_grad()).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(TensorError::BackwardReplayed)));
}

/// Checks `<grad, d>` of `sum(op(inputs) * r)` against a central difference along `d`.
fn directional(name: &str, shapes: &[&[usize]], seed: u64, op: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s).with_grad()).collect();
    let ds: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let eval = |inputs: &[Tensor], weights: Option<&Tensor>| -> (f64, Vec<Vec<f64>>, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t).unwrap()).collect();
        let y = op(&mut g, &vars);
        let r = weights
            .cloned()
            .unwrap_or_else(|| Tensor::from_fn(g.shape(y), |i| ((i * 7919 % 13) as f64 - 6.0) / 6.0));
        let rv = g.input(&r).unwrap();
        let prod = g.mul(y, rv).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss)[0];
        let grads = g.backward(loss).unwrap();
        let gs = vars
            .iter()
            .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
            .collect();
        (value, gs, r)
    };
    let (_, grads, r) = eval(&xs, None);
    let eps = 1e-4;
    let shifted = |sign: f64| -> Vec<Tensor> {
        xs.iter()
            .zip(&ds)
            .map(|(x, d)| Tensor::from_fn(x.shape(), |i| x.data()[i] + sign * eps * d.data()[i]).with_grad())
            .collect()
    };
    let (up, _, _) = eval(&shifted(1.0), Some(&r));
    let (down, _, _) = eval(&shifted(-1.0), Some(&r));
    let numeric = (up - down) / (2.0 * eps);
    let analytic: f64 = grads
        .iter()
        .zip(&ds)
        .map(|(g, d)| g.iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
    assert!(
        rel < 1e-4,
        "{name}: analytic {analytic}, numeric {numeric}, rel {rel:e}"
    );
}

#[test]
fn every_op_passes_directional_derivative_check() {
    for seed in 0..5 {
        directional("add", &[&[3, 4], &[3, 4]], seed, |g, v| g.add(v[0], v[1]).unwrap());
        directional("sub", &[&[3, 4], &[3, 4]], seed, |g, v| g.sub(v[0], v[1]).unwrap());
        directional("mul", &[&[3, 4], &[3, 4]], seed, |g, v| g.mul(v[0], v[1]).unwrap());
        directional("scale", &[&[5]], seed, |g, v| g.scale(v[0], -2.5).unwrap());
        directional("scale_by", &[&[2, 3], &[1]], seed, |g, v| {
            g.scale_by(v[0], v[1]).unwrap()
        });
        directional("elu", &[&[4, 5]], seed, |g, v| g.elu(v[0]).unwrap());
        directional("sigmoid", &[&[4, 5]], seed, |g, v| g.sigmoid(v[0]).unwrap());
        directional("tanh", &[&[4, 5]], seed, |g, v| g.tanh(v[0]).unwrap());
        for axis in 0..3 {
            directional("softmax", &[&[2, 3, 4]], seed, move |g, v| {
                g.softmax(v[0], axis).unwrap()
            });
        }
        directional("matmul2", &[&[3, 4], &[4, 2]], seed, |g, v| {
            g.matmul(v[0], v[1]).unwrap()
        });
        directional("matmul3", &[&[2, 3, 4], &[2, 4, 2]], seed, |g, v| {
            g.matmul(v[0], v[1]).unwrap()
        });
        directional("transpose_last", &[&[2, 3, 4]], seed, |g, v| {
            g.transpose_last(v[0]).unwrap()
        });
        directional("reshape", &[&[2, 6]], seed, |g, v| g.reshape(v[0], &[3, 4]).unwrap());
        directional("permute", &[&[2, 3, 4]], seed, |g, v| {
            g.permute(v[0], &[2, 0, 1]).unwrap()
        });
        directional("concat", &[&[2, 3], &[2, 1]], seed, |g, v| {
            g.concat(&[v[0], v[1]], 1).unwrap()
        });
        directional("narrow", &[&[4, 5]], seed, |g, v| g.narrow(v[0], 1, 1, 3).unwrap());
        directional("linear", &[&[3, 4], &[2, 4], &[2]], seed, |g, v| {
            g.linear(v[0], v[1], Some(v[2])).unwrap()
        });
        directional("linear_nobias", &[&[3, 4], &[2, 4]], seed, |g, v| {
            g.linear(v[0], v[1], None).unwrap()
        });
        directional("bn_train", &[&[2, 3, 2, 3], &[3], &[3]], seed, |g, v| {
            g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
        });
        directional("bn_eval", &[&[2, 3, 2, 3], &[3], &[3]], seed, |g, v| {
            g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5)
                .unwrap()
        });
        directional("max_pool2", &[&[2, 2, 4, 5]], seed, |g, v| g.max_pool2(v[0]).unwrap());
        directional("adaptive_down", &[&[1, 2, 7, 5]], seed, |g, v| {
            g.adaptive_avg_pool2d(v[0], (3, 2)).unwrap()
        });
        directional("adaptive_up", &[&[1, 2, 3, 2]], seed, |g, v| {
            g.adaptive_avg_pool2d(v[0], (5, 4)).unwrap()
        });
        directional("conv2d", &[&[2, 2, 5, 4], &[3, 2, 3, 3], &[3]], seed, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1)).unwrap()
        });
        directional(
            "conv_transpose2d",
            &[&[2, 3, 3, 4], &[3, 2, 4, 3], &[2]],
            seed,
            |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1)).unwrap(),
        );
        directional("lstm", &[&[4, 2, 3], &[8, 3], &[8, 2], &[8]], seed, |g, v| {
            let w = LstmWeights {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            lstm_sequence(g, v[0], &w).unwrap()
        });
        directional("sum", &[&[3, 3]], seed, |g, v| g.sum(v[0]).unwrap());
        directional("mean", &[&[3, 3]], seed, |g, v| g.mean(v[0]).unwrap());
    }
}

#[test]
fn lstm_gradient_through_twenty_steps() {
    for seed in 0..3 {
        directional(
            "lstm2x20",
            &[&[20, 2, 3], &[8, 3], &[8, 2], &[8], &[8, 2], &[8, 2], &[8]],
            seed,
            |g, v| {
                let l0 = LstmWeights {
                    w_ih: v[1],
                    w_hh: v[2],
                    bias: v[3],
                };
                let l1 = LstmWeights {
                    w_ih: v[4],
                    w_hh: v[5],
                    bias: v[6],
                };
                let h = lstm_sequence(g, v[0], &l0).unwrap();
                lstm_sequence(g, h, &l1).unwrap()
            },
        );
    }
}

#[test]
fn batch_norm_rejects_an_overflowed_variance() {
    let mut g = Graph::new();
    let x = g
        .input(&Tensor::new(&[2, 1, 1, 1], vec![1e200, -1e200]).unwrap())
        .unwrap();
    let gamma = g.input(&Tensor::full(&[1], 1.0)).unwrap();
    let beta = g.input(&Tensor::zeros(&[1])).unwrap();
    assert!(matches!(
        g.batch_norm_train(x, gamma, beta, 1e-5),
        Err(TensorError::NonFinite { op: "batch_norm" })
    ));
}
