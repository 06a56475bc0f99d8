use avcrn::tensor::{Graph, Tensor, TensorError, Var};

#[test]
fn rejects_mismatched_data() {
    assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(&[2, 0], vec![]).is_err());
    assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
}

#[test]
fn grad_accumulates() {
    let mut t = Tensor::zeros(&[3]).with_grad();
    t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
    t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
    assert!(t.accumulate_grad(&[1.0]).is_err());
    t.zero_grad();
    assert!(t.grad().is_none());
}

#[test]
fn sum_gives_ones() {
    let mut g = Graph::new();
    let x = g
        .input(&Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5).with_grad())
        .unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);
}

#[test]
fn square_sum_gives_twice_x() {
    let mut g = Graph::new();
    let t = Tensor::from_fn(&[4], |i| i as f64 * 0.7 - 1.0).with_grad();
    let x = g.input(&t).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    for (gv, xv) in grads.get(x).unwrap().iter().zip(t.data()) {
        assert!((gv - 2.0 * xv).abs() < 1e-15);
    }
}

#[test]
fn backward_requires_scalar_and_single_use() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::zeros(&[3]).with_grad()).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar { .. })));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.backward(s).err(), Some(TensorError::BackwardReplayed));
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut g = Graph::new();
    let t = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
    assert!(matches!(g.input(&t), Err(TensorError::NonFinite { .. })));
    let big = g.constant(&[1], vec![1e300]).unwrap();
    assert!(matches!(g.mul(big, big), Err(TensorError::NonFinite { op: "mul" })));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::full(&[2], 3.0).with_grad()).unwrap();
    let c = g.constant(&[2], vec![2.0, 5.0]).unwrap();
    let p = g.mul(x, c).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 5.0]);
    assert!(grads.get(c).is_none());
}

fn leaf(g: &mut Graph, shape: &[usize], f: impl FnMut(usize) -> f64) -> Var {
    g.input(&Tensor::from_fn(shape, f).with_grad()).unwrap()
}

#[test]
fn elu_closed_form() {
    let mut g = Graph::new();
    let x = g.constant(&[2], vec![0.0, -1.0]).unwrap();
    let y = g.elu(x).unwrap();
    assert_eq!(g.value(y)[0], 0.0);
    assert!((g.value(y)[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((g.value(y)[1] + 0.6321).abs() < 1e-4);
}

#[test]
fn softmax_of_zeros_is_uniform_and_stable() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
    let y = g.softmax(x, 1).unwrap();
    assert_eq!(g.value(y), &[0.5, 0.5]);
    let big = g.constant(&[3], vec![1000.0, 999.0, -1000.0]).unwrap();
    let y = g.softmax(big, 0).unwrap();
    let s: f64 = g.value(y).iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_along_middle_axis() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[2, 3, 4], |i| (i as f64 * 1.3).sin() * 3.0);
    let y = g.softmax(x, 1).unwrap();
    let v = g.value(y);
    for o in 0..2 {
        for i in 0..4 {
            let s: f64 = (0..3).map(|k| v[(o * 3 + k) * 4 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn permute_roundtrip() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[2, 3, 4, 5], |i| i as f64);
    let p = g.permute(x, &[3, 0, 1, 2]).unwrap();
    assert_eq!(g.shape(p), &[5, 2, 3, 4]);
    // element (n=1, c=2, h=3, w=4) moves to (4, 1, 2, 3)
    assert_eq!(
        g.value(p)[((4 * 2 + 1) * 3 + 2) * 4 + 3],
        g.value(x)[((3 + 2) * 4 + 3) * 5 + 4]
    );
    let back = g.permute(p, &[1, 2, 3, 0]).unwrap();
    assert_eq!(g.value(back), g.value(x));
    assert!(g.permute(x, &[0, 0, 1, 2]).is_err());
}

#[test]
fn concat_then_narrow_recovers_parts() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[2, 3, 2], |i| i as f64);
    let b = leaf(&mut g, &[2, 1, 2], |i| 100.0 + i as f64);
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 4, 2]);
    let a2 = g.narrow(c, 1, 0, 3).unwrap();
    let b2 = g.narrow(c, 1, 3, 1).unwrap();
    assert_eq!(g.value(a2), g.value(a));
    assert_eq!(g.value(b2), g.value(b));
    assert!(g.narrow(c, 1, 3, 2).is_err());
}

#[test]
fn batch_norm_train_normalizes() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[3, 2, 4, 5], |i| {
        (i as f64 * 0.77).sin() * 4.0 + (i % 7) as f64
    });
    let gamma = g.constant(&[2], vec![1.0; 2]).unwrap();
    let beta = g.constant(&[2], vec![0.0; 2]).unwrap();
    let (y, m) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
    assert_eq!(m.count, 60);
    let v = g.value(y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|n| v[(n * 2 + c) * 20..][..20].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 60.0;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 60.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_zero_gamma_outputs_beta() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[2, 2, 3, 3], |i| i as f64 * 0.1);
    let gamma = g.constant(&[2], vec![0.0; 2]).unwrap();
    let beta = g.constant(&[2], vec![0.25, -1.5]).unwrap();
    let (y, _) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
    for (i, v) in g.value(y).iter().enumerate() {
        let expect = if (i / 9) % 2 == 0 { 0.25 } else { -1.5 };
        assert_eq!(*v, expect);
    }
}

#[test]
fn batch_norm_rejects_single_element_channels() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[1, 2, 1, 1], |i| i as f64);
    let gamma = g.constant(&[2], vec![1.0; 2]).unwrap();
    let beta = g.constant(&[2], vec![0.0; 2]).unwrap();
    assert_eq!(
        g.batch_norm_train(x, gamma, beta, 1e-5).unwrap_err(),
        TensorError::DegenerateBatch { elements: 1 }
    );
}

#[test]
fn pooling_shapes_and_constants() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 2, 6, 6], vec![0.7; 72]).unwrap();
    let p = g.max_pool2(x).unwrap();
    assert_eq!(g.shape(p), &[1, 2, 3, 3]);
    assert!(g.value(p).iter().all(|&v| v == 0.7));
    let a = g.adaptive_avg_pool2d(p, (3, 2)).unwrap();
    assert!(g.value(a).iter().all(|&v| (v - 0.7).abs() < 1e-15));
    let up = g.adaptive_avg_pool2d(p, (5, 7)).unwrap();
    assert_eq!(g.shape(up), &[1, 2, 5, 7]);
}

#[test]
fn adaptive_pool_averages_windows() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 1, 2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
    let y = g.adaptive_avg_pool2d(x, (2, 2)).unwrap();
    assert_eq!(g.value(y), &[0.5, 2.5, 4.5, 6.5]);
}

#[test]
fn ones_kernel_sums_blocks() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::full(&[1, 1, 4, 4], 1.0)).unwrap();
    let w = g.input(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    let b = g.input(&Tensor::zeros(&[1])).unwrap();
    let y = g.conv2d(x, w, Some(b), (2, 2), (0, 0)).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y), &[4.0; 4]);
}

#[test]
fn transposed_ones_tile_without_overlap() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    let w = g.input(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    let y = g.conv_transpose2d(x, w, None, (2, 2), (0, 0)).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 4]);
    assert_eq!(g.value(y), &[1.0; 16]);
}

#[test]
fn unit_kernels() {
    let t = Tensor::from_fn(&[2, 3, 3, 5], |i| (i as f64 * 0.37).sin());
    let mut g = Graph::new();
    let x = g.input(&t).unwrap();
    let delta = Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let w = g.input(&delta).unwrap();
    let y = g.conv2d(x, w, None, (1, 1), (0, 0)).unwrap();
    assert_eq!(g.value(y), t.data());

    let mut g = Graph::new();
    let single = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f64 - 5.0);
    let x = g.input(&single).unwrap();
    let w = g.input(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
    let y = g.conv_transpose2d(x, w, None, (1, 1), (0, 0)).unwrap();
    let doubled: Vec<f64> = single.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.value(y), doubled.as_slice());
}

#[test]
fn shape_errors_name_the_axis() {
    let mut g = Graph::new();
    let x = g.input(&Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    let w = g.input(&Tensor::zeros(&[1, 3, 3, 3])).unwrap();
    let err = g.conv2d(x, w, None, (1, 1), (0, 0)).unwrap_err();
    assert!(err.to_string().contains("axis 1"), "{err}");
    let w = g.input(&Tensor::zeros(&[1, 2, 5, 5])).unwrap();
    assert!(g.conv2d(x, w, None, (1, 1), (0, 0)).is_err());
    let w = g.input(&Tensor::zeros(&[1, 2, 3, 3])).unwrap();
    assert!(g.conv2d(x, w, None, (0, 1), (0, 0)).is_err());
}
