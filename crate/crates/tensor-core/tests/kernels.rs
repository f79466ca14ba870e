use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensor_core::{grad_check, ops, Tensor};

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct six-nested-loop cross-correlation, independent of the conv2d path.
fn conv2d_loop_oracle(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (co, k): (usize, usize),
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    for bi in 0..b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize * stride as isize + ky as isize
                                    - padding as isize;
                                let ix = ox as isize * stride as isize + kx as isize
                                    - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                out[((bi * co + o) * ho + oy) * wo + ox] += x
                                    [((bi * c + ci) * h + iy as usize) * w + ix as usize]
                                    * wt[((o * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_pointwise_scaling() {
    let x = Tensor::ones(&[1, 1, 3, 3]);
    let w = Tensor::new(&[1, 1, 1, 1], vec![2.0]);
    let y = ops::conv2d(&x, &w, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn conv2d_identity_kernel() {
    let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let mut w = vec![0.0; 9];
    w[4] = 1.0; // center of a 3x3 kernel
    let w = Tensor::new(&[1, 1, 3, 3], w);
    let y = ops::conv2d(&x, &w, 1, 1).unwrap();
    assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(b, c, h, w, co, k, stride, pad) in &[
        (1usize, 2usize, 4usize, 4usize, 3usize, 3usize, 1usize, 1usize),
        (2, 4, 8, 8, 2, 3, 1, 1),
        (1, 2, 7, 7, 2, 3, 2, 1),
        (2, 3, 5, 5, 4, 1, 1, 0),
    ] {
        let xd = randn(&mut rng, b * c * h * w);
        let wd = randn(&mut rng, co * c * k * k);
        let x = Tensor::new(&[b, c, h, w], xd.clone());
        let wt = Tensor::new(&[co, c, k, k], wd.clone());
        let y = ops::conv2d(&x, &wt, stride, pad).unwrap();
        let expect = conv2d_loop_oracle(&xd, (b, c, h, w), &wd, (co, k), stride, pad);
        let max = y
            .data()
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max < 1e-12, "conv2d vs oracle diff {max}");
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let x = Tensor::zeros(&[1, 3, 4, 4]);
    let w = Tensor::zeros(&[2, 2, 3, 3]);
    let err = ops::conv2d(&x, &w, 1, 1).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("axis 1"), "diagnostic should name the axis: {msg}");
}

#[test]
fn adaptive_pool_constant_field() {
    let x = Tensor::ones(&[1, 1, 4, 4]);
    let y = ops::adaptive_avg_pool2d(&x, (2, 2)).unwrap();
    assert!(y.data().iter().all(|&v| v == 1.0));
}

#[test]
fn adaptive_pool_window_means_by_hand() {
    let x = Tensor::new(&[1, 1, 4, 4], (1..=16).map(f64::from).collect());
    let y = ops::adaptive_avg_pool2d(&x, (2, 2)).unwrap();
    assert_eq!(y.to_vec(), vec![3.5, 5.5, 11.5, 13.5]);
}

#[test]
fn adaptive_pool_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xd = randn(&mut rng, 2 * 3 * 3);
    let x = Tensor::new(&[1, 2, 3, 3], xd.clone());
    let y = ops::adaptive_avg_pool2d(&x, (3, 3)).unwrap();
    assert_eq!(y.to_vec(), xd);
}

#[test]
fn adaptive_pool_rejects_bad_targets() {
    let x = Tensor::zeros(&[1, 1, 4, 4]);
    assert!(ops::adaptive_avg_pool2d(&x, (0, 2)).is_err());
    assert!(ops::adaptive_avg_pool2d(&x, (8, 8)).is_err());
    assert!(ops::bilinear_resize(&x, (8, 8)).is_ok());
}

#[test]
fn adaptive_pool_preserves_global_mean_when_divisible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xd = randn(&mut rng, 8 * 8);
    let x = Tensor::new(&[1, 1, 8, 8], xd.clone());
    let y = ops::adaptive_avg_pool2d(&x, (4, 2)).unwrap();
    let m_in: f64 = xd.iter().sum::<f64>() / 64.0;
    let m_out: f64 = y.data().iter().sum::<f64>() / 8.0;
    assert!((m_in - m_out).abs() < 1e-12);
}

#[test]
fn bilinear_sample_on_grid_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, h, w) = (2, 4, 5);
    let xd = randn(&mut rng, c * h * w);
    let x = Tensor::new(&[c, h, w], xd.clone());
    for i in 0..h {
        for j in 0..w {
            let pts = Tensor::new(
                &[1, 2],
                vec![(i as f64 + 0.5) / h as f64, (j as f64 + 0.5) / w as f64],
            );
            let y = ops::bilinear_sample(&x, &pts);
            for ci in 0..c {
                assert!((y.data()[ci] - xd[ci * h * w + i * w + j]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn bilinear_sample_midpoint_is_mean() {
    let x = Tensor::new(&[1, 1, 2], vec![3.0, 7.0]);
    // Midpoint between the two horizontally adjacent cells.
    let pts = Tensor::new(&[1, 2], vec![0.5, 0.5]);
    let y = ops::bilinear_sample(&x, &pts);
    assert!((y.data()[0] - 5.0).abs() < 1e-14);
}

#[test]
fn bilinear_sample_clamps_to_border() {
    let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let pts = Tensor::new(&[1, 2], vec![-5.0, -5.0]);
    let y = ops::bilinear_sample(&x, &pts);
    assert_eq!(y.data()[0], 1.0);
}

#[test]
fn softmax_trivial_and_stability() {
    let y = ops::softmax(&Tensor::new(&[3], vec![0.0, 0.0, 0.0]), 0);
    for v in y.data().iter() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let y = ops::softmax(&Tensor::new(&[3], vec![1000.0, 0.0, 0.0]), 0);
    assert!(y.data()[0] > 1.0 - 1e-12);
    assert!(y.data().iter().all(|v| v.is_finite()));
}

#[test]
fn softmax_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xd = randn(&mut rng, 5);
    let y = ops::softmax(&Tensor::new(&[5], xd.clone()), 0);
    let z: f64 = xd.iter().map(|v| v.exp()).sum();
    for (a, v) in y.data().iter().zip(&xd) {
        assert!((a - v.exp() / z).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_constant_row_is_bias() {
    let x = Tensor::new(&[1, 4], vec![3.0; 4]);
    let y = ops::layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]));
    for v in y.data().iter() {
        assert!(v.abs() < 1e-10);
    }
}

#[test]
fn linear_identity_passthrough() {
    let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut w = vec![0.0; 9];
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let y = ops::linear(&x, &Tensor::new(&[3, 3], w), &Tensor::zeros(&[3]));
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn degenerate_attention_returns_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = Tensor::new(&[3, 4], randn(&mut rng, 12));
    let k = Tensor::new(&[1, 4], randn(&mut rng, 4));
    let v = Tensor::new(&[1, 4], randn(&mut rng, 4));
    let (out, probs) = ops::multi_head_attention(&q, &k, &v, 1, false).unwrap();
    for r in 0..3 {
        for j in 0..4 {
            assert!((out.data()[r * 4 + j] - v.data()[j]).abs() < 1e-14);
        }
    }
    assert!(probs.iter().all(|&p| (p - 1.0).abs() < 1e-12));
}

#[test]
fn attention_rejects_bad_head_count() {
    let q = Tensor::zeros(&[2, 6]);
    assert!(ops::multi_head_attention(&q, &q, &q, 4, false).is_err());
}

#[test]
fn grad_check_square() {
    let w = Tensor::param(&[1], vec![3.0]);
    let w2 = w.clone();
    let report = grad_check(
        &move || ops::mul(&w2, &w2),
        &[("w".into(), w.clone())],
        1e-5,
        1e-10,
        None,
        0,
    );
    assert!(report.pass, "{report:?}");
    assert!((w.grad().unwrap()[0] - 6.0).abs() < 1e-9);
}

#[test]
fn grad_check_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::param(&[1, 2, 4, 4], randn(&mut rng, 32));
    let w = Tensor::param(&[2, 2, 3, 3], randn(&mut rng, 36));
    let (x2, w2) = (x.clone(), w.clone());
    let report = grad_check(
        &move || ops::sum(&ops::conv2d(&x2, &w2, 1, 1).unwrap()),
        &[("x".into(), x), ("w".into(), w)],
        1e-5,
        1e-7,
        None,
        0,
    );
    assert!(report.pass, "{report:?}");
}

#[test]
fn grad_check_bilinear_sample_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::param(&[2, 4, 4], randn(&mut rng, 32));
    // Points strictly inside cells, away from bilinear kinks.
    let pts = Tensor::param(&[3, 2], vec![0.31, 0.42, 0.63, 0.17, 0.805, 0.705]);
    let (x2, p2) = (x.clone(), pts.clone());
    let report = grad_check(
        &move || ops::sum(&ops::bilinear_sample(&x2, &p2)),
        &[("x".into(), x), ("pts".into(), pts)],
        1e-5,
        1e-6,
        None,
        0,
    );
    assert!(report.pass, "{report:?}");
}

#[test]
fn grad_check_composite_kernels() {
    // softmax, layer_norm, gelu, pooling, attention in one scalar pipeline.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::param(&[1, 2, 4, 4], randn(&mut rng, 32));
    let gain = Tensor::param(&[8], randn(&mut rng, 8));
    let bias = Tensor::param(&[8], randn(&mut rng, 8));
    let x2 = x.clone();
    let (g2, b2) = (gain.clone(), bias.clone());
    let f = move || {
        let pooled = ops::adaptive_avg_pool2d(&x2, (2, 2)).unwrap();
        let rows = ops::reshape(&pooled, &[4, 2]);
        let wide = ops::concat_cols(&rows, &ops::gelu(&rows));
        let wide = ops::concat_cols(&wide, &ops::softmax(&wide, 1));
        let normed = ops::layer_norm(&wide, &g2, &b2);
        let (att, _) = ops::multi_head_attention(&normed, &normed, &normed, 2, true).unwrap();
        ops::mean(&att)
    };
    let report = grad_check(
        &f,
        &[("x".into(), x), ("gain".into(), gain), ("bias".into(), bias)],
        1e-5,
        1e-6,
        None,
        0,
    );
    assert!(report.pass, "{report:?}");
}

#[test]
fn grad_check_reports_nonfinite_as_failed() {
    let w = Tensor::param(&[1], vec![0.0]);
    let w2 = w.clone();
    let report = grad_check(
        &move || ops::scale(&w2, f64::INFINITY),
        &[("w".into(), w)],
        1e-5,
        1e-6,
        None,
        0,
    );
    assert!(!report.pass);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(xs in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let t = Tensor::new(&[3, 4], xs);
        let y = ops::softmax(&t, 1);
        let d = y.to_vec();
        for r in 0..3 {
            let s: f64 = d[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(d[r * 4..(r + 1) * 4].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn pooling_preserves_mean_on_divisible_grids(xs in proptest::collection::vec(-10.0f64..10.0, 36)) {
        let t = Tensor::new(&[1, 1, 6, 6], xs.clone());
        let y = ops::adaptive_avg_pool2d(&t, (3, 2)).unwrap();
        let m_in = xs.iter().sum::<f64>() / 36.0;
        let m_out = y.data().iter().sum::<f64>() / 6.0;
        prop_assert!((m_in - m_out).abs() < 1e-12);
    }
}
