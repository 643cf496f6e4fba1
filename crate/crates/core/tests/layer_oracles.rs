mod common;

use common::*;
use rand::Rng;
use redlens_core::layers::{
    conv2d_with, dense_batch, maxpool2x2, relu, ConvConfig, DenseParams, KernelBank,
};
use redlens_core::{Dims4, Execution, Tensor4};

#[test]
fn conv_matches_brute_force_on_100_random_shapes() {
    if let Err(e) = suites::conv_matches_oracle(100, 2024) {
        panic!("{e}");
    }
}

#[test]
fn conv_is_linear_in_input() {
    let mut r = rng(7);
    for _ in 0..20 {
        let s = suites::random_conv_shape(&mut r);
        let dims = Dims4::new(s.n, s.c, s.h, s.w);
        let a = Tensor4::from_vec(dims, uniform_vec(&mut r, dims.len(), -1.0, 1.0)).unwrap();
        let b = Tensor4::from_vec(dims, uniform_vec(&mut r, dims.len(), -1.0, 1.0)).unwrap();
        let (alpha, beta) = (r.gen_range(-2.0f32..2.0), r.gen_range(-2.0f32..2.0));
        let bank = KernelBank::new(
            s.k,
            s.c,
            s.kh,
            s.kw,
            uniform_vec(&mut r, s.k * s.c * s.kh * s.kw, -1.0, 1.0),
            vec![0.0; s.k],
        )
        .unwrap();
        let cfg = ConvConfig::with_padding(s.pad);
        let mix = Tensor4::from_vec(
            dims,
            a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect(),
        )
        .unwrap();
        let lhs = conv2d_with(Execution::Sequential, &mix, &bank, &cfg).unwrap();
        let ca = conv2d_with(Execution::Sequential, &a, &bank, &cfg).unwrap();
        let cb = conv2d_with(Execution::Sequential, &b, &bank, &cfg).unwrap();
        for ((l, x), y) in lhs.data().iter().zip(ca.data()).zip(cb.data()) {
            assert!((l - (alpha * x + beta * y)).abs() < 1e-4);
        }
    }
}

#[test]
fn dense_relu_pool_match_references() {
    let mut r = rng(11);
    for _ in 0..20 {
        let (n, fin, fout) = (r.gen_range(1..5), r.gen_range(1..30), r.gen_range(1..10));
        let x = uniform_vec(&mut r, n * fin, -1.0, 1.0);
        let w = uniform_vec(&mut r, fout * fin, -1.0, 1.0);
        let b = uniform_vec(&mut r, fout, -1.0, 1.0);
        let p = DenseParams::new(fout, fin, w.clone(), b.clone()).unwrap();
        let got = dense_batch(&Tensor4::from_vec(Dims4::new(n, fin, 1, 1), x.clone()).unwrap(), &p).unwrap();
        let expect = dense_ref(n, fin, fout, &to_f64(&x), &to_f64(&w), &to_f64(&b));
        for (g, e) in got.data().iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-5);
        }

        let (c, h, wd) = (r.gen_range(1..4), 2 * r.gen_range(1..6), 2 * r.gen_range(1..6));
        let t = Tensor4::from_vec(Dims4::new(n, c, h, wd), uniform_vec(&mut r, n * c * h * wd, -1.0, 1.0)).unwrap();
        assert_eq!(to_f64(relu(&t).data()), relu_ref(&to_f64(t.data())));
        let (pooled, _) = maxpool2x2(&t).unwrap();
        assert_eq!(to_f64(pooled.data()), maxpool_ref(n * c, h, wd, &to_f64(t.data())));
    }
}
