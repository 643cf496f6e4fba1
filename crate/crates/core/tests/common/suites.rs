//! Seeded property suites. Each returns a one-line summary on success and a
//! description of the first violation otherwise, so they can back both the
//! integration tests and the acceptance report.

use rand::Rng;
use redlens_core::data::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, IdxImages, LabeledBatch,
};
use redlens_core::impulse::{cascade_check, gaussian_horizontal, gaussian_vertical};
use redlens_core::layers::{
    conv2d_backward, conv2d_with, dense_backward_batch, maxpool2x2, maxpool2x2_backward,
    relu_backward, softmax_cross_entropy_batch, ConvConfig, DenseParams, KernelBank,
};
use redlens_core::metrics::{cosine_similarity, ncc, ncc_matrix, NccMode};
use redlens_core::model::{InputShape, LayerParams, LayerSpec, Network, NetworkSpec, Nonlinearity, Pooling};
use redlens_core::perturb::{forward_with_perturbation, PerturbationPlan, PixelScope, ShuffleMode};
use redlens_core::train::loss_and_gradients;
use redlens_core::{Dims4, Execution, Map2d, Tensor4};

use super::*;

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub const CONV_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;
pub const FD_SEEDS: u64 = 10;
pub const CASCADE_TOL: f64 = 1e-5;
pub const BOUND_SLACK: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_conv_shape(r: &mut rand_chacha::ChaCha8Rng) -> ConvShape {
    let kh = r.gen_range(1..=5);
    let kw = r.gen_range(1..=5);
    ConvShape {
        n: r.gen_range(1..=4),
        c: r.gen_range(1..=4),
        h: r.gen_range(kh..=12),
        w: r.gen_range(kw..=12),
        k: r.gen_range(1..=5),
        kh,
        kw,
        pad: r.gen_range(0..=2),
    }
}

/// `conv2d` under both execution policies against the brute-force sum.
pub fn conv_matches_oracle(cases: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let s = random_conv_shape(&mut r);
        let input = uniform_vec(&mut r, s.n * s.c * s.h * s.w, -1.0, 1.0);
        let weights = uniform_vec(&mut r, s.k * s.c * s.kh * s.kw, -1.0, 1.0);
        let bias = uniform_vec(&mut r, s.k, -0.5, 0.5);
        let x = Tensor4::from_vec(Dims4::new(s.n, s.c, s.h, s.w), input.clone()).unwrap();
        let bank = KernelBank::new(s.k, s.c, s.kh, s.kw, weights.clone(), bias.clone()).unwrap();
        let expect = conv_ref(s, &to_f64(&input), &to_f64(&weights), &to_f64(&bias));
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = conv2d_with(exec, &x, &bank, &ConvConfig::with_padding(s.pad)).map_err(|e| e.to_string())?;
            let (ho, wo) = s.out_hw();
            ensure!(got.dims() == Dims4::new(s.n, s.k, ho, wo), "case {case}: {s:?} gave {}", got.dims());
            for (g, e) in got.data().iter().zip(&expect) {
                worst = worst.max((*g as f64 - e).abs());
            }
            ensure!(worst < CONV_TOL, "case {case}: {s:?}: error {worst:e}");
        }
    }
    Ok(format!("{cases} shapes, max abs error {worst:.1e}"))
}

pub fn conv_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..FD_SEEDS {
        let mut r = rng(seed);
        let pad = (seed % 2) as usize;
        let s = ConvShape { n: 1, c: 2, h: 5, w: 5, k: 3, kh: 3, kw: 3, pad };
        let x = uniform_vec(&mut r, 50, -1.0, 1.0);
        let w = uniform_vec(&mut r, 54, -1.0, 1.0);
        let b = uniform_vec(&mut r, 3, -1.0, 1.0);
        let (ho, wo) = s.out_hw();
        let up = uniform_vec(&mut r, 3 * ho * wo, -1.0, 1.0);
        let up64 = to_f64(&up);
        let (x64, w64, b64) = (to_f64(&x), to_f64(&w), to_f64(&b));
        let bank = KernelBank::new(3, 2, 3, 3, w, b).unwrap();
        let g = conv2d_backward(
            &Tensor4::from_vec(Dims4::new(1, 2, 5, 5), x).unwrap(),
            &bank,
            &ConvConfig::with_padding(pad),
            &Tensor4::from_vec(Dims4::new(1, 3, ho, wo), up).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let nx = numeric_grad(&x64, FD_STEP, |v| dot(&conv_ref(s, v, &w64, &b64), &up64));
        let nw = numeric_grad(&w64, FD_STEP, |v| dot(&conv_ref(s, &x64, v, &b64), &up64));
        let nb = numeric_grad(&b64, FD_STEP, |v| dot(&conv_ref(s, &x64, &w64, v), &up64));
        for (name, a, n) in [
            ("input", to_f64(g.input.as_ref().unwrap().data()), nx),
            ("weights", to_f64(&g.weights), nw),
            ("bias", to_f64(&g.bias), nb),
        ] {
            let e = relative_error(&a, &n);
            worst = worst.max(e);
            ensure!(e < FD_TOL, "conv {name} gradient, seed {seed}: relative error {e:e}");
        }
    }
    Ok(format!("conv {worst:.1e}"))
}

pub fn dense_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..FD_SEEDS {
        let mut r = rng(100 + seed);
        let (n, fin, fout) = (3, 7, 4);
        let x = uniform_vec(&mut r, n * fin, -1.0, 1.0);
        let w = uniform_vec(&mut r, fout * fin, -1.0, 1.0);
        let b = uniform_vec(&mut r, fout, -1.0, 1.0);
        let up = uniform_vec(&mut r, n * fout, -1.0, 1.0);
        let (x64, w64, b64, up64) = (to_f64(&x), to_f64(&w), to_f64(&b), to_f64(&up));
        let p = DenseParams::new(fout, fin, w, b).unwrap();
        let g = dense_backward_batch(
            &Tensor4::from_vec(Dims4::new(n, fin, 1, 1), x).unwrap(),
            &p,
            &Tensor4::from_vec(Dims4::new(n, fout, 1, 1), up).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let f = |x: &[f64], w: &[f64], b: &[f64]| dot(&dense_ref(n, fin, fout, x, w, b), &up64);
        for (name, a, num) in [
            ("input", to_f64(g.input.data()), numeric_grad(&x64, FD_STEP, |v| f(v, &w64, &b64))),
            ("weights", to_f64(&g.weights), numeric_grad(&w64, FD_STEP, |v| f(&x64, v, &b64))),
            ("bias", to_f64(&g.bias), numeric_grad(&b64, FD_STEP, |v| f(&x64, &w64, v))),
        ] {
            let e = relative_error(&a, &num);
            worst = worst.max(e);
            ensure!(e < FD_TOL, "dense {name} gradient, seed {seed}: relative error {e:e}");
        }
    }
    Ok(format!("dense {worst:.1e}"))
}

pub fn relu_pool_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..FD_SEEDS {
        let mut r = rng(200 + seed);
        let dims = Dims4::new(2, 3, 4, 6);
        // Every value at least 0.05 away from the kink.
        let x: Vec<f32> = (0..dims.len())
            .map(|_| {
                let v: f32 = r.gen_range(0.05..1.0);
                if r.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let t = Tensor4::from_vec(dims, x.clone()).unwrap();
        let up = uniform_vec(&mut r, dims.len(), -1.0, 1.0);
        let up64 = to_f64(&up);
        let g = relu_backward(&t, &Tensor4::from_vec(dims, up).unwrap()).map_err(|e| e.to_string())?;
        let n = numeric_grad(&to_f64(&x), FD_STEP, |v| dot(&relu_ref(v), &up64));
        let e = relative_error(&to_f64(g.data()), &n);
        worst = worst.max(e);
        ensure!(e < FD_TOL, "relu gradient, seed {seed}: relative error {e:e}");

        // Distinct values spaced far wider than the step.
        let mut order: Vec<usize> = (0..dims.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let px: Vec<f32> = order.iter().map(|&i| i as f32 * 0.01).collect();
        let (_, idx) = maxpool2x2(&Tensor4::from_vec(dims, px.clone()).unwrap()).map_err(|e| e.to_string())?;
        let pup = uniform_vec(&mut r, dims.len() / 4, -1.0, 1.0);
        let pup64 = to_f64(&pup);
        let pg = maxpool2x2_backward(&idx, &Tensor4::from_vec(Dims4::new(2, 3, 2, 3), pup).unwrap())
            .map_err(|e| e.to_string())?;
        let n = numeric_grad(&to_f64(&px), FD_STEP, |v| dot(&maxpool_ref(6, 4, 6, v), &pup64));
        let e = relative_error(&to_f64(pg.data()), &n);
        worst = worst.max(e);
        ensure!(e < FD_TOL, "max-pool gradient, seed {seed}: relative error {e:e}");
    }
    Ok(format!("relu/pool {worst:.1e}"))
}

pub fn loss_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..FD_SEEDS {
        let mut r = rng(300 + seed);
        let (n, k) = (4, 10);
        let logits = uniform_vec(&mut r, n * k, -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let (loss, g) = softmax_cross_entropy_batch(
            &Tensor4::from_vec(Dims4::new(n, k, 1, 1), logits.clone()).unwrap(),
            &labels,
        )
        .map_err(|e| e.to_string())?;
        let l64 = to_f64(&logits);
        let expect = cross_entropy_ref(&l64, k, &labels);
        ensure!((loss - expect).abs() < 1e-6, "loss {loss} vs reference {expect}");
        let num = numeric_grad(&l64, FD_STEP, |v| cross_entropy_ref(v, k, &labels));
        let e = relative_error(&to_f64(g.data()), &num);
        worst = worst.max(e);
        ensure!(e < FD_TOL, "cross-entropy gradient, seed {seed}: relative error {e:e}");
    }
    Ok(format!("loss {worst:.1e}"))
}

pub fn fd_spec() -> NetworkSpec {
    NetworkSpec {
        name: "fd".into(),
        input: InputShape { channels: 1, height: 10, width: 10 },
        nonlinearity: Nonlinearity::Relu,
        pooling: Pooling::Max2x2,
        layers: vec![
            LayerSpec::Conv { out_channels: 2, kernel_size: 3, padding: 0, pool: true },
            LayerSpec::Conv { out_channels: 3, kernel_size: 3, padding: 1, pool: true },
            LayerSpec::Dense { out_features: 5, activation: true },
            LayerSpec::Dense { out_features: 4, activation: false },
        ],
    }
}

/// Loss of the [`fd_spec`] network from flat `f64` parameters, via the reference ops.
fn fd_reference_loss(params: &[Vec<f64>], x: &[f64], n: usize, labels: &[usize]) -> f64 {
    let s1 = ConvShape { n, c: 1, h: 10, w: 10, k: 2, kh: 3, kw: 3, pad: 0 };
    let a = maxpool_ref(n * 2, 8, 8, &relu_ref(&conv_ref(s1, x, &params[0], &params[1])));
    let s2 = ConvShape { n, c: 2, h: 4, w: 4, k: 3, kh: 3, kw: 3, pad: 1 };
    let a = maxpool_ref(n * 3, 4, 4, &relu_ref(&conv_ref(s2, &a, &params[2], &params[3])));
    let a = relu_ref(&dense_ref(n, 12, 5, &a, &params[4], &params[5]));
    let logits = dense_ref(n, 5, 4, &a, &params[6], &params[7]);
    cross_entropy_ref(&logits, 4, labels)
}

/// Full backpropagation through a small network. A step that crosses a ReLU
/// or max-pool switch makes the difference quotient depend on the step; such
/// coordinates (detected by comparing steps h and h/2) are left out, and at
/// most a fifth of them may be.
pub fn network_gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    for seed in 0..FD_SEEDS {
        let mut net = Network::init(&fd_spec(), seed).unwrap();
        let mut r = rng(400 + seed);
        for p in &mut net.params {
            let (_, b) = p.buffers_mut();
            b.iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
        let n = 3;
        let x = uniform_vec(&mut r, n * 100, 0.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
        let batch = LabeledBatch::new(Tensor4::from_vec(Dims4::new(n, 1, 10, 10), x.clone()).unwrap(), labels.clone())
            .unwrap();
        let (loss, grads) = loss_and_gradients(&net, Execution::Sequential, &batch).map_err(|e| e.to_string())?;
        let flat: Vec<Vec<f64>> = net
            .params
            .iter()
            .flat_map(|p: &LayerParams| {
                let (w, b) = p.buffers();
                [to_f64(w), to_f64(b)]
            })
            .collect();
        let x64 = to_f64(&x);
        let expect = fd_reference_loss(&flat, &x64, n, &labels);
        ensure!((loss - expect).abs() < 1e-5, "seed {seed}: loss {loss} vs reference {expect}");

        let analytic: Vec<f64> = grads.iter().flat_map(|(w, b)| to_f64(w).into_iter().chain(to_f64(b))).collect();
        let (mut numeric, mut halved) = (Vec::new(), Vec::new());
        for t in 0..flat.len() {
            for (h, sink) in [(FD_STEP, &mut numeric), (FD_STEP / 2.0, &mut halved)] {
                sink.extend(numeric_grad(&flat[t], h, |v| {
                    let mut p = flat.clone();
                    p[t] = v.to_vec();
                    fd_reference_loss(&p, &x64, n, &labels)
                }));
            }
        }
        let smooth: Vec<usize> = (0..numeric.len())
            .filter(|&i| (numeric[i] - halved[i]).abs() <= 1e-6 + 1e-4 * numeric[i].abs())
            .collect();
        ensure!(smooth.len() * 5 >= numeric.len() * 4, "seed {seed}: {} of {} coordinates straddle a kink", numeric.len() - smooth.len(), numeric.len());
        skipped += numeric.len() - smooth.len();
        let pick = |v: &[f64]| smooth.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let e = relative_error(&pick(&analytic), &pick(&numeric));
        worst = worst.max(e);
        ensure!(e < FD_TOL, "network gradient, seed {seed}: relative error {e:e}");
    }
    Ok(format!("network {worst:.1e} ({skipped} kink coordinates skipped)"))
}

pub fn all_gradients() -> Outcome {
    let parts = [conv_gradients()?, dense_gradients()?, relu_pool_gradients()?, loss_gradients()?, network_gradients()?];
    Ok(format!("max relative errors: {}", parts.join(", ")))
}

pub fn random_map(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, lo: f32, hi: f32) -> Map2d {
    Map2d::new(h, w, uniform_vec(r, h * w, lo, hi)).unwrap()
}

/// CS and NCC: bounds, symmetry, invariances and agreement with the oracles.
pub fn similarity_properties(cases: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = r.gen_range(1..64);
        let a = uniform_vec(&mut r, n, -5.0, 5.0);
        let b = uniform_vec(&mut r, n, -5.0, 5.0);
        let s: f32 = r.gen_range(0.01..100.0);
        let cs = cosine_similarity(&a, &b);
        ensure!(cs.abs() <= 1.0 + BOUND_SLACK, "case {case}: CS {cs} out of bounds");
        ensure!(cs == cosine_similarity(&b, &a), "case {case}: CS not symmetric");
        let oracle = cosine_ref(&to_f64(&a), &to_f64(&b));
        worst = worst.max((cs - oracle).abs());
        let scaled: Vec<f32> = b.iter().map(|v| v * s).collect();
        let both: Vec<f32> = a.iter().map(|v| v * s).collect();
        ensure!((cosine_similarity(&a, &scaled) - cs).abs() < 1e-5, "case {case}: CS not scale invariant");
        ensure!((cosine_similarity(&both, &scaled) - cs).abs() < 1e-5, "case {case}: CS not scale invariant");

        let (h, w) = (r.gen_range(2..8), r.gen_range(2..8));
        let ma = random_map(&mut r, h, w, -1.0, 1.0);
        let mb = random_map(&mut r, h, w, -1.0, 1.0);
        for (mode, lag) in [(NccMode::MaxOverLags, true), (NccMode::ZeroLag, false)] {
            let v = ncc(&ma, &mb, mode).map_err(|e| e.to_string())?;
            ensure!(v.abs() <= 1.0 + BOUND_SLACK, "case {case}: NCC {v} out of bounds");
            ensure!(v == ncc(&mb, &ma, mode).unwrap(), "case {case}: NCC not symmetric");
            let o = ncc_ref(&to_f64(&ma.data), &to_f64(&mb.data), h, w, lag);
            worst = worst.max((v - o).abs());
            ensure!((v - o).abs() < 1e-9, "case {case}: NCC {v} vs oracle {o}");
            ensure!((ncc(&ma, &ma, mode).unwrap() - 1.0).abs() < 1e-9, "case {case}: self NCC not 1");
        }
        let gain: f32 = r.gen_range(0.5..2.0);
        let offset: f32 = r.gen_range(-1.0..1.0);
        let moved = Map2d::new(h, w, mb.data.iter().map(|x| gain * x + offset).collect()).unwrap();
        let (v0, v1) = (ncc(&ma, &mb, NccMode::MaxOverLags).unwrap(), ncc(&ma, &moved, NccMode::MaxOverLags).unwrap());
        ensure!((v0 - v1).abs() < 1e-5, "case {case}: NCC not affine invariant ({v0} vs {v1})");

        let maps: Vec<Map2d> = (0..r.gen_range(2..6)).map(|_| random_map(&mut r, 6, 6, -1.0, 1.0)).collect();
        let m = ncc_matrix(&maps, NccMode::MaxOverLags, Execution::Parallel).map_err(|e| e.to_string())?;
        for p in 0..maps.len() {
            ensure!(m.get(p, p) == 1.0, "case {case}: diagonal not 1");
            for q in 0..maps.len() {
                ensure!(m.get(p, q) == m.get(q, p), "case {case}: matrix not symmetric");
                if p != q {
                    let o = ncc_ref(&to_f64(&maps[p].data), &to_f64(&maps[q].data), 6, 6, true);
                    ensure!((m.get(p, q) - o).abs() < 1e-6, "case {case}: matrix entry vs double loop");
                }
            }
        }
    }
    Ok(format!("{cases} cases, max deviation from oracles {worst:.1e}"))
}

fn plan_net(c1: usize, seed: u64) -> Network {
    let spec = NetworkSpec {
        name: "plan".into(),
        input: InputShape { channels: 1, height: 12, width: 12 },
        nonlinearity: Nonlinearity::Relu,
        pooling: Pooling::Max2x2,
        layers: vec![
            LayerSpec::Conv { out_channels: c1, kernel_size: 3, padding: 1, pool: true },
            LayerSpec::Conv { out_channels: 3, kernel_size: 3, padding: 1, pool: true },
            LayerSpec::Dense { out_features: 4, activation: false },
        ],
    };
    Network::init(&spec, seed).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Random perturbation plans: only channel `k` of the target layer's input
/// changes, earlier layers are untouched, and the channel's values are
/// permuted (per plane across the batch, or per sample across positions).
pub fn shuffle_properties(plans: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    for case in 0..plans {
        let c1 = r.gen_range(1..5);
        let n = r.gen_range(1..6);
        let layer = r.gen_range(1..=2);
        let net = plan_net(c1, r.gen());
        let images = Tensor4::from_vec(Dims4::new(n, 1, 12, 12), uniform_vec(&mut r, n * 144, 0.0, 1.0)).unwrap();
        let batch = LabeledBatch::new(images, vec![0; n]).unwrap();
        let channels = if layer == 1 { 1 } else { c1 };
        let pixel = r.gen_bool(0.5);
        let mut plan = PerturbationPlan::new(
            layer,
            r.gen_range(0..channels),
            if pixel { ShuffleMode::Pixel } else { ShuffleMode::Channel },
            r.gen(),
        );
        plan.pixel_scope = if r.gen_bool(0.5) { PixelScope::Shared } else { PixelScope::PerSample };
        let pass = forward_with_perturbation(&net, &batch, &plan, Execution::Sequential).map_err(|e| e.to_string())?;
        let pos = layer - 1;
        let (clean, pert) = (pass.clean.layer_input(pos), pass.perturbed.layer_input(pos));
        let k = plan.channel;
        ensure!(pass.perturbed.layers[..pos] == pass.clean.layers[..pos], "case {case}: earlier layers changed");
        for b in 0..n {
            for c in (0..clean.dims().c).filter(|&c| c != k) {
                ensure!(pert.plane(b, c) == clean.plane(b, c), "case {case}: channel {c} changed");
            }
        }
        if pixel {
            for b in 0..n {
                let (mut x, mut y) = (bits(clean.plane(b, k)), bits(pert.plane(b, k)));
                x.sort_unstable();
                y.sort_unstable();
                ensure!(x == y, "case {case}: pixel multiset of sample {b} changed");
            }
        } else {
            let mut x: Vec<Vec<u32>> = (0..n).map(|b| bits(clean.plane(b, k))).collect();
            let mut y: Vec<Vec<u32>> = (0..n).map(|b| bits(pert.plane(b, k))).collect();
            x.sort();
            y.sort();
            ensure!(x == y, "case {case}: multiset of channel planes changed");
        }
    }
    Ok(format!("{plans} plans"))
}

pub fn idx_round_trip(cases: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    for case in 0..cases {
        let (rows, cols, count) = (r.gen_range(1..30), r.gen_range(1..30), r.gen_range(0..8));
        let pixels: Vec<u8> = (0..rows * cols * count).map(|_| r.gen()).collect();
        let labels: Vec<u8> = (0..count).map(|_| r.gen_range(0..10)).collect();
        let images = IdxImages { count, rows, cols, pixels };
        let bytes = encode_idx_images(&images);
        let back = parse_idx_images(&bytes).map_err(|e| e.to_string())?;
        ensure!(back == images && encode_idx_images(&back) == bytes, "case {case}: image round trip differs");
        let lb = encode_idx_labels(&labels);
        let back = parse_idx_labels(&lb).map_err(|e| e.to_string())?;
        ensure!(back == labels && encode_idx_labels(&back) == lb, "case {case}: label round trip differs");
    }
    Ok(format!("{cases} image/label files byte-exact"))
}

/// Vertical then horizontal Gaussian against the reverse order, plus ten
/// random odd kernel pairs.
pub fn cascade_commutes() -> Outcome {
    let mut r = rng(5);
    let input = random_map(&mut r, 32, 32, 0.0, 1.0);
    let g = cascade_check(&gaussian_vertical(5, 1.0), &gaussian_horizontal(5, 1.0), &input).map_err(|e| e.to_string())?;
    ensure!(g.max_interior_difference < CASCADE_TOL, "Gaussian cascade differs by {:e}", g.max_interior_difference);
    let (v, h) = (to_f64(&gaussian_vertical(5, 1.0).data), to_f64(&gaussian_horizontal(5, 1.0).data));
    let separable = same_ref(&same_ref(&to_f64(&input.data), 32, 32, &v, 5, 5), 32, 32, &h, 5, 5);
    let off = g.out12.data.iter().zip(&separable).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    ensure!(off < CASCADE_TOL, "Gaussian cascade differs from the separable oracle by {off:e}");
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(1000 + seed);
        let sizes = [1usize, 3, 5, 7];
        let (a, b) = (sizes[r.gen_range(0..4)], sizes[r.gen_range(0..4)]);
        let k1 = random_map(&mut r, a, a, -1.0, 1.0);
        let k2 = random_map(&mut r, b, b, -1.0, 1.0);
        let input = random_map(&mut r, 32, 32, 0.0, 1.0);
        let res = cascade_check(&k1, &k2, &input).map_err(|e| e.to_string())?;
        worst = worst.max(res.max_interior_difference);
        ensure!(res.max_interior_difference < CASCADE_TOL, "pair {seed} ({a}x{a}, {b}x{b}) differs by {:e}", res.max_interior_difference);
        let expect = same_ref(&same_ref(&to_f64(&input.data), 32, 32, &to_f64(&k1.data), a, a), 32, 32, &to_f64(&k2.data), b, b);
        let off = res.out12.data.iter().zip(&expect).map(|(g, e)| (*g as f64 - e).abs()).fold(0.0, f64::max);
        ensure!(off < CASCADE_TOL, "pair {seed}: cascade differs from the oracle by {off:e}");
    }
    Ok(format!(
        "Gaussian pair {:.1e}, worst of 10 random pairs {worst:.1e} (tolerance {CASCADE_TOL:e})",
        g.max_interior_difference
    ))
}
