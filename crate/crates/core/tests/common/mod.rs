//! Reference implementations used as test oracles. Everything here is a
//! direct loop over the definitions in `f64`, sharing no code with the crate.

#![allow(dead_code)]

pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Shape of a reference convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h + 2 * self.pad - self.kh + 1, self.w + 2 * self.pad - self.kw + 1)
    }
}

/// `out[n][k][y][x] = b[k] + sum_{c,i,j} w[k][c][i][j] * in[n][c][y+i-pad][x+j-pad]`.
pub fn conv_ref(s: ConvShape, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ho, wo) = s.out_hw();
    let mut out = vec![0.0; s.n * s.k * ho * wo];
    for n in 0..s.n {
        for k in 0..s.k {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = bias[k];
                    for c in 0..s.c {
                        for i in 0..s.kh {
                            for j in 0..s.kw {
                                let iy = (y + i) as isize - s.pad as isize;
                                let ix = (x + j) as isize - s.pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let v = input[((n * s.c + c) * s.h + iy as usize) * s.w + ix as usize];
                                acc += weights[((k * s.c + c) * s.kh + i) * s.kw + j] * v;
                            }
                        }
                    }
                    out[((n * s.k + k) * ho + y) * wo + x] = acc;
                }
            }
        }
    }
    out
}

/// Row-major `out x in` weights.
pub fn dense_ref(n: usize, fin: usize, fout: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * fout];
    for s in 0..n {
        for o in 0..fout {
            out[s * fout + o] = b[o] + (0..fin).map(|i| w[o * fin + i] * x[s * fin + i]).sum::<f64>();
        }
    }
    out
}

pub fn relu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// 2x2 max pooling with stride 2 over `(n*c)` planes of `h x w`.
pub fn maxpool_ref(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        for y in 0..ho {
            for xx in 0..wo {
                let at = |dy: usize, dx: usize| x[(p * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(p * ho + y) * wo + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

/// Mean softmax cross-entropy over rows of `logits`.
pub fn cross_entropy_ref(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.chunks(classes).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na * nb),
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    if va <= 1e-20 * n * ma * ma || vb <= 1e-20 * n * mb * mb || va == 0.0 || vb == 0.0 {
        return None;
    }
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Some(cov / (va * vb).sqrt())
}

/// Lag-maximized Pearson correlation of two `h x w` maps, brute force.
/// With `max_lag = false` only the aligned maps are correlated.
pub fn ncc_ref(a: &[f64], b: &[f64], h: usize, w: usize, max_lag: bool) -> f64 {
    let whole_a = pearson(a, a).is_none();
    let whole_b = pearson(b, b).is_none();
    if whole_a || whole_b {
        return if whole_a && whole_b { 1.0 } else { 0.0 };
    }
    let (ry, rx) = if max_lag { ((h / 2) as isize, (w / 2) as isize) } else { (0, 0) };
    let mut best: Option<f64> = None;
    for dy in -ry..=ry {
        for dx in -rx..=rx {
            let (mut va, mut vb) = (Vec::new(), Vec::new());
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (by, bx) = (y + dy, x + dx);
                    if by < 0 || bx < 0 || by >= h as isize || bx >= w as isize {
                        continue;
                    }
                    va.push(a[y as usize * w + x as usize]);
                    vb.push(b[by as usize * w + bx as usize]);
                }
            }
            if let Some(r) = pearson(&va, &vb) {
                best = Some(best.map_or(r, |m: f64| m.max(r)));
            }
        }
    }
    best.unwrap_or(0.0)
}

/// Same-size zero-padded correlation of an `h x w` map with an odd kernel.
pub fn same_ref(input: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    let (ry, rx) = (kh / 2, kw / 2);
    let (ph, pw) = (h + 2 * ry, w + 2 * rx);
    let mut padded = vec![0.0; ph * pw];
    for y in 0..h {
        for x in 0..w {
            padded[(y + ry) * pw + x + rx] = input[y * w + x];
        }
    }
    let s = ConvShape { n: 1, c: 1, h: ph, w: pw, k: 1, kh, kw, pad: 0 };
    conv_ref(s, &padded, k, &[0.0])
}
