//! Similarity measures: cosine similarity between activations, normalized
//! cross-correlation between response maps, and one-vs-all NCC matrices.
//!
//! Degenerate operands (zero norm for cosine similarity, constant maps for
//! NCC) compare as 1.0 when both sides are degenerate and 0.0 when only one
//! is, so an unchanged all-zero activation still reads as "identical".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tensor::{Map2d, Tensor4};

/// `a.b / (|a| |b|)` over all elements, accumulated in `f64`.
///
/// Panics if the slices differ in length.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine similarity needs equal lengths");
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Cosine similarity of corresponding channels of two activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCs {
    /// Per channel, flattened over batch and space.
    pub per_channel: Vec<f64>,
    /// Per channel, the mean over samples of the per-sample similarity.
    pub per_channel_sample_mean: Vec<f64>,
    /// Mean of `per_channel`.
    pub mean: f64,
}

pub fn channelwise_cs_tensors(clean: &Tensor4, perturbed: &Tensor4) -> Result<ChannelCs> {
    if clean.dims() != perturbed.dims() {
        return Err(Error::shape(format!(
            "activation records differ: {} vs {}",
            clean.dims(),
            perturbed.dims()
        )));
    }
    let d = clean.dims();
    let mut per_channel = Vec::with_capacity(d.c);
    let mut per_sample = Vec::with_capacity(d.c);
    for c in 0..d.c {
        per_channel.push(cosine_similarity(&clean.channel_values(c), &perturbed.channel_values(c)));
        let s: f64 = (0..d.n)
            .map(|n| cosine_similarity(clean.plane(n, c), perturbed.plane(n, c)))
            .sum();
        per_sample.push(if d.n == 0 { 1.0 } else { s / d.n as f64 });
    }
    let mean = if d.c == 0 {
        1.0
    } else {
        per_channel.iter().sum::<f64>() / d.c as f64
    };
    Ok(ChannelCs {
        per_channel,
        per_channel_sample_mean: per_sample,
        mean,
    })
}

/// Channelwise similarity of the output of the layer at `position` in two
/// records of the same batch.
pub fn channelwise_cs(
    clean: &crate::model::ActivationRecord,
    perturbed: &crate::model::ActivationRecord,
    position: usize,
) -> Result<ChannelCs> {
    let (Some(a), Some(b)) = (clean.layers.get(position), perturbed.layers.get(position)) else {
        return Err(Error::shape(format!("records have no layer at position {position}")));
    };
    channelwise_cs_tensors(a.output(), b.output())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NccMode {
    /// Best correlation over spatial shifts of up to half of each map dimension.
    #[default]
    MaxOverLags,
    /// Correlation of the aligned maps only.
    ZeroLag,
}

/// Mean and sum of squared deviations, or `None` when the values are constant.
fn centered(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let ssd: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let std = (ssd / n as f64).sqrt();
    if std <= 1e-10 * mean.abs() || ssd == 0.0 {
        None
    } else {
        Some((mean, ssd))
    }
}

fn is_constant(m: &Map2d) -> bool {
    centered(m.data.iter().map(|&v| v as f64)).is_none()
}

/// Pearson coefficient between `a[y][x]` and `b[y+dy][x+dx]` over their overlap.
fn lagged_pearson(a: &Map2d, b: &Map2d, dy: isize, dx: isize) -> Option<f64> {
    let (h, w) = (a.height as isize, a.width as isize);
    let (y0, y1) = (0.max(-dy), h.min(h - dy));
    let (x0, x1) = (0.max(-dx), w.min(w - dx));
    if y0 >= y1 || x0 >= x1 {
        return None;
    }
    let coords = (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (y, x)));
    let av = coords.clone().map(|(y, x)| a.at(y as usize, x as usize) as f64);
    let bv = coords
        .clone()
        .map(|(y, x)| b.at((y + dy) as usize, (x + dx) as usize) as f64);
    let (ma, sa) = centered(av.clone())?;
    let (mb, sb) = centered(bv.clone())?;
    let cov: f64 = av.zip(bv).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Some((cov / (sa.sqrt() * sb.sqrt())).clamp(-1.0, 1.0))
}

/// Normalized cross-correlation of two equally sized maps.
///
/// In [`NccMode::MaxOverLags`] this is the largest zero-mean correlation
/// coefficient over all integer shifts `|dy| <= h/2`, `|dx| <= w/2`, each
/// computed on the overlapping region. Shifts whose overlap is constant in
/// either map are skipped.
pub fn ncc(a: &Map2d, b: &Map2d, mode: NccMode) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!(
            "ncc: maps are {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    match (is_constant(a), is_constant(b)) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let value = match mode {
        NccMode::ZeroLag => lagged_pearson(a, b, 0, 0).unwrap_or(0.0),
        NccMode::MaxOverLags => {
            let (ry, rx) = ((a.height / 2) as isize, (a.width / 2) as isize);
            let mut best: Option<f64> = None;
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    if let Some(r) = lagged_pearson(a, b, dy, dx) {
                        best = Some(best.map_or(r, |m| m.max(r)));
                    }
                }
            }
            best.unwrap_or(0.0)
        }
    };
    Ok(value)
}

/// Square one-vs-all NCC matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NccMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl NccMatrix {
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[p * self.size + q]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.size.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::shape("NCC matrix rows must form a square"));
        }
        Ok(NccMatrix {
            size,
            values: rows.concat(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("map");
        for q in 0..self.size {
            out.push_str(&format!(",{q}"));
        }
        out.push('\n');
        for (p, row) in self.rows().iter().enumerate() {
            out.push_str(&p.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise NCC among `maps`. The diagonal is exactly 1 and the matrix is
/// exactly symmetric (upper triangle computed, then mirrored).
pub fn ncc_matrix(maps: &[Map2d], mode: NccMode, exec: Execution) -> Result<NccMatrix> {
    let n = maps.len();
    if n == 0 {
        return Err(Error::InvalidArgument("NCC matrix needs at least one map".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
        .collect();
    let values = exec.map(&pairs, |&(p, q)| ncc(&maps[p], &maps[q], mode));
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    for (&(p, q), v) in pairs.iter().zip(values) {
        let v = v?;
        m[p * n + q] = v;
        m[q * n + p] = v;
    }
    Ok(NccMatrix { size: n, values: m })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Redundancy {
    pub threshold: f64,
    /// Unordered off-diagonal pairs with NCC above the threshold.
    pub pairs_above: usize,
    pub total_pairs: usize,
    pub fraction: f64,
    /// Per map, the largest NCC against any other map (-1 when it has none).
    pub per_map_max: Vec<f64>,
}

pub fn redundancy_count(matrix: &NccMatrix, threshold: f64) -> Result<Redundancy> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let n = matrix.size;
    let mut pairs_above = 0;
    let mut per_map_max = vec![-1.0f64; n];
    for p in 0..n {
        for q in 0..n {
            if p == q {
                continue;
            }
            let v = matrix.get(p, q);
            per_map_max[p] = per_map_max[p].max(v);
            if q > p && v > threshold {
                pairs_above += 1;
            }
        }
    }
    let total_pairs = n * n.saturating_sub(1) / 2;
    Ok(Redundancy {
        threshold,
        pairs_above,
        total_pairs,
        fraction: if total_pairs == 0 {
            0.0
        } else {
            pairs_above as f64 / total_pairs as f64
        },
        per_map_max,
    })
}
