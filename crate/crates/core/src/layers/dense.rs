use serde::{Deserialize, Serialize};

use super::gemm::sgemm;
use crate::error::{Error, Result};
use crate::tensor::{Dims4, Tensor4};

/// Affine map `W x + b` with `W` stored row-major as `out_features x in_features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub out_features: usize,
    pub in_features: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseParams {
    pub fn new(out_features: usize, in_features: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weights.len() != out_features * in_features || bias.len() != out_features {
            return Err(Error::shape(format!(
                "dense {out_features}x{in_features}: got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(DenseParams {
            out_features,
            in_features,
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Single-vector affine map with `f64` accumulation.
pub fn dense(input: &[f32], params: &DenseParams) -> Result<Vec<f32>> {
    if input.len() != params.in_features {
        return Err(Error::shape(format!(
            "dense: input length {} but layer expects {}",
            input.len(),
            params.in_features
        )));
    }
    Ok(params
        .weights
        .chunks(params.in_features.max(1))
        .take(params.out_features)
        .zip(&params.bias)
        .map(|(row, &b)| {
            let dot: f64 = row.iter().zip(input).map(|(&w, &x)| w as f64 * x as f64).sum();
            (dot + b as f64) as f32
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor4,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Backward of [`dense`] for one vector.
pub fn dense_backward(input: &[f32], params: &DenseParams, upstream: &[f32]) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let x = Tensor4::from_vec(Dims4::new(1, input.len(), 1, 1), input.to_vec())?;
    let up = Tensor4::from_vec(Dims4::new(1, upstream.len(), 1, 1), upstream.to_vec())?;
    let g = dense_backward_batch(&x, params, &up)?;
    Ok((g.input.into_vec(), g.weights, g.bias))
}

/// Apply the layer to every sample (each flattened to `c*h*w`); output is `(n, out, 1, 1)`.
pub fn dense_batch(input: &Tensor4, params: &DenseParams) -> Result<Tensor4> {
    let d = input.dims();
    if d.sample_len() != params.in_features {
        return Err(Error::shape(format!(
            "dense: samples have {} features but layer expects {}",
            d.sample_len(),
            params.in_features
        )));
    }
    let mut out = vec![0.0; d.n * params.out_features];
    for row in out.chunks_mut(params.out_features.max(1)) {
        row.copy_from_slice(&params.bias);
    }
    sgemm(d.n, params.in_features, params.out_features, input.data(), false, &params.weights, true, 1.0, &mut out);
    Tensor4::from_vec(Dims4::new(d.n, params.out_features, 1, 1), out)
}

pub fn dense_backward_batch(input: &Tensor4, params: &DenseParams, upstream: &Tensor4) -> Result<DenseGrads> {
    let d = input.dims();
    if d.sample_len() != params.in_features
        || upstream.dims() != Dims4::new(d.n, params.out_features, 1, 1)
    {
        return Err(Error::shape(format!(
            "dense backward: input {} / upstream {} vs layer {}x{}",
            d,
            upstream.dims(),
            params.out_features,
            params.in_features
        )));
    }
    let (n, fin, fout) = (d.n, params.in_features, params.out_features);
    let mut gin = vec![0.0; n * fin];
    sgemm(n, fout, fin, upstream.data(), false, &params.weights, false, 0.0, &mut gin);
    let mut gw = vec![0.0; fout * fin];
    sgemm(fout, n, fin, upstream.data(), true, input.data(), false, 0.0, &mut gw);
    let mut gb = vec![0.0f64; fout];
    for row in upstream.data().chunks(fout.max(1)) {
        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
    }
    Ok(DenseGrads {
        input: Tensor4::from_vec(d, gin)?,
        weights: gw,
        bias: gb.into_iter().map(|v| v as f32).collect(),
    })
}
