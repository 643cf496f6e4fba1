//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::gemm::sgemm;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tensor::{Dims4, Map2d, Tensor4};

/// Samples processed per im2col block. Gradient partial sums are formed per
/// block and reduced in block order, so the result does not depend on the
/// execution policy.
pub const GRAD_CHUNK: usize = 16;

/// Weights `(out_channels, in_channels, kh, kw)` plus one bias per output channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl KernelBank {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel bank dimensions must be positive, got {out_channels}x{in_channels}x{kh}x{kw}"
            )));
        }
        if weights.len() != out_channels * in_channels * kh * kw || bias.len() != out_channels {
            return Err(Error::shape(format!(
                "kernel bank {out_channels}x{in_channels}x{kh}x{kw}: got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(KernelBank {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        KernelBank {
            out_channels,
            in_channels,
            kh,
            kw,
            weights: vec![0.0; out_channels * in_channels * kh * kw],
            bias: vec![0.0; out_channels],
        }
    }

    /// Single-kernel bank `1x1xhxw` from a map.
    pub fn from_map(map: &Map2d) -> Self {
        KernelBank {
            out_channels: 1,
            in_channels: 1,
            kh: map.height,
            kw: map.width,
            weights: map.data.clone(),
            bias: vec![0.0],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    pub fn weight(&self, k: usize, c: usize, y: usize, x: usize) -> f32 {
        self.weights[((k * self.in_channels + c) * self.kh + y) * self.kw + x]
    }

    /// The `kh x kw` kernel connecting input channel `c` to output channel `k`.
    pub fn kernel(&self, k: usize, c: usize) -> Map2d {
        let len = self.kh * self.kw;
        let start = (k * self.in_channels + c) * len;
        Map2d {
            height: self.kh,
            width: self.kw,
            data: self.weights[start..start + len].to_vec(),
        }
    }

    /// Bank restricted to one input channel, with zero bias.
    pub fn input_channel_slice(&self, c: usize) -> KernelBank {
        let len = self.kh * self.kw;
        let mut weights = Vec::with_capacity(self.out_channels * len);
        for k in 0..self.out_channels {
            let start = (k * self.in_channels + c) * len;
            weights.extend_from_slice(&self.weights[start..start + len]);
        }
        KernelBank {
            out_channels: self.out_channels,
            in_channels: 1,
            kh: self.kh,
            kw: self.kw,
            weights,
            bias: vec![0.0; self.out_channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub stride: usize,
    /// Symmetric zero padding on every side.
    pub padding: usize,
    /// Whether callers assembling activation records keep the
    /// pre-nonlinearity output of this convolution.
    pub capture_preactivation: bool,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            stride: 1,
            padding: 0,
            capture_preactivation: true,
        }
    }
}

impl ConvConfig {
    pub fn with_padding(padding: usize) -> Self {
        ConvConfig {
            padding,
            ..Default::default()
        }
    }

    /// Output spatial size for an `h x w` input and `kh x kw` kernel.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let axis = |size: usize, k: usize, name: &str| -> Result<usize> {
            let padded = size + 2 * self.padding;
            if padded < k || (padded - k) % self.stride != 0 {
                return Err(Error::shape(format!(
                    "{name}: input {size} with padding {} does not tile kernel {k} at stride {}",
                    self.padding, self.stride
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((axis(h, kh, "height")?, axis(w, kw, "width")?))
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: Dims4, kernels: &KernelBank, cfg: &ConvConfig) -> Result<Self> {
        if input.c != kernels.in_channels {
            return Err(Error::shape(format!(
                "conv2d: input has {} channels but kernels expect {}",
                input.c, kernels.in_channels
            )));
        }
        let (ho, wo) = cfg.output_size(input.h, input.w, kernels.kh, kernels.kw)?;
        Ok(Geometry {
            c: input.c,
            h: input.h,
            w: input.w,
            kh: kernels.kh,
            kw: kernels.kw,
            ho,
            wo,
            stride: cfg.stride,
            pad: cfg.padding,
        })
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.pad)?;
        (pos < size).then_some(pos)
    }

    /// Unfold `samples` (each `c*h*w` long, concatenated) into a
    /// `patch x (count * ho * wo)` matrix.
    fn im2col(&self, samples: &[f32], count: usize, cols: &mut [f32]) {
        let plane_out = self.out_plane();
        let width = count * plane_out;
        let sample_len = self.c * self.h * self.w;
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst_row = &mut cols[row * width..(row + 1) * width];
                    for b in 0..count {
                        let src = &samples[b * sample_len + c * self.h * self.w..][..self.h * self.w];
                        let dst = &mut dst_row[b * plane_out..(b + 1) * plane_out];
                        for oy in 0..self.ho {
                            let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                            match self.source(oy, ky, self.h) {
                                None => line.fill(0.0),
                                Some(iy) => {
                                    let src_line = &src[iy * self.w..(iy + 1) * self.w];
                                    for (ox, v) in line.iter_mut().enumerate() {
                                        *v = match self.source(ox, kx, self.w) {
                                            Some(ix) => src_line[ix],
                                            None => 0.0,
                                        };
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a `patch x (count * ho * wo)` matrix back onto `count` samples.
    fn col2im(&self, cols: &[f32], count: usize, samples: &mut [f32]) {
        let plane_out = self.out_plane();
        let width = count * plane_out;
        let sample_len = self.c * self.h * self.w;
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src_row = &cols[row * width..(row + 1) * width];
                    for b in 0..count {
                        let dst = &mut samples[b * sample_len + c * self.h * self.w..][..self.h * self.w];
                        let src = &src_row[b * plane_out..(b + 1) * plane_out];
                        for oy in 0..self.ho {
                            let Some(iy) = self.source(oy, ky, self.h) else {
                                continue;
                            };
                            for ox in 0..self.wo {
                                if let Some(ix) = self.source(ox, kx, self.w) {
                                    dst[iy * self.w + ix] += src[oy * self.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor4, kernels: &KernelBank, cfg: &ConvConfig) -> Result<Tensor4> {
    conv2d_with(Execution::default(), input, kernels, cfg)
}

/// Cross-correlate every sample with every kernel and add the bias.
pub fn conv2d_with(
    exec: Execution,
    input: &Tensor4,
    kernels: &KernelBank,
    cfg: &ConvConfig,
) -> Result<Tensor4> {
    let dims = input.dims();
    let g = Geometry::new(dims, kernels, cfg)?;
    let k_out = kernels.out_channels;
    let plane_out = g.out_plane();
    let per_sample_out = k_out * plane_out;
    let mut out = Tensor4::zeros(Dims4::new(dims.n, k_out, g.ho, g.wo));
    let sample_len = dims.sample_len();

    exec.for_each_chunk_mut(out.data_mut(), GRAD_CHUNK * per_sample_out, |ci, out_chunk| {
        let count = out_chunk.len() / per_sample_out;
        let start = ci * GRAD_CHUNK;
        let samples = &input.data()[start * sample_len..(start + count) * sample_len];
        let width = count * plane_out;
        let mut cols = vec![0.0; g.patch() * width];
        g.im2col(samples, count, &mut cols);
        let mut prod = vec![0.0; k_out * width];
        sgemm(k_out, g.patch(), width, &kernels.weights, false, &cols, false, 0.0, &mut prod);
        for b in 0..count {
            for k in 0..k_out {
                let src = &prod[k * width + b * plane_out..][..plane_out];
                let dst = &mut out_chunk[(b * k_out + k) * plane_out..][..plane_out];
                let bias = kernels.bias[k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    /// Gradient with respect to the convolution input; `None` when not requested.
    pub input: Option<Tensor4>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradients of `sum(upstream * conv2d(input))` with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor4,
    kernels: &KernelBank,
    cfg: &ConvConfig,
    upstream: &Tensor4,
) -> Result<ConvGrads> {
    conv2d_backward_with(Execution::default(), input, kernels, cfg, upstream, true)
}

struct ChunkGrads {
    weights: Vec<f32>,
    bias: Vec<f64>,
    input: Vec<f32>,
}

pub fn conv2d_backward_with(
    exec: Execution,
    input: &Tensor4,
    kernels: &KernelBank,
    cfg: &ConvConfig,
    upstream: &Tensor4,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let dims = input.dims();
    let g = Geometry::new(dims, kernels, cfg)?;
    let k_out = kernels.out_channels;
    let expected = Dims4::new(dims.n, k_out, g.ho, g.wo);
    if upstream.dims() != expected {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient is {} but the output is {expected}",
            upstream.dims()
        )));
    }
    let plane_out = g.out_plane();
    let sample_len = dims.sample_len();
    let patch = g.patch();
    let chunks = dims.n.div_ceil(GRAD_CHUNK);

    let partials = exec.map_range(chunks, |ci| {
        let start = ci * GRAD_CHUNK;
        let count = GRAD_CHUNK.min(dims.n - start);
        let width = count * plane_out;
        let samples = &input.data()[start * sample_len..(start + count) * sample_len];
        let mut cols = vec![0.0; patch * width];
        g.im2col(samples, count, &mut cols);

        let mut dmat = vec![0.0; k_out * width];
        let mut bias = vec![0.0f64; k_out];
        for b in 0..count {
            for (k, acc) in bias.iter_mut().enumerate() {
                let src = upstream.plane(start + b, k);
                dmat[k * width + b * plane_out..][..plane_out].copy_from_slice(src);
                *acc += src.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let mut weights = vec![0.0; k_out * patch];
        sgemm(k_out, width, patch, &dmat, false, &cols, true, 0.0, &mut weights);

        let mut grad_input = Vec::new();
        if want_input_grad {
            let mut gcols = vec![0.0; patch * width];
            sgemm(patch, k_out, width, &kernels.weights, true, &dmat, false, 0.0, &mut gcols);
            grad_input = vec![0.0; count * sample_len];
            g.col2im(&gcols, count, &mut grad_input);
        }
        ChunkGrads {
            weights,
            bias,
            input: grad_input,
        }
    });

    let mut weights = vec![0.0f32; k_out * patch];
    let mut bias = vec![0.0f64; k_out];
    let mut grad_input = Vec::with_capacity(if want_input_grad { dims.len() } else { 0 });
    for part in partials {
        weights.iter_mut().zip(&part.weights).for_each(|(a, b)| *a += b);
        bias.iter_mut().zip(&part.bias).for_each(|(a, b)| *a += b);
        grad_input.extend_from_slice(&part.input);
    }
    let input_grad = if want_input_grad {
        if dims.n == 0 {
            Some(Tensor4::zeros(dims))
        } else {
            Some(Tensor4::from_vec(dims, grad_input)?)
        }
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        weights,
        bias: bias.into_iter().map(|v| v as f32).collect(),
    })
}
