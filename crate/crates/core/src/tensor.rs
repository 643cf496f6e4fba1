//! Dense rank-4 tensors in NCHW order and 2-D float grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements in one channel plane (`h * w`).
    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Dims4 { n, ..self }
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense `(batch, channel, height, width)` array of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims4,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(dims: Dims4) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims4, value: f32) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims4, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "tensor {dims} needs {} elements, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.dims.n && c < self.dims.c && y < self.dims.h && x < self.dims.w);
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.dims.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.dims.plane_len();
        let start = (n * self.dims.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let len = self.dims.plane_len();
        let start = (n * self.dims.c + c) * len;
        &mut self.data[start..start + len]
    }

    /// Same data viewed with different dimensions of equal total size.
    pub fn reshape(self, dims: Dims4) -> Result<Self> {
        Tensor4::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gather the given samples (in order) into a new batch.
    pub fn select_samples(&self, indices: &[usize]) -> Self {
        let len = self.dims.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor4 {
            dims: self.dims.with_batch(indices.len()),
            data,
        }
    }

    /// All values of channel `c` across the batch, sample-major.
    pub fn channel_values(&self, c: usize) -> Vec<f32> {
        (0..self.dims.n)
            .flat_map(|n| self.plane(n, c).iter().copied())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// A 2-D grid of floats, row-major. Used for single kernels, impulse response
/// maps and the inputs to the cascade check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Map2d {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Map2d {
    pub fn zeros(height: usize, width: usize) -> Self {
        Map2d {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "map {height}x{width} needs {} elements, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Map2d {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Map2d {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn rotate180(&self) -> Self {
        let mut data = self.data.clone();
        data.reverse();
        Map2d {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        Map2d::from_fn(self.width, self.height, |y, x| self.at(x, y))
    }

    /// View as a `1x1xHxW` tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4 {
            dims: Dims4::new(1, 1, self.height, self.width),
            data: self.data.clone(),
        }
    }

    /// Render as CSV, one row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.data.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}
