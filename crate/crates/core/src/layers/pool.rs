use crate::error::{Error, Result};
use crate::tensor::{Dims4, Tensor4};

/// Flat input offsets of the element selected by each output of a 2x2 max-pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_dims: Dims4,
    pub offsets: Vec<usize>,
}

/// Non-overlapping 2x2 max-pool. Ties go to the first element in row-major order.
pub fn maxpool2x2(input: &Tensor4) -> Result<(Tensor4, PoolIndices)> {
    let d = input.dims();
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(Error::OddDimension {
            height: d.h,
            width: d.w,
        });
    }
    let (ho, wo) = (d.h / 2, d.w / 2);
    let out_dims = Dims4::new(d.n, d.c, ho, wo);
    let mut out = Vec::with_capacity(out_dims.len());
    let mut offsets = Vec::with_capacity(out_dims.len());
    let src = input.data();
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * d.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let o = base + (2 * oy + dy) * d.w + 2 * ox + dx;
                    if src[o] > src[best] {
                        best = o;
                    }
                }
                out.push(src[best]);
                offsets.push(best);
            }
        }
    }
    Ok((
        Tensor4::from_vec(out_dims, out)?,
        PoolIndices {
            input_dims: d,
            offsets,
        },
    ))
}

/// Route each upstream gradient to the element that won its window.
pub fn maxpool2x2_backward(indices: &PoolIndices, upstream: &Tensor4) -> Result<Tensor4> {
    if upstream.dims().len() != indices.offsets.len() {
        return Err(Error::shape(format!(
            "maxpool backward: upstream {} does not match {} pooled outputs",
            upstream.dims(),
            indices.offsets.len()
        )));
    }
    let mut grad = Tensor4::zeros(indices.input_dims);
    let g = grad.data_mut();
    for (&o, &u) in indices.offsets.iter().zip(upstream.data()) {
        g[o] += u;
    }
    Ok(grad)
}
