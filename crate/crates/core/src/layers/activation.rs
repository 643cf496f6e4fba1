use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub fn relu(input: &Tensor4) -> Tensor4 {
    input.map(|v| v.max(0.0))
}

pub fn relu_inplace(t: &mut Tensor4) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Pass `upstream` through where `input > 0`, zero elsewhere.
pub fn relu_backward(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    if input.dims() != upstream.dims() {
        return Err(Error::shape(format!(
            "relu backward: input {} vs upstream {}",
            input.dims(),
            upstream.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}
