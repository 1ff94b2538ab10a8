use crate::error::{shape_err, Result};
use crate::ops::broadcast::sum_to_shape;
use crate::{Real, Tensor};

/// Sum over `axes`, keeping them as size-1 dimensions.
pub fn sum_axes<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let mut shape = x.shape().to_vec();
    for &a in axes {
        if a >= shape.len() {
            return shape_err(format!("reduce axis {a} out of range for {:?}", x.shape()));
        }
        shape[a] = 1;
    }
    sum_to_shape(x, &shape)
}

/// Number of elements folded into each output of a keep-dim reduction.
pub fn reduced_count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}
