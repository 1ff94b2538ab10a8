//! Numpy-style broadcasting for binary element-wise kernels.

use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + r - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Walks every index of `out_shape`, handing the kernel the matching offsets.
fn walk(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let r = out_shape.len();
    let inner = out_shape[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let outer = total / inner;
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..outer {
        f(o * inner, oa, ob, inner, ia, ib);
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

pub fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = strides_in(a.shape(), &out_shape);
    let sb = strides_in(b.shape(), &out_shape);
    let mut out = Tensor::zeros(out_shape.clone());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    walk(&out_shape, &sa, &sb, |o, oa, ob, n, ia, ib| {
        for i in 0..n {
            od[o + i] = f(ad[oa + i * ia], bd[ob + i * ib]);
        }
    });
    Ok(out)
}

/// Sums `t` down to `shape`, the adjoint of broadcasting `shape` up to `t`.
pub fn sum_to_shape<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if t.shape() == shape {
        return Ok(t.clone());
    }
    let out_shape = t.shape().to_vec();
    if broadcast_shape(shape, &out_shape)? != out_shape {
        return shape_err(format!("cannot reduce {out_shape:?} to {shape:?}"));
    }
    let st = strides_in(&out_shape, &out_shape);
    let ss = strides_in(shape, &out_shape);
    let mut acc = Tensor::zeros(shape.to_vec());
    let td = t.data();
    let ad = acc.data_mut();
    walk(&out_shape, &st, &ss, |_, ot, os, n, it, is| {
        for i in 0..n {
            ad[os + i * is] += td[ot + i * it];
        }
    });
    Ok(acc)
}

pub fn broadcast_to<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let zeros = Tensor::zeros(shape.to_vec());
    let out = binary(&zeros, t, |_, v| v)?;
    if out.shape() != shape {
        return shape_err(format!("cannot broadcast {:?} to {shape:?}", t.shape()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_channel_vector() {
        let x = Tensor::<f64>::from_fn([1, 2, 2, 2], |i| i as f64);
        let s = Tensor::<f64>::new([1, 2, 1, 1], vec![10.0, 100.0]).unwrap();
        let y = binary(&x, &s, |a, b| a * b).unwrap();
        assert_eq!(y.data(), &[0.0, 10.0, 20.0, 30.0, 400.0, 500.0, 600.0, 700.0]);
        let back = sum_to_shape(&y, &[1, 2, 1, 1]).unwrap();
        assert_eq!(back.data(), &[60.0, 2200.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        assert!(broadcast_shape(&[2, 3], &[3, 2]).is_err());
        assert_eq!(broadcast_shape(&[1], &[2, 3, 4]).unwrap(), vec![2, 3, 4]);
    }
}
