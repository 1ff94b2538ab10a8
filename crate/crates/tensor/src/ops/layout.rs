//! Pure data-movement kernels: slicing, concatenation, padding, shuffles.

use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return shape_err(format!("narrow({axis}, {start}, {len}) out of range for {shape:?}"));
    }
    let (outer, n, inner) = split_at_axis(shape, axis);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(out_shape, data)
}

/// Adjoint of [`narrow`]: places `g` into a zero tensor of `full_shape`.
pub fn narrow_backward<T: Real>(g: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, n, inner) = split_at_axis(full_shape, axis);
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(full_shape.to_vec());
    let od = out.data_mut();
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        od[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

pub fn concat<T: Real>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let Some(first) = xs.first() else {
        return shape_err("concat of empty list");
    };
    let rank = first.shape().len();
    if axis >= rank {
        return shape_err(format!("concat axis {axis} out of range for rank {rank}"));
    }
    let mut total = 0;
    for x in xs {
        let s = x.shape();
        if s.len() != rank || s.iter().enumerate().any(|(i, &d)| i != axis && d != first.shape()[i]) {
            return shape_err(format!("concat shape mismatch {:?} vs {:?}", s, first.shape()));
        }
        total += s[axis];
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let n = x.shape()[axis];
            data.extend_from_slice(&x.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    Tensor::new(out_shape, data)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Reflect padding (edge pixel not repeated) on both spatial axes.
pub fn pad_reflect<T: Real>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return shape_err(format!("reflect pad {pad} needs spatial size > pad, got {h}x{w}"));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros([b, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        for y in 0..oh {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..ow {
                let sx = reflect(xx as isize - pad as isize, w);
                dst[y * ow + xx] = src[sy * w + sx];
            }
        }
    }
    Ok(out)
}

pub fn pad_reflect_backward<T: Real>(g: &Tensor<T>, in_shape: &[usize], pad: usize) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(in_shape.to_vec());
    for (src, dst) in g.data().chunks(oh * ow).zip(out.data_mut().chunks_mut(h * w)) {
        for y in 0..oh {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..ow {
                let sx = reflect(xx as isize - pad as isize, w);
                dst[sy * w + sx] += src[y * ow + xx];
            }
        }
    }
    out
}

/// `(B, C·r², H, W) → (B, C, rH, rW)` with the periodic-shuffle mapping
/// `out[b, c, h·r+i, w·r+j] = in[b, c·r²+i·r+j, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, cin, h, w) = x.dims4()?;
    if r == 0 || cin % (r * r) != 0 {
        return shape_err(format!("pixel_shuffle: channels {cin} not divisible by {r}²"));
    }
    let c = cin / (r * r);
    let mut out = Tensor::zeros([b, c, h * r, w * r]);
    shuffle_map(b, c, h, w, r, |src, dst| out.data_mut()[dst] = x.data()[src]);
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = x.dims4()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return shape_err(format!("pixel_unshuffle: {oh}x{ow} not divisible by {r}"));
    }
    let (h, w) = (oh / r, ow / r);
    let mut out = Tensor::zeros([b, c * r * r, h, w]);
    shuffle_map(b, c, h, w, r, |src, dst| out.data_mut()[src] = x.data()[dst]);
    Ok(out)
}

/// Calls `f(shuffled_input_offset, spatial_output_offset)` for every element.
fn shuffle_map(b: usize, c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (oh, ow) = (h * r, w * r);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let cin = ch * r * r + i * r + j;
                    let src_base = (n * c * r * r + cin) * h * w;
                    let dst_base = (n * c + ch) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            f(src_base + y * w + xx, dst_base + (y * r + i) * ow + xx * r + j);
                        }
                    }
                }
            }
        }
    }
}
