//! Separable linear resampling: `out = A_h · plane · A_wᵀ` per channel.
//!
//! Interpolation weights use half-pixel centres (PyTorch `align_corners=False`
//! geometry); out-of-range taps clamp to the nearest edge sample. When
//! shrinking with `antialias`, the kernel is widened by the scale factor, which
//! reproduces the usual `imresize`-style box-filtered bicubic downsampling.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatLayout};
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    Bilinear,
    /// Keys cubic with `a = -0.5`.
    Bicubic,
}

impl Filter {
    fn support(self) -> f64 {
        match self {
            Filter::Bilinear => 1.0,
            Filter::Bicubic => 2.0,
        }
    }

    fn weight(self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            Filter::Bilinear => (1.0 - t).max(0.0),
            Filter::Bicubic => {
                let a = -0.5;
                if t <= 1.0 {
                    ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
                } else if t < 2.0 {
                    ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
                } else {
                    0.0
                }
            }
        }
    }
}

/// Row-major `out_len × in_len` interpolation matrix; every row sums to one.
pub fn resample_matrix<T: Real>(in_len: usize, out_len: usize, filter: Filter, antialias: bool) -> Vec<T> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = if antialias && scale > 1.0 { scale } else { 1.0 };
    let support = filter.support() * stretch;
    let mut m = vec![0.0f64; out_len * in_len];
    for o in 0..out_len {
        let center = (o as f64 + 0.5) * scale - 0.5;
        let lo = (center - support).floor() as isize;
        let hi = (center + support).ceil() as isize;
        let row = &mut m[o * in_len..(o + 1) * in_len];
        let mut total = 0.0;
        for j in lo..=hi {
            let wgt = filter.weight((center - j as f64) / stretch);
            if wgt == 0.0 {
                continue;
            }
            let idx = j.clamp(0, in_len as isize - 1) as usize;
            row[idx] += wgt;
            total += wgt;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    m.into_iter().map(T::c).collect()
}

pub struct ResamplePlan<T> {
    pub ah: Vec<T>,
    pub aw: Vec<T>,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl<T: Real> ResamplePlan<T> {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize), filter: Filter, antialias: bool) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return shape_err(format!("resample {in_hw:?} -> {out_hw:?} has an empty side"));
        }
        Ok(Self {
            ah: resample_matrix(in_hw.0, out_hw.0, filter, antialias),
            aw: resample_matrix(in_hw.1, out_hw.1, filter, antialias),
            in_hw,
            out_hw,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = x.dims4()?;
        if (h, w) != self.in_hw {
            return shape_err(format!("resample plan built for {:?}, got {h}x{w}", self.in_hw));
        }
        let (oh, ow) = self.out_hw;
        let mut out = Tensor::zeros([b, c, oh, ow]);
        let mut tmp = vec![T::zero(); oh * w];
        for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
            gemm(oh, h, w, &self.ah, MatLayout::row_major(h), src, MatLayout::row_major(w), &mut tmp, MatLayout::row_major(w), false);
            gemm(oh, w, ow, &tmp, MatLayout::row_major(w), &self.aw, MatLayout::transposed(w), dst, MatLayout::row_major(ow), false);
        }
        Ok(out)
    }

    pub fn backward(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, oh, ow) = g.dims4()?;
        let (h, w) = self.in_hw;
        let mut dx = Tensor::zeros([b, c, h, w]);
        let mut tmp = vec![T::zero(); oh * w];
        for (src, dst) in g.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
            gemm(oh, ow, w, src, MatLayout::row_major(ow), &self.aw, MatLayout::row_major(w), &mut tmp, MatLayout::row_major(w), false);
            gemm(h, oh, w, &self.ah, MatLayout::transposed(h), &tmp, MatLayout::row_major(w), dst, MatLayout::row_major(w), false);
        }
        Ok(dx)
    }
}
