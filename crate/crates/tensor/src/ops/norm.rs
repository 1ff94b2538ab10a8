//! Softmax along an axis and per-pixel layer normalization over channels.

use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

fn split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return shape_err(format!("axis {axis} out of range for {shape:?}"));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split(x.shape(), axis)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..n {
                let e = (d[at(k)] - m).exp();
                d[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                d[at(k)] /= total;
            }
        }
    }
    Ok(out)
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split(y.shape(), axis)?;
    let mut dx = Tensor::zeros(y.shape().to_vec());
    let (yd, gd) = (y.data(), g.data());
    let dd = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let dot: T = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..n {
                dd[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Ok(dx)
}

/// Saved statistics of a channel layer norm, one entry per `(batch, pixel)`.
pub struct LnStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes each pixel's channel vector, then applies `gamma_c`, `beta_c`.
pub fn layer_norm_channels<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LnStats<T>)> {
    let (b, c, h, w) = x.dims4()?;
    if gamma.numel() != c || beta.numel() != c {
        return shape_err(format!("layer_norm: affine params need {c} entries"));
    }
    let p = h * w;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut stats = LnStats { mean: vec![T::zero(); b * p], rstd: vec![T::zero(); b * p] };
    let inv_c = T::c(1.0 / c as f64);
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let od = out.data_mut();
    for n in 0..b {
        let base = n * c * p;
        for px in 0..p {
            let mean = (0..c).map(|ch| xd[base + ch * p + px]).sum::<T>() * inv_c;
            let var = (0..c)
                .map(|ch| {
                    let d = xd[base + ch * p + px] - mean;
                    d * d
                })
                .sum::<T>()
                * inv_c;
            let rstd = T::one() / (var + T::c(eps)).sqrt();
            for ch in 0..c {
                let i = base + ch * p + px;
                od[i] = (xd[i] - mean) * rstd * gd[ch] + bd[ch];
            }
            stats.mean[n * p + px] = mean;
            stats.rstd[n * p + px] = rstd;
        }
    }
    Ok((out, stats))
}

pub fn layer_norm_channels_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &LnStats<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = x.dims4()?;
    let p = h * w;
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgamma = Tensor::zeros([c]);
    let mut dbeta = Tensor::zeros([c]);
    let inv_c = T::c(1.0 / c as f64);
    let (xd, gd, gam) = (x.data(), g.data(), gamma.data());
    for n in 0..b {
        let base = n * c * p;
        for px in 0..p {
            let (mean, rstd) = (stats.mean[n * p + px], stats.rstd[n * p + px]);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ch in 0..c {
                let i = base + ch * p + px;
                let xhat = (xd[i] - mean) * rstd;
                let gh = gd[i] * gam[ch];
                sum_g += gh;
                sum_gx += gh * xhat;
                dgamma.data_mut()[ch] += gd[i] * xhat;
                dbeta.data_mut()[ch] += gd[i];
            }
            let (mg, mgx) = (sum_g * inv_c, sum_gx * inv_c);
            for ch in 0..c {
                let i = base + ch * p + px;
                let xhat = (xd[i] - mean) * rstd;
                dx.data_mut()[i] = rstd * (gd[i] * gam[ch] - mg - xhat * mgx);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}
