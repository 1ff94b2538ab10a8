//! Full-reference and no-reference image quality measures and the report
//! written by evaluation runs.

mod lpips;
mod niqe;
mod report;

pub use lpips::Lpips;
pub use niqe::{niqe, niqe_features, NiqeModel, NIQE_FEATURES};
pub use report::{MetricMeans, MetricReport, MetricRow, METRIC_COLUMNS};

use ultrabm_tensor::{Real, Tensor};

use crate::error::{shape, Error, Result};
use crate::imagedata::rgb_to_gray;

/// PSNR returned for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Largest lightness grid used by [`loe`] along each axis.
pub const LOE_GRID: usize = 50;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn mse<T: Real>(y: &Tensor<T>, r: &Tensor<T>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum::<f64>() / y.numel() as f64
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(y: &Tensor<T>, r: &Tensor<T>) -> Result<f64> {
    same_shape(y, r, "psnr")?;
    let m = mse(y, r);
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

pub fn rmse<T: Real>(y: &Tensor<T>, r: &Tensor<T>) -> Result<f64> {
    same_shape(y, r, "rmse")?;
    Ok(mse(y, r).sqrt())
}

/// Normalized 11-tap Gaussian with σ = 1.5.
pub fn ssim_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|t| k[t] * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|t| k[t] * tmp[(r + t) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over valid 11×11 Gaussian windows of the BT.601 luma, averaged
/// over the batch. Constants K1 = 0.01, K2 = 0.03, L = 1.
pub fn ssim<T: Real>(y: &Tensor<T>, r: &Tensor<T>) -> Result<f64> {
    same_shape(y, r, "ssim")?;
    let (b, _, h, w) = y.dims4()?;
    if h < 11 || w < 11 {
        return Err(Error::Validation(format!("ssim needs at least 11x11 pixels, got {h}x{w}")));
    }
    let (gy, gr) = (rgb_to_gray(&y.cast::<f64>())?, rgb_to_gray(&r.cast::<f64>())?);
    let k = ssim_window();
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let mut total = 0.0;
    for n in 0..b {
        let a = &gy.data()[n * h * w..(n + 1) * h * w];
        let bb = &gr.data()[n * h * w..(n + 1) * h * w];
        let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
        let (mu_a, oh, ow) = filter_valid(a, h, w, &k);
        let (mu_b, _, _) = filter_valid(bb, h, w, &k);
        let (aa, _, _) = filter_valid(&prod(&|i| a[i] * a[i]), h, w, &k);
        let (bq, _, _) = filter_valid(&prod(&|i| bb[i] * bb[i]), h, w, &k);
        let (ab, _, _) = filter_valid(&prod(&|i| a[i] * bb[i]), h, w, &k);
        let mut s = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bq[i] - mb * mb, ab[i] - ma * mb);
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / (oh * ow) as f64;
    }
    Ok(total / b as f64)
}

/// Per-pixel max over RGB of the first batch item, point-sampled at the
/// cell centres of the lightness grid of an `h × w` image (at most
/// `LOE_GRID` cells per axis).
pub fn lightness_grid<T: Real>(t: &Tensor<T>, h: usize, w: usize) -> Result<Vec<f64>> {
    let (_, c, th, tw) = t.dims4()?;
    let (gh, gw) = (h.min(LOE_GRID), w.min(LOE_GRID));
    let mut out = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        let r = ((i as f64 + 0.5) * th as f64 / gh as f64) as usize;
        for j in 0..gw {
            let col = ((j as f64 + 0.5) * tw as f64 / gw as f64) as usize;
            out.push((0..c).map(|ch| t.data()[ch * th * tw + r * tw + col].f64()).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Ok(out)
}

/// Lightness-order error of `y` relative to `x`: the fraction of ordered
/// pixel pairs whose `L(p) >= L(q)` relation differs, times 1000.
///
/// Both images are reduced to the grid shape of the smaller one, so an
/// enlarged output can be compared with its input.
pub fn loe<T: Real>(y: &Tensor<T>, x: &Tensor<T>) -> Result<f64> {
    let (_, _, yh, yw) = y.dims4()?;
    let (_, _, xh, xw) = x.dims4()?;
    if yh * xw != xh * yw {
        return shape(format!("loe: aspect ratios differ ({yh}x{yw} vs {xh}x{xw})"));
    }
    let (h, w) = if yh >= xh { (xh, xw) } else { (yh, yw) };
    let (ly, lx) = (lightness_grid(y, h, w)?, lightness_grid(x, h, w)?);
    let n = lx.len();
    let mut flips = 0usize;
    for p in 0..n {
        for q in 0..n {
            if (lx[p] >= lx[q]) != (ly[p] >= ly[q]) {
                flips += 1;
            }
        }
    }
    Ok(1000.0 * flips as f64 / (n * n) as f64)
}
