use std::path::Path;

use ultrabm_tensor::{Real, Tensor};

use super::model::Model;
use crate::error::{Error, Result};
use crate::imagedata::{load_image, PairManifest};
use crate::metrics::{loe, niqe, psnr, rmse, ssim, Lpips, MetricReport, MetricRow, NiqeModel};

/// Mirror index without repeating the edge sample.
fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let m = i % (2 * (n - 1));
    if m >= n {
        2 * (n - 1) - m
    } else {
        m
    }
}

/// Reflect-pads the bottom and right edges so both sides are multiples of `k`.
pub(crate) fn pad_to_multiple<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (ph, pw) = (h.div_ceil(k) * k, w.div_ceil(k) * k);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let d = x.data();
    Ok(Tensor::from_fn([b, c, ph, pw], |i| {
        let (plane, r, col) = (i / (ph * pw), (i / pw) % ph, i % pw);
        d[plane * h * w + mirror(r, h) * w + mirror(col, w)]
    }))
}

/// Super-resolves an image of any size: reflect-pad to a multiple of 16,
/// run the model, crop the result to `scale × (H, W)`.
pub fn enhance<T: Real>(model: &Model<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    let s = model.config().scale;
    let padded = pad_to_multiple(x, 16)?;
    let y = model.forward(&padded)?.y;
    Ok(y.crop(0, 0, s * h, s * w)?)
}

pub struct EvalOptions<'a> {
    pub lpips: &'a Lpips,
    /// NIQE is reported only when a model is given and the output holds at
    /// least two of its patches.
    pub niqe: Option<&'a NiqeModel>,
}

/// All metrics for one output `y` against `reference`, with LOE measured
/// relative to `original`.
pub fn score_pair(name: &str, y: &Tensor<f32>, reference: &Tensor<f32>, original: &Tensor<f32>, opts: &EvalOptions<'_>) -> Result<MetricRow> {
    let niqe_score = match opts.niqe {
        Some(m) => match niqe(y, m) {
            Ok(v) => Some(v),
            Err(Error::Validation(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(MetricRow {
        image: name.to_string(),
        psnr: psnr(y, reference)?,
        ssim: ssim(y, reference)?,
        rmse: rmse(y, reference)?,
        lpips: opts.lpips.distance(y, reference)?,
        niqe: niqe_score,
        loe: loe(y, original)?,
    })
}

/// Runs the model on every manifest pair and scores the outputs.
/// `on_output(index, low, y, reference)` sees each result.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    manifest: &PairManifest,
    opts: &EvalOptions<'_>,
    mut on_output: impl FnMut(usize, &Tensor<f32>, &Tensor<f32>, &Tensor<f32>) -> Result<()>,
) -> Result<MetricReport> {
    let s = model.config().scale;
    if manifest.is_empty() {
        return Err(Error::Validation("manifest has no entries".into()));
    }
    if manifest.scale() != Some(s) {
        return Err(Error::Validation(format!("manifest scale {:?} does not match model scale {s}", manifest.scale().unwrap_or(0))));
    }
    let mut report = MetricReport::new(s, opts.lpips.calibrated());
    for (i, e) in manifest.entries.iter().enumerate() {
        let low = load_image(&e.low)?.into_tensor();
        let reference = load_image(&e.reference)?.into_tensor();
        let (_, _, h, w) = low.dims4()?;
        if reference.shape()[2] != s * h || reference.shape()[3] != s * w {
            return Err(Error::Validation(format!("{}: reference is not {s} times the input size", e.reference.display())));
        }
        let y: Tensor<f32> = enhance(model, &low.cast::<T>())?.cast();
        report.push(score_pair(&display_name(&e.low), &y, &reference, &low, opts)?);
        on_output(i, &low, &y, &reference)?;
    }
    Ok(report)
}

fn display_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}
