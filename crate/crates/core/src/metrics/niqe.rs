//! Natural-image-statistics quality score: MSCN coefficients, generalized
//! Gaussian fits per patch at two scales, and a Mahalanobis-like distance
//! to a multivariate Gaussian fitted on pristine images.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use ultrabm_tensor::{Real, Tensor};

use crate::container::TensorFile;
use crate::error::{Error, Result};
use crate::imagedata::{bicubic_resize, rgb_to_gray};

/// 18 per scale (2 GGD + 4 orientations × 4 AGGD), two scales.
pub const NIQE_FEATURES: usize = 36;

/// Patches with sharpness below this fraction of the sharpest patch are
/// dropped when fitting a model.
pub const SHARPNESS_FRACTION: f64 = 0.75;

fn gaussian7() -> [f64; 7] {
    let s = 7.0 / 6.0;
    let mut k = [0.0; 7];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 3.0;
        *v = (-d * d / (2.0 * s * s)).exp();
    }
    let t: f64 = k.iter().sum();
    k.map(|v| v / t)
}

/// Separable "same" filtering with replicated borders.
fn blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian7();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..7).map(|t| k[t] * img[r * w + clampi(c as isize + t as isize - 3, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..7).map(|t| k[t] * tmp[clampi(r as isize + t as isize - 3, h) * w + c]).sum();
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients and the local σ map.
pub fn mscn(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = blur(img, h, w);
    let sq: Vec<f64> = img.iter().map(|v| v * v).collect();
    let m2 = blur(&sq, h, w);
    let sigma: Vec<f64> = m2.iter().zip(&mu).map(|(a, m)| (a - m * m).abs().sqrt()).collect();
    let out = img.iter().zip(&mu).zip(&sigma).map(|((v, m), s)| (v - m) / (s + 1.0)).collect();
    (out, sigma)
}

fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `(α, Γ(1/α)Γ(3/α)/Γ(2/α)²)` on the search grid α ∈ [0.2, 10).
fn ratio_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                (a, gamma(1.0 / a) * gamma(3.0 / a) / gamma(2.0 / a).powi(2))
            })
            .collect()
    })
}

fn closest(target: f64, f: impl Fn(f64) -> f64) -> f64 {
    ratio_table().iter().map(|&(a, r)| (a, (f(r) - target).abs())).fold((0.2, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b }).0
}

/// Moment-matching fit of a zero-mean generalized Gaussian: `(α, σ²)`.
pub fn fit_ggd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let mabs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if var == 0.0 {
        return (0.2, 0.0);
    }
    let rho = var / (mabs * mabs);
    (closest(rho, |r| r), var)
}

/// Asymmetric generalized Gaussian fit: `(α, η, σ_l², σ_r²)`.
pub fn fit_aggd(x: &[f64]) -> (f64, f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    let (sl, sr) = ((ls / ln.max(1) as f64).sqrt(), (rs / rn.max(1) as f64).sqrt());
    if sl == 0.0 || sr == 0.0 {
        return (0.2, 0.0, sl * sl, sr * sr);
    }
    let n = x.len() as f64;
    let mabs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    let g = sl / sr;
    let r = mabs * mabs / m2;
    let big_r = r * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let a = closest(big_r, |r| 1.0 / r);
    let eta = (sr - sl) * (gamma(2.0 / a) / gamma(1.0 / a)) * (gamma(1.0 / a) / gamma(3.0 / a)).sqrt();
    (a, eta, sl * sl, sr * sr)
}

/// 18 statistics of one MSCN patch.
fn patch_features(m: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (a, s2) = fit_ggd(m);
    let mut f = vec![a, s2];
    let shifts: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (dr, dc) in shifts {
        let mut prod = Vec::with_capacity(h * w);
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (r2, c2) = (r + dr, c + dc);
                if r2 < h as isize && c2 >= 0 && c2 < w as isize {
                    prod.push(m[(r * w as isize + c) as usize] * m[(r2 * w as isize + c2) as usize]);
                }
            }
        }
        let (al, eta, l, rr) = fit_aggd(&prod);
        f.extend([al, eta, l, rr]);
    }
    f
}

fn crop(img: &[f64], w: usize, r0: usize, c0: usize, p: usize) -> Vec<f64> {
    (0..p).flat_map(|r| img[(r0 + r) * w + c0..(r0 + r) * w + c0 + p].iter().copied()).collect()
}

/// One feature row per non-overlapping `patch × patch` cell of every batch
/// item, with the mean local σ (sharpness) of the cell at full scale.
pub fn niqe_features<T: Real>(x: &Tensor<T>, patch: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if patch < 8 || !patch.is_multiple_of(2) {
        return Err(Error::Config(format!("niqe patch size must be even and >= 8, got {patch}")));
    }
    let gray = rgb_to_gray(&x.cast::<f64>())?.map(|v| v * 255.0);
    let (b, _, h, w) = gray.dims4()?;
    let (ph, pw) = (h / patch, w / patch);
    if ph * pw < 2 {
        return Err(Error::Validation(format!("niqe needs at least two {patch}x{patch} patches, image is {h}x{w}")));
    }
    let half = bicubic_resize(&gray, (h / 2, w / 2))?;
    let (h2, w2) = (h / 2, w / 2);
    let q = patch / 2;
    let mut rows = Vec::with_capacity(b * ph * pw);
    for n in 0..b {
        let (m1, s1) = mscn(&gray.data()[n * h * w..(n + 1) * h * w], h, w);
        let (m2, _) = mscn(&half.data()[n * h2 * w2..(n + 1) * h2 * w2], h2, w2);
        for i in 0..ph {
            for j in 0..pw {
                let mut f = patch_features(&crop(&m1, w, i * patch, j * patch, patch), patch, patch);
                f.extend(patch_features(&crop(&m2, w2, i * q, j * q, q), q, q));
                let sharp = crop(&s1, w, i * patch, j * patch, patch).iter().sum::<f64>() / (patch * patch) as f64;
                rows.push((f, sharp));
            }
        }
    }
    Ok(rows)
}

fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mu = DVector::zeros(NIQE_FEATURES);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(NIQE_FEATURES, NIQE_FEATURES);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mu;
        cov += &d * d.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    (mu, cov)
}

/// Multivariate Gaussian over patch features of pristine images.
#[derive(Clone, Debug)]
pub struct NiqeModel {
    pub mu: Vec<f64>,
    pub cov: Vec<f64>,
    pub patch_size: usize,
}

/// Fitted by `examples/fit_niqe_fixture.rs` on 24 procedural references
/// (seeds 1000..1024, 192×192, patch 32). Only meaningful for comparing
/// images within this project.
const BUNDLED: &[u8] = include_bytes!("../../assets/niqe_synthetic.safetensors");

impl NiqeModel {
    pub fn bundled() -> Self {
        Self::from_file(&TensorFile::from_bytes(BUNDLED).expect("bundled niqe model parses")).expect("bundled niqe model is valid")
    }

    /// Fits on the sharp patches of `images`.
    pub fn fit<T: Real>(images: &[Tensor<T>], patch_size: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for im in images {
            let feats = niqe_features(im, patch_size)?;
            let peak = feats.iter().map(|f| f.1).fold(0.0, f64::max);
            rows.extend(feats.into_iter().filter(|f| f.1 > SHARPNESS_FRACTION * peak).map(|f| f.0));
        }
        if rows.len() < 2 {
            return Err(Error::Validation("niqe fit needs at least two sharp patches".into()));
        }
        let (mu, cov) = mean_cov(&rows);
        Ok(Self { mu: mu.as_slice().to_vec(), cov: cov.as_slice().to_vec(), patch_size })
    }

    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        f.insert("mu", &Tensor::<f64>::new([NIQE_FEATURES], self.mu.clone()).expect("mu length"));
        f.insert("cov", &Tensor::<f64>::new([NIQE_FEATURES, NIQE_FEATURES], self.cov.clone()).expect("cov length"));
        f.insert("patch_size", &Tensor::<f64>::scalar(self.patch_size as f64));
        f
    }

    pub fn from_file(f: &TensorFile) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("niqe model: {m}"));
        let mu: Tensor<f64> = f.get("mu").map_err(|e| bad(e.to_string()))?;
        let cov: Tensor<f64> = f.get("cov").map_err(|e| bad(e.to_string()))?;
        let p: Tensor<f64> = f.get("patch_size").map_err(|e| bad(e.to_string()))?;
        if mu.shape() != [NIQE_FEATURES] || cov.shape() != [NIQE_FEATURES, NIQE_FEATURES] {
            return Err(bad(format!("expected mu [{0}] and cov [{0}, {0}], got {1:?} and {2:?}", NIQE_FEATURES, mu.shape(), cov.shape())));
        }
        if !mu.all_finite() || !cov.all_finite() {
            return Err(bad("non-finite parameters".into()));
        }
        let patch = p.item();
        if patch.fract() != 0.0 || patch < 8.0 {
            return Err(bad(format!("invalid patch size {patch}")));
        }
        Ok(Self { mu: mu.into_data(), cov: cov.into_data(), patch_size: patch as usize })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = TensorFile::load(path).map_err(|e| Error::Config(format!("niqe model {}: {e}", path.display())))?;
        Self::from_file(&f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }
}

/// Distance between the Gaussian fitted on the patches of `x` and `model`.
/// Lower is more natural.
pub fn niqe<T: Real>(x: &Tensor<T>, model: &NiqeModel) -> Result<f64> {
    let rows: Vec<Vec<f64>> = niqe_features(x, model.patch_size)?.into_iter().map(|f| f.0).collect();
    let (mu, cov) = mean_cov(&rows);
    let d = DVector::from_column_slice(&model.mu) - mu;
    let pooled = (DMatrix::from_column_slice(NIQE_FEATURES, NIQE_FEATURES, &model.cov) + cov) / 2.0;
    let inv = pooled.pseudo_inverse(1e-10).map_err(|e| Error::Numeric(format!("niqe pseudo-inverse: {e}")))?;
    let q = (d.transpose() * inv * &d)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagedata::procedural_reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn ggd_fit_recovers_gaussian_and_laplace() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let g: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
        let (a, s2) = fit_ggd(&g);
        assert!((a - 2.0).abs() < 0.05, "{a}");
        assert!((s2 - 4.0).abs() < 0.1);
        let exp = rand_distr::Exp::new(1.0).unwrap();
        let l: Vec<f64> = (0..200_000).map(|i| exp.sample(&mut rng) * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((fit_ggd(&l).0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn aggd_symmetric_has_zero_mean_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
        let (a, eta, l, r) = fit_aggd(&g);
        assert!((a - 2.0).abs() < 0.1 && eta.abs() < 0.02 && (l - 1.0).abs() < 0.05 && (r - 1.0).abs() < 0.05);
    }

    #[test]
    fn mscn_of_constant_is_zero() {
        let (m, s) = mscn(&vec![100.0; 20 * 20], 20, 20);
        assert!(m.iter().all(|v| v.abs() < 1e-9) && s.iter().all(|v| v.abs() < 1e-5));
    }

    fn reference(seed: u64) -> Tensor<f64> {
        procedural_reference(seed, 64, 64)
    }

    #[test]
    fn heavy_noise_raises_score_and_file_round_trips() {
        let train: Vec<Tensor<f64>> = (10..18).map(reference).collect();
        let model = NiqeModel::fit(&train, 16).unwrap();
        let clean = reference(99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        let (a, b) = (niqe(&clean, &model).unwrap(), niqe(&noisy, &model).unwrap());
        assert!(a.is_finite() && b > a, "clean {a} noisy {b}");

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("niqe.safetensors");
        model.save(&p).unwrap();
        let back = NiqeModel::load(&p).unwrap();
        assert_eq!(niqe(&clean, &back).unwrap(), a);
    }

    #[test]
    fn bundled_fixture_penalizes_noise() {
        let model = NiqeModel::bundled();
        assert_eq!(model.patch_size, 32);
        let clean = procedural_reference(7, 128, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.25).unwrap();
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        let (a, b) = (niqe(&clean, &model).unwrap(), niqe(&noisy, &model).unwrap());
        assert!(a >= 0.0 && b > a, "clean {a} noisy {b}");
        assert_eq!(niqe(&clean, &model).unwrap(), a);
    }

    #[test]
    fn missing_or_invalid_model_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(NiqeModel::load(&dir.path().join("none")), Err(Error::Config(_))));
        let p = dir.path().join("bad.safetensors");
        let mut f = TensorFile::new();
        f.insert("mu", &Tensor::<f64>::zeros([3]));
        f.save(&p).unwrap();
        assert!(matches!(NiqeModel::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let x = Tensor::<f64>::full([1, 3, 16, 16], 0.5);
        assert!(matches!(niqe_features(&x, 16), Err(Error::Validation(_))));
    }
}
