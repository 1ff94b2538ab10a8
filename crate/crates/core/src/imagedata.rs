//! PNG I/O, luma conversion, pair manifests and the synthetic dark/bright
//! pair generator.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use ultrabm_tensor::ops::resample::ResamplePlan;
use ultrabm_tensor::{Filter, Real, Tensor};

use crate::error::{shape, Error, Result};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A validated `(B, C, H, W)` image in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Tensor<f32>,
    bit_depth: Option<u8>,
}

impl ImageTensor {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let (b, c, h, w) = data.dims4()?;
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return shape(format!("image with empty dimension {:?}", data.shape()));
        }
        if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { data, bit_depth: None })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    /// Bit depth of the file this image was decoded from, if any.
    pub fn bit_depth(&self) -> Option<u8> {
        self.bit_depth
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Decodes an RGB PNG with 8 or 16 bits per channel.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| fmt(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| fmt("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(fmt(format!("expected RGB, found {:?}", info.color_type)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    let depth = match info.bit_depth {
        png::BitDepth::Eight => {
            for row in 0..h {
                let line = &buf[row * info.line_size..];
                for col in 0..w {
                    for c in 0..3 {
                        data[c * plane + row * w + col] = line[col * 3 + c] as f32 / 255.0;
                    }
                }
            }
            8
        }
        png::BitDepth::Sixteen => {
            for row in 0..h {
                let line = &buf[row * info.line_size..];
                for col in 0..w {
                    for c in 0..3 {
                        let i = (col * 3 + c) * 2;
                        data[c * plane + row * w + col] = u16::from_be_bytes([line[i], line[i + 1]]) as f32 / 65535.0;
                    }
                }
            }
            16
        }
        other => return Err(fmt(format!("unsupported bit depth {other:?}"))),
    };
    let mut img = ImageTensor::new(Tensor::new([1, 3, h, w], data)?)?;
    img.bit_depth = Some(depth);
    Ok(img)
}

/// Writes the first batch item of a 3-channel image as an RGB PNG.
pub fn save_image(path: &Path, img: &Tensor<f32>, bit_depth: u8) -> Result<()> {
    let (_, c, h, w) = img.dims4()?;
    if c != 3 {
        return shape(format!("save_image needs 3 channels, got {c}"));
    }
    let plane = h * w;
    let px = |i: usize| img.data()[i].clamp(0.0, 1.0) as f64;
    let bytes: Vec<u8> = match bit_depth {
        8 => (0..plane).flat_map(|p| (0..3).map(move |c| (px(c * plane + p) * 255.0).round() as u8)).collect(),
        16 => (0..plane)
            .flat_map(|p| (0..3).flat_map(move |c| ((px(c * plane + p) * 65535.0).round() as u16).to_be_bytes()))
            .collect(),
        d => return Err(Error::Config(format!("unsupported output bit depth {d}"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(if bit_depth == 8 { png::BitDepth::Eight } else { png::BitDepth::Sixteen });
    let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// BT.601 luma of a `(B, 3, H, W)` tensor, returned as `(B, 1, H, W)`.
pub fn rgb_to_gray<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if c != 3 {
        return shape(format!("rgb_to_gray needs 3 channels, got {c}"));
    }
    let plane = h * w;
    let k = LUMA.map(T::c);
    let d = x.data();
    Ok(Tensor::from_fn([b, 1, h, w], |i| {
        let (n, p) = (i / plane, i % plane);
        let base = n * 3 * plane + p;
        k[0] * d[base] + k[1] * d[base + plane] + k[2] * d[base + 2 * plane]
    }))
}

/// Antialiased bicubic resize of a `(B, C, H, W)` tensor.
pub fn bicubic_resize<T: Real>(x: &Tensor<T>, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    let plan = ResamplePlan::new((h, w), out_hw, Filter::Bicubic, true)?;
    Ok(plan.forward(x)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub ev: f64,
    pub scale: usize,
    /// Low-resolution `(H, W)`; the reference is `scale` times larger.
    pub size: (usize, usize),
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, ev: f64, scale: usize, size: (usize, usize)) -> Self {
        Self { seed, ev, scale, size, noise_sigma: 0.01 }
    }
}

/// Procedural reference image: tilted colour gradients, one low-frequency
/// wave and several textured rectangles and discs.
pub fn procedural_reference(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0; 3 * h * w];
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.7));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    let (fx, fy, phase) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..6.3));
    let wave: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
    let tau = std::f64::consts::TAU;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let s = (tau * (fx * u + fy * v) + phase).sin();
            for c in 0..3 {
                img[c * h * w + y * w + x] = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5) + wave[c] * s;
            }
        }
    }
    let patches = rng.random_range(4..=8);
    for _ in 0..patches {
        let (cu, cv) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (ru, rv) = (rng.random_range(0.08..0.3), rng.random_range(0.08..0.3));
        let disc = rng.random_bool(0.5);
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let texture = rng.random_range(0..3);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(4.0..16.0);
        let period = rng.random_range(3..10) as f64;
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                let (du, dv) = ((u - cu) / ru, (v - cv) / rv);
                let inside = if disc { du * du + dv * dv <= 1.0 } else { du.abs() <= 1.0 && dv.abs() <= 1.0 };
                if !inside {
                    continue;
                }
                let t = match texture {
                    0 => (tau * freq * (u * theta.cos() + v * theta.sin())).sin(),
                    1 => {
                        if ((x as f64 / period).floor() + (y as f64 / period).floor()) as i64 % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    _ => 0.0,
                };
                for c in 0..3 {
                    img[c * h * w + y * w + x] = color[c] + 0.15 * t;
                }
            }
        }
    }
    Tensor::new([1, 3, h, w], img.into_iter().map(|v: f64| v.clamp(0.0, 1.0)).collect()).expect("consistent shape")
}

/// Returns `(low, ref)`. The reference is procedural; the low image is its
/// antialiased bicubic reduction scaled by `2^ev` plus seeded Gaussian noise,
/// clamped to `[0, 1]`.
pub fn make_synthetic_pair(spec: &SyntheticSpec) -> Result<(ImageTensor, ImageTensor)> {
    if !(-5.0..=0.0).contains(&spec.ev) {
        return Err(Error::Validation(format!("ev {} outside [-5, 0]", spec.ev)));
    }
    if spec.scale != 2 && spec.scale != 4 {
        return Err(Error::Config(format!("synthetic scale must be 2 or 4, got {}", spec.scale)));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::Validation(format!("noise sigma {} must be finite and non-negative", spec.noise_sigma)));
    }
    let (h, w) = spec.size;
    let m = 8 * spec.scale;
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return shape(format!("size {h}x{w} must be a positive multiple of {m}"));
    }
    let reference = procedural_reference(spec.seed, h * spec.scale, w * spec.scale);
    let down = bicubic_resize(&reference, (h, w))?;
    let gain = 2f64.powf(spec.ev);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut low = down;
    for v in low.data_mut() {
        let n = if spec.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        *v = (v.clamp(0.0, 1.0) * gain + n).clamp(0.0, 1.0);
    }
    Ok((ImageTensor::new(low.cast())?, ImageTensor::new(reference.cast())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub low: PathBuf,
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    pub scale: usize,
    pub ev: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PairManifest {
    pub fn scale(&self) -> Option<usize> {
        self.entries.first().map(|e| e.scale)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the manifest with paths relative to `path`'s directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let entries: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                low: e.low.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| e.low.clone()),
                reference: e.reference.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| e.reference.clone()),
                ..e.clone()
            })
            .collect();
        let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<PairManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for (i, e) in entries.iter_mut().enumerate() {
        if ![1, 2, 4].contains(&e.scale) {
            return Err(Error::Validation(format!("entry {i}: scale {} not in {{1, 2, 4}}", e.scale)));
        }
        for p in [&mut e.low, &mut e.reference] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
            if !p.is_file() {
                return Err(Error::Validation(format!("entry {i}: file {} does not exist", p.display())));
            }
        }
    }
    if let Some(first) = entries.first() {
        if let Some(e) = entries.iter().find(|e| e.scale != first.scale) {
            return Err(Error::Validation(format!("mixed scales in manifest: {} and {}", first.scale, e.scale)));
        }
    }
    Ok(PairManifest { entries })
}

/// Loads every pair of a manifest, checking reference = scale × low size.
pub fn load_pairs(manifest: &PairManifest) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let low = load_image(&e.low)?;
            let reference = load_image(&e.reference)?;
            if reference.height() != e.scale * low.height() || reference.width() != e.scale * low.width() {
                return Err(Error::Validation(format!(
                    "{}: reference is {}x{}, expected {} times the {}x{} input",
                    e.reference.display(),
                    reference.height(),
                    reference.width(),
                    e.scale,
                    low.height(),
                    low.width()
                )));
            }
            Ok((low, reference))
        })
        .collect()
}
