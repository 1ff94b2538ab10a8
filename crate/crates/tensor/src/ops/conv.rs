//! 2-D convolution (cross-correlation) over NCHW tensors.
//!
//! Dense and grouped convolutions go through im2col + GEMM; the depth-wise
//! case (one input and one output channel per group) uses direct loops.

use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatLayout};
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: 1, pad: 0, groups: 1 }
    }
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, pad: kernel / 2, groups: 1 }
    }
}

struct Geometry {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cig: usize,
    cog: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Real>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Geometry> {
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, cig, kh, kw) = w.dims4()?;
    let g = spec.groups;
    if g == 0 || spec.stride == 0 || cin % g != 0 || cout % g != 0 || cin / g != cig {
        return shape_err(format!(
            "conv2d: input {:?} incompatible with weight {:?} (groups {g})",
            x.shape(),
            w.shape()
        ));
    }
    if h + 2 * spec.pad < kh || wd + 2 * spec.pad < kw {
        return shape_err(format!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}"));
    }
    let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
    let ow = (wd + 2 * spec.pad - kw) / spec.stride + 1;
    Ok(Geometry { b, cin, h, w: wd, cout, cig, cog: cout / g, kh, kw, oh, ow })
}

fn is_pointwise(geo: &Geometry, spec: ConvSpec) -> bool {
    geo.kh == 1 && geo.kw == 1 && spec.stride == 1 && spec.pad == 0
}

fn is_depthwise(geo: &Geometry, spec: ConvSpec) -> bool {
    spec.groups == geo.cin && geo.cig == 1 && geo.cog == 1
}

/// Fills `cols` (`cig·kh·kw × oh·ow`) from one group of one image.
fn im2col<T: Real>(src: &[T], geo: &Geometry, spec: ConvSpec, cols: &mut [T]) {
    let p = geo.oh * geo.ow;
    let (s, pad) = (spec.stride as isize, spec.pad as isize);
    for c in 0..geo.cig {
        let plane = &src[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = ((c * geo.kh + ki) * geo.kw + kj) * p;
                for oy in 0..geo.oh {
                    let iy = oy as isize * s + ki as isize - pad;
                    let dst = &mut cols[row + oy * geo.ow..row + (oy + 1) * geo.ow];
                    if iy < 0 || iy >= geo.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * geo.w..(iy as usize + 1) * geo.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - pad;
                        *d = if ix < 0 || ix >= geo.w as isize { T::zero() } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto one group of one image (adjoint of im2col).
fn col2im<T: Real>(cols: &[T], geo: &Geometry, spec: ConvSpec, dst: &mut [T]) {
    let p = geo.oh * geo.ow;
    let (s, pad) = (spec.stride as isize, spec.pad as isize);
    for c in 0..geo.cig {
        let plane = &mut dst[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = ((c * geo.kh + ki) * geo.kw + kj) * p;
                for oy in 0..geo.oh {
                    let iy = oy as isize * s + ki as isize - pad;
                    if iy < 0 || iy >= geo.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * geo.ow..row + (oy + 1) * geo.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - pad;
                        if ix >= 0 && ix < geo.w as isize {
                            plane[iy as usize * geo.w + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Valid output column range `[lo, hi)` for kernel column offset `kj`.
fn col_range(geo: &Geometry, spec: ConvSpec, kj: usize) -> (usize, usize) {
    let (s, pad) = (spec.stride as isize, spec.pad as isize);
    let mut lo = 0usize;
    while lo < geo.ow && (lo as isize * s + kj as isize - pad) < 0 {
        lo += 1;
    }
    let mut hi = geo.ow;
    while hi > lo && ((hi - 1) as isize * s + kj as isize - pad) >= geo.w as isize {
        hi -= 1;
    }
    (lo, hi)
}

pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let geo = geometry(x, w, spec)?;
    if let Some(b) = bias {
        if b.numel() != geo.cout {
            return shape_err(format!("conv2d: bias has {} entries for {} outputs", b.numel(), geo.cout));
        }
    }
    let p = geo.oh * geo.ow;
    let mut out = Tensor::zeros([geo.b, geo.cout, geo.oh, geo.ow]);
    if is_depthwise(&geo, spec) {
        depthwise_forward(x.data(), w.data(), &geo, spec, out.data_mut());
    } else {
        let k = geo.cig * geo.kh * geo.kw;
        let pointwise = is_pointwise(&geo, spec);
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
        for n in 0..geo.b {
            for g in 0..spec.groups {
                let xs = &x.data()[(n * geo.cin + g * geo.cig) * geo.h * geo.w..][..geo.cig * geo.h * geo.w];
                let cmat: &[T] = if pointwise {
                    xs
                } else {
                    im2col(xs, &geo, spec, &mut cols);
                    &cols
                };
                let wg = &w.data()[g * geo.cog * k..(g + 1) * geo.cog * k];
                let o = &mut out.data_mut()[(n * geo.cout + g * geo.cog) * p..][..geo.cog * p];
                gemm(geo.cog, k, p, wg, MatLayout::row_major(k), cmat, MatLayout::row_major(p), o, MatLayout::row_major(p), false);
            }
        }
    }
    if let Some(b) = bias {
        for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
            let bv = b.data()[i % geo.cout];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

fn depthwise_forward<T: Real>(x: &[T], w: &[T], geo: &Geometry, spec: ConvSpec, out: &mut [T]) {
    let (s, pad) = (spec.stride as isize, spec.pad as isize);
    for n in 0..geo.b {
        for c in 0..geo.cin {
            let src = &x[(n * geo.cin + c) * geo.h * geo.w..][..geo.h * geo.w];
            let dst = &mut out[(n * geo.cout + c) * geo.oh * geo.ow..][..geo.oh * geo.ow];
            for ki in 0..geo.kh {
                for kj in 0..geo.kw {
                    let wv = w[(c * geo.kh + ki) * geo.kw + kj];
                    let (lo, hi) = col_range(geo, spec, kj);
                    for oy in 0..geo.oh {
                        let iy = oy as isize * s + ki as isize - pad;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * geo.w..];
                        let drow = &mut dst[oy * geo.ow..(oy + 1) * geo.ow];
                        for ox in lo..hi {
                            let ix = (ox as isize * s + kj as isize - pad) as usize;
                            drow[ox] += wv * srow[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients `(dx, dw, dbias)`; each is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let geo = geometry(x, w, spec)?;
    let p = geo.oh * geo.ow;
    let db = need.2.then(|| {
        let mut db = Tensor::zeros([geo.cout]);
        for (i, plane) in gy.data().chunks(p).enumerate() {
            db.data_mut()[i % geo.cout] += plane.iter().copied().sum();
        }
        db
    });
    if is_depthwise(&geo, spec) {
        let (dx, dw) = depthwise_backward(x.data(), w.data(), gy.data(), &geo, spec, need);
        return Ok(ConvGrads {
            dx: dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
            dw: dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
            db,
        });
    }
    let k = geo.cig * geo.kh * geo.kw;
    let pointwise = is_pointwise(&geo, spec);
    let mut dx = need.0.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need.1.then(|| Tensor::zeros(w.shape().to_vec()));
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if pointwise || !need.0 { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..geo.b {
        for g in 0..spec.groups {
            let xoff = (n * geo.cin + g * geo.cig) * geo.h * geo.w;
            let xs = &x.data()[xoff..][..geo.cig * geo.h * geo.w];
            let gys = &gy.data()[(n * geo.cout + g * geo.cog) * p..][..geo.cog * p];
            let wg = &w.data()[g * geo.cog * k..(g + 1) * geo.cog * k];
            if let Some(dw) = dw.as_mut() {
                let cmat: &[T] = if pointwise {
                    xs
                } else {
                    im2col(xs, &geo, spec, &mut cols);
                    &cols
                };
                let dwg = &mut dw.data_mut()[g * geo.cog * k..(g + 1) * geo.cog * k];
                gemm(geo.cog, p, k, gys, MatLayout::row_major(p), cmat, MatLayout::transposed(p), dwg, MatLayout::row_major(k), true);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[xoff..][..geo.cig * geo.h * geo.w];
                if pointwise {
                    gemm(k, geo.cog, p, wg, MatLayout::transposed(k), gys, MatLayout::row_major(p), dxs, MatLayout::row_major(p), true);
                } else {
                    gemm(k, geo.cog, p, wg, MatLayout::transposed(k), gys, MatLayout::row_major(p), &mut dcols, MatLayout::row_major(p), false);
                    col2im(&dcols, &geo, spec, dxs);
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

#[allow(clippy::type_complexity)]
fn depthwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    geo: &Geometry,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (s, pad) = (spec.stride as isize, spec.pad as isize);
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    for n in 0..geo.b {
        for c in 0..geo.cin {
            let xoff = (n * geo.cin + c) * geo.h * geo.w;
            let g = &gy[(n * geo.cout + c) * geo.oh * geo.ow..][..geo.oh * geo.ow];
            for ki in 0..geo.kh {
                for kj in 0..geo.kw {
                    let widx = (c * geo.kh + ki) * geo.kw + kj;
                    let wv = w[widx];
                    let (lo, hi) = col_range(geo, spec, kj);
                    let mut acc = T::zero();
                    for oy in 0..geo.oh {
                        let iy = oy as isize * s + ki as isize - pad;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        let row = xoff + iy as usize * geo.w;
                        let grow = &g[oy * geo.ow..(oy + 1) * geo.ow];
                        for ox in lo..hi {
                            let ix = (ox as isize * s + kj as isize - pad) as usize;
                            acc += grow[ox] * x[row + ix];
                            if let Some(dx) = dx.as_mut() {
                                dx[row + ix] += grow[ox] * wv;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop reference convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, cig, kh, kw) = w.dims4().unwrap();
        let cog = cout / spec.groups;
        let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
        let ow = (wd + 2 * spec.pad - kw) / spec.stride + 1;
        let _ = cin;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for bn in 0..n {
            for co in 0..cout {
                let g = co / cog;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..cig {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                                    let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.at(&[co, ci, ki, kj]) * x.at(&[bn, g * cig + ci, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[bn, co, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: [usize; 4], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + seed) * 0.618).sin())
    }

    #[test]
    fn matches_naive_for_all_paths() {
        let cases = [
            ([2, 3, 5, 6], [4, 3, 3, 3], ConvSpec { stride: 1, pad: 1, groups: 1 }),
            ([1, 4, 7, 7], [6, 4, 3, 3], ConvSpec { stride: 2, pad: 1, groups: 1 }),
            ([2, 4, 5, 5], [4, 1, 3, 3], ConvSpec { stride: 1, pad: 1, groups: 4 }),
            ([1, 4, 6, 6], [4, 1, 3, 3], ConvSpec { stride: 2, pad: 1, groups: 4 }),
            ([2, 6, 4, 4], [4, 3, 1, 1], ConvSpec { stride: 1, pad: 0, groups: 2 }),
            ([1, 5, 4, 3], [7, 5, 1, 1], ConvSpec::default()),
        ];
        for (xs, ws, spec) in cases {
            let x = pseudo(xs, 0.3);
            let w = pseudo(ws, 1.7);
            let b = Tensor::from_fn([ws[0]], |i| i as f64 * 0.1);
            let got = conv2d(&x, &w, Some(&b), spec).unwrap();
            let want = naive(&x, &w, &b, spec);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> must equal <x, dx> and <w, dw> by linearity.
        let cases = [
            ([2, 3, 5, 6], [4, 3, 3, 3], ConvSpec { stride: 1, pad: 1, groups: 1 }),
            ([1, 4, 7, 7], [6, 4, 3, 3], ConvSpec { stride: 2, pad: 1, groups: 1 }),
            ([1, 4, 6, 6], [4, 1, 3, 3], ConvSpec { stride: 2, pad: 1, groups: 4 }),
            ([1, 5, 4, 3], [7, 5, 1, 1], ConvSpec::default()),
        ];
        for (xs, ws, spec) in cases {
            let x = pseudo(xs, 0.3);
            let w = pseudo(ws, 1.7);
            let y = conv2d(&x, &w, None, spec).unwrap();
            let g = Tensor::from_fn(y.shape().to_vec(), |i| ((i as f64) * 0.37).cos());
            let grads = conv2d_backward(&x, &w, &g, spec, (true, true, true)).unwrap();
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rx: f64 = x.data().iter().zip(grads.dx.unwrap().data()).map(|(a, b)| a * b).sum();
            let rw: f64 = w.data().iter().zip(grads.dw.unwrap().data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rx).abs() < 1e-9, "dx adjoint {spec:?}");
            assert!((lhs - rw).abs() < 1e-9, "dw adjoint {spec:?}");
        }
    }

    #[test]
    fn rejects_inconsistent_groups() {
        let x = Tensor::<f64>::zeros([1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros([4, 2, 3, 3]);
        assert!(conv2d(&x, &w, None, ConvSpec::same(3)).is_err());
    }
}
