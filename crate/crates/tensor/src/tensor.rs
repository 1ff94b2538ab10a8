use crate::error::{shape_err, Result};
use crate::Real;

/// Row-major dense tensor. Scalars are stored with shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() {
            return shape_err("tensor rank must be at least 1");
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} elements, got {}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty(), "tensor rank must be at least 1");
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every linear index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        assert!(!shape.is_empty(), "tensor rank must be at least 1");
        let n: usize = shape.iter().product();
        Self { shape, data: (0..n).map(f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => shape_err(format!("expected rank-4 NCHW tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        off
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::c(v.f64())).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::c(self.data.len() as f64)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    /// One batch element of a rank-4 tensor, keeping the batch axis.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if n >= b {
            return shape_err(format!("batch index {n} out of range for batch {b}"));
        }
        let len = c * h * w;
        Ok(Self { shape: vec![1, c, h, w], data: self.data[n * len..(n + 1) * len].to_vec() })
    }

    /// Stacks rank-4 tensors with identical `(C,H,W)` along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let Some(first) = items.first() else {
            return shape_err("cannot stack an empty list");
        };
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::new();
        let mut b = 0;
        for t in items {
            let (tb, tc, th, tw) = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return shape_err(format!("stack: {:?} vs {:?}", t.shape, first.shape));
            }
            b += tb;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape: vec![b, c, h, w], data })
    }

    /// Spatial crop `[top, top+h) × [left, left+w)` of a rank-4 tensor.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (b, c, ih, iw) = self.dims4()?;
        if top + h > ih || left + w > iw {
            return shape_err(format!("crop {h}x{w}@({top},{left}) exceeds {ih}x{iw}"));
        }
        let mut data = Vec::with_capacity(b * c * h * w);
        for plane in self.data.chunks(ih * iw) {
            for y in top..top + h {
                data.extend_from_slice(&plane[y * iw + left..y * iw + left + w]);
            }
        }
        Ok(Self { shape: vec![b, c, h, w], data })
    }

    /// Mirror along the width (`horizontal`) or height axis.
    pub fn flip(&self, horizontal: bool) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        let mut out = Self::zeros([b, c, h, w]);
        for (src, dst) in self.data.chunks(h * w).zip(out.data.chunks_mut(h * w)) {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_element_count() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(Vec::<usize>::new(), vec![]).is_err());
        let t = Tensor::<f32>::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    fn crop_and_flip() {
        let t = Tensor::<f64>::from_fn([1, 1, 3, 3], |i| i as f64);
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0]);
        let f = t.flip(true).unwrap();
        assert_eq!(&f.data()[..3], &[2.0, 1.0, 0.0]);
        let v = t.flip(false).unwrap();
        assert_eq!(&v.data()[..3], &[6.0, 7.0, 8.0]);
    }
}
