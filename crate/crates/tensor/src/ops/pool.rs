use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

/// 2×2 stride-2 max pooling. Returns the pooled tensor and, for each output
/// element, the flat offset of the selected input element.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return shape_err(format!("max_pool2 needs spatial size >= 2, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([b, c, oh, ow]);
    let mut arg = vec![0usize; b * c * oh * ow];
    let xd = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                let o = plane * oh * ow + y * ow + xx;
                out.data_mut()[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Real>(g: &Tensor<T>, arg: &[usize], in_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape.to_vec());
    for (&a, &v) in arg.iter().zip(g.data()) {
        dx.data_mut()[a] += v;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum() {
        let x = Tensor::<f64>::new([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let g = Tensor::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let dx = max_pool2_backward(&g, &arg, x.shape());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }
}
