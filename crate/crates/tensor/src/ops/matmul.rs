use crate::error::{shape_err, Result};
use crate::gemm::{gemm, MatLayout};
use crate::{Real, Tensor};

/// Logical `(batch, rows, cols)` of a rank-3 operand, honouring transposition.
fn dims(t: &Tensor<impl Real>, transposed: bool) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, r, c] => Ok(if transposed { (b, c, r) } else { (b, r, c) }),
        _ => shape_err(format!("bmm expects rank-3 operands, got {:?}", t.shape())),
    }
}

fn layout(stored_cols: usize, transposed: bool) -> MatLayout {
    if transposed {
        MatLayout::transposed(stored_cols)
    } else {
        MatLayout::row_major(stored_cols)
    }
}

/// Batched `op(a) · op(b)` where `op` optionally transposes the last two axes.
pub fn bmm<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let (ba, m, k) = dims(a, ta)?;
    let (bb, k2, n) = dims(b, tb)?;
    if ba != bb || k != k2 {
        return shape_err(format!("bmm: {:?}{} x {:?}{}", a.shape(), if ta { "ᵀ" } else { "" }, b.shape(), if tb { "ᵀ" } else { "" }));
    }
    let mut out = Tensor::zeros([ba, m, n]);
    let (sa, sb) = (a.shape()[2], b.shape()[2]);
    for i in 0..ba {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            layout(sa, ta),
            &b.data()[i * k * n..(i + 1) * k * n],
            layout(sb, tb),
            &mut out.data_mut()[i * m * n..(i + 1) * m * n],
            MatLayout::row_major(n),
            false,
        );
    }
    Ok(out)
}

/// Gradients of `bmm` w.r.t. both operands, in their stored layouts.
pub fn bmm_backward<T: Real>(
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
    g: &Tensor<T>,
    need: (bool, bool),
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (batch, m, k) = dims(a, ta)?;
    let (_, _, n) = dims(b, tb)?;
    let (sa, sb) = (a.shape()[2], b.shape()[2]);
    let da = need.0.then(|| {
        let mut da = Tensor::zeros(a.shape().to_vec());
        for i in 0..batch {
            // dA (m×k) = G (m×n) · op(B)ᵀ
            gemm(
                m,
                n,
                k,
                &g.data()[i * m * n..(i + 1) * m * n],
                MatLayout::row_major(n),
                &b.data()[i * k * n..(i + 1) * k * n],
                layout(sb, !tb),
                &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                layout(sa, ta),
                false,
            );
        }
        da
    });
    let db = need.1.then(|| {
        let mut db = Tensor::zeros(b.shape().to_vec());
        for i in 0..batch {
            // dB (k×n) = op(A)ᵀ · G
            gemm(
                k,
                m,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                layout(sa, !ta),
                &g.data()[i * m * n..(i + 1) * m * n],
                MatLayout::row_major(n),
                &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                layout(sb, tb),
                false,
            );
        }
        db
    });
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_operands_match_naive_loops() {
        let a = Tensor::<f64>::from_fn([2, 3, 4], |i| (i as f64 * 0.3).sin());
        let b = Tensor::<f64>::from_fn([2, 5, 4], |i| (i as f64 * 0.7).cos());
        let c = bmm(&a, false, &b, true).unwrap();
        assert_eq!(c.shape(), &[2, 3, 5]);
        for bi in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let want: f64 = (0..4).map(|l| a.at(&[bi, i, l]) * b.at(&[bi, j, l])).sum();
                    assert!((c.at(&[bi, i, j]) - want).abs() < 1e-12);
                }
            }
        }
        let g = Tensor::from_fn([2, 3, 5], |i| i as f64 * 0.01);
        let (da, db) = bmm_backward(&a, false, &b, true, &g, (true, true)).unwrap();
        let lhs: f64 = c.data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
        let ra: f64 = a.data().iter().zip(da.unwrap().data()).map(|(x, y)| x * y).sum();
        let rb: f64 = b.data().iter().zip(db.unwrap().data()).map(|(x, y)| x * y).sum();
        assert!((lhs - ra).abs() < 1e-10 && (lhs - rb).abs() < 1e-10);
    }
}
