use crate::Real;

/// Row/column strides of a matrix view into a flat slice.
#[derive(Debug, Clone, Copy)]
pub struct MatLayout {
    pub rs: usize,
    pub cs: usize,
}

impl MatLayout {
    /// Row-major matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self { rs: 1, cs: cols }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs
        }
    }
}

/// `c = a·b + (accumulate ? c : 0)` for an `m×k` by `k×n` product.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    c: &mut [T],
    lc: MatLayout,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m * k == 0 || la.max_offset(m, k) < a.len(), "gemm: lhs out of bounds");
    assert!(k * n == 0 || lb.max_offset(k, n) < b.len(), "gemm: rhs out of bounds");
    assert!(lc.max_offset(m, n) < c.len(), "gemm: output out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            for i in 0..m {
                for j in 0..n {
                    c[i * lc.rs + j * lc.cs] = T::zero();
                }
            }
        }
        return;
    }
    // SAFETY: bounds verified above for every addressed element.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}
