use super::Tensor;
use crate::error::{Error, Result};

/// Strided view of a row-major matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatLayout {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatLayout {
    /// Plain row-major `[rows × cols]` matrix starting at 0.
    pub fn rm(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn rm_t(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: 1,
            col_stride: cols,
        }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c = alpha * a[m×k] * b[k×n] + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: MatLayout,
    b: &[f64],
    lb: MatLayout,
    beta: f64,
    c: &mut [f64],
    lc: MatLayout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = lc.offset + i * lc.row_stride + j * lc.col_stride;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(la.last_index(m, k) < a.len(), "gemm: lhs view out of bounds");
    assert!(lb.last_index(k, n) < b.len(), "gemm: rhs view out of bounds");
    assert!(lc.last_index(m, n) < c.len(), "gemm: output view out of bounds");
    // SAFETY: every index reachable through the three views was bounds
    // checked above, and `c` is uniquely borrowed so it cannot alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr().add(lb.offset),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}

/// Plain matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        a.data(),
        MatLayout::rm(k),
        b.data(),
        MatLayout::rm(n),
        0.0,
        &mut out,
        MatLayout::rm(n),
    );
    Tensor::matrix(m, n, out)
}
