//! Thin row-major wrapper over `matrixmultiply::dgemm`.

/// Strided view of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> Mat<'a> {
    /// Row-major matrix with `cols` columns.
    pub fn rm(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn rm_t(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }

    pub fn strided(data: &'a [f64], rs: usize, cs: usize) -> Self {
        Self {
            data,
            rs: rs as isize,
            cs: cs as isize,
        }
    }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, with `c` row-major (row stride `ldc`).
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // Bounds: the furthest element touched in each operand must be in range.
    debug_assert!(((m - 1) as isize * a.rs + (k - 1) as isize * a.cs) < a.data.len() as isize);
    debug_assert!(((k - 1) as isize * b.rs + (n - 1) as isize * b.cs) < b.data.len() as isize);
    assert!((m - 1) * ldc + n <= c.len());
    // SAFETY: the operand extents are checked above and dgemm only reads/writes inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
