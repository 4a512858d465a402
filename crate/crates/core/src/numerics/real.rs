use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Strided read-only view of a matrix stored inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, F> {
    pub data: &'a [F],
    pub offset: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

/// Strided mutable view of a matrix stored inside a flat buffer.
#[derive(Debug)]
pub struct MatMut<'a, F> {
    pub data: &'a mut [F],
    pub offset: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a, F> MatRef<'a, F> {
    /// Row-major `rows x cols` block starting at `offset` with leading dimension `ld`.
    pub fn row_major(data: &'a [F], offset: usize, ld: usize) -> Self {
        MatRef {
            data,
            offset,
            row_stride: ld as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major block with leading dimension `ld`.
    pub fn transposed(data: &'a [F], offset: usize, ld: usize) -> Self {
        MatRef {
            data,
            offset,
            row_stride: 1,
            col_stride: ld as isize,
        }
    }
}

impl<'a, F> MatMut<'a, F> {
    pub fn row_major(data: &'a mut [F], offset: usize, ld: usize) -> Self {
        MatMut {
            data,
            offset,
            row_stride: ld as isize,
            col_stride: 1,
        }
    }

    pub fn transposed(data: &'a mut [F], offset: usize, ld: usize) -> Self {
        MatMut {
            data,
            offset,
            row_stride: 1,
            col_stride: ld as isize,
        }
    }
}

fn extent(offset: usize, rows: usize, cols: usize, rs: isize, cs: isize) -> (isize, isize) {
    let mut lo = offset as isize;
    let mut hi = offset as isize;
    for (n, s) in [(rows, rs), (cols, cs)] {
        if n == 0 {
            continue;
        }
        let reach = (n as isize - 1) * s;
        if reach < 0 {
            lo += reach;
        } else {
            hi += reach;
        }
    }
    (lo, hi)
}

fn check_view(len: usize, offset: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let (lo, hi) = extent(offset, rows, cols, rs, cs);
    assert!(
        lo >= 0 && (hi as usize) < len,
        "matrix view [{rows}x{cols}] at {offset} (strides {rs},{cs}) exceeds buffer of {len}"
    );
}

/// Floating point scalar used throughout the engine.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;

    /// `c = alpha * a(m x k) * b(k x n) + beta * c(m x n)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        beta: Self,
        c: MatMut<'_, Self>,
    );

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $bytes:expr) => {
        impl Real for $t {
            const BYTES: usize = $bytes;

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: MatRef<'_, Self>,
                b: MatRef<'_, Self>,
                beta: Self,
                c: MatMut<'_, Self>,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_view(c.data.len(), c.offset, m, n, c.row_stride, c.col_stride);
                if k == 0 {
                    for i in 0..m {
                        for j in 0..n {
                            let idx = (c.offset as isize
                                + i as isize * c.row_stride
                                + j as isize * c.col_stride)
                                as usize;
                            c.data[idx] *= beta;
                        }
                    }
                    return;
                }
                check_view(a.data.len(), a.offset, m, k, a.row_stride, a.col_stride);
                check_view(b.data.len(), b.offset, k, n, b.row_stride, b.col_stride);
                // SAFETY: every element touched lies inside the checked extents above,
                // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr().add(a.offset),
                        a.row_stride,
                        a.col_stride,
                        b.data.as_ptr().add(b.offset),
                        b.row_stride,
                        b.col_stride,
                        beta,
                        c.data.as_mut_ptr().add(c.offset),
                        c.row_stride,
                        c.col_stride,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, 4);
impl_real!(f64, matrixmultiply::dgemm, 8);

/// Dot product with a fixed eight-lane accumulation order.
///
/// The order does not depend on how callers batch their work, so results are
/// bit-identical between serial and parallel execution.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_strides() {
        // a is 2x3 stored transposed (3x2 row-major)
        let a_t = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = vec![0.0f64; 4];
        f64::gemm_raw(
            2,
            3,
            2,
            1.0,
            MatRef::transposed(&a_t, 0, 2),
            MatRef::row_major(&b, 0, 2),
            0.0,
            MatMut::row_major(&mut c, 0, 2),
        );
        assert_eq!(c, vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    #[should_panic]
    fn gemm_rejects_out_of_bounds_view() {
        let a = [1.0f32; 4];
        let mut c = vec![0.0f32; 4];
        f32::gemm_raw(
            2,
            3,
            2,
            1.0,
            MatRef::row_major(&a, 0, 3),
            MatRef::row_major(&a, 0, 2),
            0.0,
            MatMut::row_major(&mut c, 0, 2),
        );
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(f64::from).collect();
        let expect: f64 = a.iter().map(|x| x * x).sum();
        assert_eq!(dot(&a, &a), expect);
    }
}
