use super::Scalar;

/// Strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> View<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            offset: 0,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            offset: 0,
            row_stride: 1,
            col_stride: cols,
        }
    }

    pub fn at(self, offset: usize) -> Self {
        View { offset, ..self }
    }
}

pub(crate) struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> ViewMut<'a, T> {
    pub fn row_major(data: &'a mut [T], cols: usize) -> Self {
        ViewMut {
            data,
            offset: 0,
            row_stride: cols,
            col_stride: 1,
        }
    }
}

fn last_index(offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    offset + (rows - 1) * rs + (cols - 1) * cs
}

/// `c = alpha * a·b + beta * c` where `a` is `m × k` and `b` is `k × n`.
///
/// Rows of `c` must not overlap each other within one call.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: View<'_, T>,
    b: View<'_, T>,
    beta: T,
    c: ViewMut<'_, T>,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = c.offset + i * c.row_stride + j * c.col_stride;
                c.data[idx] = if beta == T::zero() {
                    T::zero()
                } else {
                    beta * c.data[idx]
                };
            }
        }
        return;
    }
    assert!(last_index(a.offset, m, k, a.row_stride, a.col_stride) < a.data.len());
    assert!(last_index(b.offset, k, n, b.row_stride, b.col_stride) < b.data.len());
    assert!(last_index(c.offset, m, n, c.row_stride, c.col_stride) < c.data.len());
    // SAFETY: the asserts above bound every element reachable through the
    // given strides; `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            c.col_stride as isize,
        );
    }
}
