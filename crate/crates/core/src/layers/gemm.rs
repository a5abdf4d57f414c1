use crate::tensor::Real;

/// Strided matrix view: `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [Real],
    pub rs: usize,
    pub cs: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Mutable strided matrix view.
pub(crate) struct ViewMut<'a> {
    pub data: &'a mut [Real],
    pub rs: usize,
    pub cs: usize,
}

/// `c = alpha * a·b + beta * c` where `a` is `m×k`, `b` is `k×n` and `c` is
/// `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: View<'_>,
    b: View<'_>,
    beta: Real,
    c: ViewMut<'_>,
) {
    assert!(a.data.len() >= span(m, k, a.rs, a.cs), "gemm: lhs too short");
    assert!(b.data.len() >= span(k, n, b.rs, b.cs), "gemm: rhs too short");
    assert!(c.data.len() >= span(m, n, c.rs, c.cs), "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        // [1 2; 3 4] · [5 6; 7 8]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(
            2,
            2,
            2,
            1.0,
            View { data: &a, rs: 2, cs: 1 },
            View { data: &b, rs: 2, cs: 1 },
            0.0,
            ViewMut { data: &mut c, rs: 2, cs: 1 },
        );
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // transposed lhs via strides
        gemm(
            2,
            2,
            2,
            1.0,
            View { data: &a, rs: 1, cs: 2 },
            View { data: &b, rs: 2, cs: 1 },
            0.0,
            ViewMut { data: &mut c, rs: 2, cs: 1 },
        );
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
