//! Scalar abstraction so the whole pipeline runs in either f32 or f64.
//!
//! Training uses f32; gradient checking against finite differences runs the
//! same code paths in f64.

use std::fmt::Debug;

/// Floating-point scalar usable throughout the tensor engine and models.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Strided matrix multiply `c += a · b` with `a` m×k, `b` k×n and `c` m×n
    /// row-major. Row/col strides of `a` and `b` are explicit so transposed
    /// views cost nothing.
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
    );

    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        c: &mut [f32],
    ) {
        debug_assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        c: &mut [f64],
    ) {
        debug_assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// `c += a (m×k, row-major) · b (k×n, row-major)`.
pub fn gemm_nn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_acc(m, k, n, a, k as isize, 1, b, n as isize, 1, c);
}

/// `c += a (m×k, row-major) · bᵀ` where `b` is stored n×k row-major.
pub fn gemm_nt<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_acc(m, k, n, a, k as isize, 1, b, 1, k as isize, c);
}

/// `c += aᵀ · b` where `a` is stored k×m row-major and `b` k×n row-major.
pub fn gemm_tn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    F::gemm_acc(m, k, n, a, 1, m as isize, b, n as isize, 1, c);
}
