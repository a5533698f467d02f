//! Element precision abstraction.
//!
//! Everything numeric in the crate is generic over [`Scalar`], which is
//! implemented for `f32` (training) and `f64` (gradient checks and
//! reproducibility tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Short name used in diagnostics.
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` for row/column strided matrices.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! check_extent {
    ($buf:expr, $rows:expr, $cols:expr, $rs:expr, $cs:expr) => {
        if $rows > 0 && $cols > 0 {
            let last = ($rows as isize - 1) * $rs + ($cols as isize - 1) * $cs;
            assert!(
                $rs >= 0 && $cs >= 0 && (last as usize) < $buf.len(),
                "gemm operand out of bounds"
            );
        }
    };
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_extent!(a, m, k, rsa, csa);
        check_extent!(b, k, n, rsb, csb);
        check_extent!(c, m, n, rsc, csc);
        // SAFETY: extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_extent!(a, m, k, rsa, csa);
        check_extent!(b, k, n, rsb, csb);
        check_extent!(c, m, n, rsc, csc);
        // SAFETY: extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}
