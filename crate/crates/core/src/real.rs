//! Scalar abstraction so the forward/backward kernels can run in either
//! f32 (deployment storage) or f64 (gradient verification) without
//! duplicating kernel code.

use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Floating-point scalar usable by the numeric kernels.
///
/// Implemented for `f32` and `f64` only. Conversions to and from both
/// widths are explicit so callers control every rounding point.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, rhs: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty, $sqrt:path, $exp:path, $ln:path, $fabs:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn from_usize(v: usize) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f32(self) -> f32 {
                self as f32
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline(always)]
            fn sqrt(self) -> Self {
                #[cfg(feature = "std")]
                {
                    self.sqrt()
                }
                #[cfg(not(feature = "std"))]
                {
                    $sqrt(self)
                }
            }
            #[inline(always)]
            fn exp(self) -> Self {
                #[cfg(feature = "std")]
                {
                    self.exp()
                }
                #[cfg(not(feature = "std"))]
                {
                    $exp(self)
                }
            }
            #[inline(always)]
            fn ln(self) -> Self {
                #[cfg(feature = "std")]
                {
                    self.ln()
                }
                #[cfg(not(feature = "std"))]
                {
                    $ln(self)
                }
            }
            #[inline(always)]
            fn abs(self) -> Self {
                #[cfg(feature = "std")]
                {
                    self.abs()
                }
                #[cfg(not(feature = "std"))]
                {
                    $fabs(self)
                }
            }
            #[inline(always)]
            fn max(self, rhs: Self) -> Self {
                if self > rhs {
                    self
                } else {
                    rhs
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f32, libm::sqrtf, libm::expf, libm::logf, libm::fabsf);
impl_real!(f64, libm::sqrt, libm::exp, libm::log, libm::fabs);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(<f32 as Real>::from_f64(1.5).to_f64(), 1.5);
        assert_eq!(<f64 as Real>::from_f32(2.25).to_f32(), 2.25);
        assert_eq!(<f64 as Real>::from_usize(7), 7.0);
    }

    #[test]
    fn math_matches_std() {
        let x: f64 = 2.0;
        assert_eq!(Real::sqrt(x), x.sqrt());
        assert_eq!(Real::exp(x), x.exp());
        assert_eq!(Real::ln(x), x.ln());
        assert_eq!(Real::abs(-x), x);
        assert_eq!(Real::max(1.0f32, 2.0), 2.0);
        assert!(Real::is_finite(1.0f32));
        assert!(!Real::is_finite(f32::NAN));
    }
}
