//! Scalar abstraction for all numerical code in this crate.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, Poisson, StandardNormal};

/// Floating-point scalar the toolkit is generic over.
///
/// Implemented for `f32` and `f64`. The sampling methods exist so that
/// stochastic code does not have to re-state `rand_distr` trait bounds at
/// every call site.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + rustfft::FftNum
    + std::iter::Sum<Self>
    + std::fmt::Display
    + std::fmt::LowerExp
{
    /// Shorthand conversion from an `f64` constant.
    fn c(x: f64) -> Self;

    /// Lossy widening to `f64` (exact for both implementors in range).
    fn f64(self) -> f64;

    /// One draw from the standard normal distribution.
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the unit-rate exponential distribution.
    fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the open interval (0, 1).
    fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One Poisson draw with the given mean; a non-positive mean yields 0.
    fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: Self) -> u64 {
        if mean <= Self::zero() {
            return 0;
        }
        Poisson::new(mean.f64()).expect("poisson mean must be finite").sample(rng) as u64
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn c(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
            #[inline]
            fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Exp1.sample(rng)
            }
            #[inline]
            fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
