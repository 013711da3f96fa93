//! Scalar abstraction shared by the model, the verifier and the extractors.
//!
//! Everything that only needs ordered field arithmetic (budgets, quantized
//! grids, exhaustive search) is generic over [`Scalar`], so it runs on `f32`,
//! `f64` or exact rationals. Code that needs square roots or distances in
//! colour space additionally asks for [`Real`].

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Signed, ToPrimitive};

pub trait Scalar:
    Clone + Debug + PartialOrd + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Absolute slack allowed when testing `|gamma| <= lambda`.
    fn budget_tolerance() -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("value not representable in scalar type")
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smaller of two values; the first wins on ties and incomparable inputs.
    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn budget_tolerance() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn budget_tolerance() -> Self {
        1e-6
    }
}

impl Scalar for Ratio<i64> {
    fn budget_tolerance() -> Self {
        Ratio::from_integer(0)
    }
}

impl Scalar for Ratio<i128> {
    fn budget_tolerance() -> Self {
        Ratio::from_integer(0)
    }
}

/// Floating point scalars.
pub trait Real: Scalar + Float {}

impl<T: Scalar + Float> Real for T {}
