//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar used by the protocol, statistics and engine layers.
///
/// Implemented for `f32` and `f64`. Special functions without a generic
/// implementation are evaluated in `f64` and narrowed.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn erfc(self) -> Self {
        Self::lit(libm::erfc(self.as_f64()))
    }

    fn erfc_inv(self) -> Self {
        Self::lit(statrs::function::erf::erfc_inv(self.as_f64()))
    }

    /// Relative tolerance that is meaningful for this precision.
    fn default_rel_tol() -> Self;
}

impl Real for f32 {
    fn default_rel_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn default_rel_tol() -> Self {
        1e-12
    }
}

/// `log(sum(exp(xs)))`, stable for large negative inputs.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Subtracts `log_sum_exp(xs)` in place so that `exp(xs)` sums to one.
pub fn normalize_log<T: Real>(xs: &mut [T]) {
    let z = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_handles_underflowing_terms() {
        let xs = [-1000.0_f64, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let xs32 = [-200.0_f32, -200.0];
        assert!((log_sum_exp(&xs32) - (-200.0 + 2f32.ln())).abs() < 1e-4);
    }

    #[test]
    fn lse_of_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn normalized_vectors_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            let mut v = v;
            normalize_log(&mut v);
            let s: f64 = v.iter().map(|x| x.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(log_sum_exp(&v).abs() < 1e-12);
        }
    }
}
