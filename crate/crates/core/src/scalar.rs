//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used by the linear algebra, alignment, transfer
/// and regression code. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every float scalar")
    }

    fn from_f32_lossy(v: f32) -> Self {
        Self::from_f32(v).expect("f32 converts to every float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every float scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity. A zero vector has similarity 0 with everything.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    let c = dot(a, b) / (na.sqrt() * nb.sqrt());
    // rounding can push |c| marginally past 1
    c.max(-S::one()).min(S::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0f64, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(cosine(&[0.0f32; 3], &[0.0f32; 3]), 0.0);
    }

    #[test]
    fn cosine_basic() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine(&[1.0f64, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0f32, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-6);
    }
}
