//! Scalar abstraction used by every numeric module.
//!
//! All core math is generic over [`Real`], which gathers the num-traits and
//! nalgebra bounds needed for dense linear algebra, transcendentals and
//! float conversions. `f32` and `f64` implement it; the crate root exports
//! concrete aliases for both.

use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar: everything the estimation pipeline needs from a
/// number type.
pub trait Real:
    Copy + nalgebra::RealField + FloatConst + FromPrimitive + ToPrimitive
{
}

impl<T> Real for T where
    T: Copy + nalgebra::RealField + FloatConst + FromPrimitive + ToPrimitive
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// Validation tolerance that is `base` for f64 but widens for lower-precision
/// scalars, where sums over many terms cannot hit f64-grade tolerances.
#[inline]
pub fn scaled_tol<T: Real>(base: f64) -> T {
    let floor: T = real::<T>(base);
    let eps_based = T::default_epsilon() * real::<T>(100.0);
    if eps_based > floor {
        eps_based
    } else {
        floor
    }
}
