//! Scalar abstraction for the statistical core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar the core math is generic over.
///
/// Blanket-implemented for `f32` and `f64`. `f64` is the default used by
/// the simulation harness and the wire protocol.
pub trait Real: Float + Sum + Debug + Display + Send + Sync + 'static {}

impl<T> Real for T where T: Float + Sum + Debug + Display + Send + Sync + 'static {}

/// Converts an `f64` constant into the scalar type.
///
/// Panics only if the target type cannot represent any finite `f64`,
/// which no `Real` impl in this crate does.
#[inline]
pub(crate) fn c<R: Real>(x: f64) -> R {
    R::from(x).expect("finite constant representable in scalar type")
}
