use std::fmt::{Debug, Display};

/// Element precision of a tensor.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Precision {
    Single,
    Double,
}

/// Floating-point element type: f32 or f64.
///
/// Inference paths run in single precision; gradient checks require double
/// precision (central finite differences drown in f32 rounding noise).
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}
