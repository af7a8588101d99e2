use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssignOps};

/// Element type for tensors. f32 is the working precision for training and
/// checkpoints; f64 exists so gradient checks can run the same code with
/// enough headroom for central differences.
pub trait Scalar:
    Float + NumAssignOps + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Gauss error function, used by the exact (non-tanh) gelu. Routed
    /// through f64 in both impls: libm has no erff, and the f32 round-trip
    /// costs nothing at desk scale.
    fn erf(self) -> Self {
        Self::from_f64(libm::erf(self.as_f64()))
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
