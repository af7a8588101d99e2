//! Pure (tape-free) tensor kernels. Every op here is a plain function from
//! tensors to tensors plus, where needed, an explicit backward counterpart;
//! the tape in `crate::tape` strings them together.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;

use crate::error::{Error, Result};

/// Geometry of a (transposed) convolution. Per-axis values are ordered
/// `[w, h, z]` like tensor extents. `output_padding` only applies to the
/// transposed direction and must stay below the stride.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub output_padding: [usize; 3],
}

impl ConvSpec {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvSpec { kernel, stride, padding, groups: 1, output_padding: [0; 3] }
    }

    /// 3x3x3, stride 1, padding 1: the shape-preserving workhorse.
    pub fn k3s1p1() -> Self {
        ConvSpec::new([3; 3], [1; 3], [1; 3])
    }

    /// 1x1x1 pointwise mix.
    pub fn k1() -> Self {
        ConvSpec::new([1; 3], [1; 3], [0; 3])
    }

    /// 3x3x3 stride 2 halving step (even extents in, exact halves out).
    pub fn k3s2p1() -> Self {
        ConvSpec::new([3; 3], [2; 3], [1; 3])
    }

    /// 3x3x3 stride-2 transposed doubling step; output_padding 1 makes the
    /// output extent exactly 2x the input.
    pub fn k3s2p1_op1() -> Self {
        let mut s = ConvSpec::k3s2p1();
        s.output_padding = [1; 3];
        s
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.kernel[a] == 0 || self.stride[a] == 0 {
                return Err(Error::config(format!(
                    "kernel/stride must be positive, got {:?}/{:?}",
                    self.kernel, self.stride
                )));
            }
            if self.output_padding[a] >= self.stride[a] {
                return Err(Error::config(format!(
                    "output_padding {:?} must be below stride {:?}",
                    self.output_padding, self.stride
                )));
            }
        }
        if self.groups == 0 {
            return Err(Error::config("groups must be positive".to_string()));
        }
        Ok(())
    }

    /// Output extents in the forward direction:
    /// `floor((d + 2p - k) / s) + 1` per axis.
    pub fn conv_out_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::shape(format!(
                    "axis {a}: extent {} with padding {} is smaller than kernel {}",
                    input[a], self.padding[a], self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output extents in the transposed direction:
    /// `(d - 1) * s - 2p + k + output_padding` per axis.
    pub fn deconv_out_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let grown = (input[a] - 1) * self.stride[a] + self.kernel[a] + self.output_padding[a];
            let trim = 2 * self.padding[a];
            if grown <= trim {
                return Err(Error::shape(format!(
                    "axis {a}: transposed output extent would be non-positive \
                     (extent {}, spec {:?})",
                    input[a], self
                )));
            }
            out[a] = grown - trim;
        }
        Ok(out)
    }
}

/// Indices `o` in `[0, out_extent)` with `0 <= o*stride - pad + k_off < in_extent`,
/// returned as a half-open range. Used by the conv kernels to skip the
/// zero-padding region instead of branching per element.
#[inline]
pub(crate) fn valid_out_range(
    in_extent: usize,
    out_extent: usize,
    stride: usize,
    pad: usize,
    k_off: usize,
) -> (usize, usize) {
    let lo_num = pad as isize - k_off as isize;
    let lo = if lo_num <= 0 { 0 } else { (lo_num as usize + stride - 1) / stride };
    let hi_num = in_extent as isize - 1 + pad as isize - k_off as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = hi_num as usize / stride + 1;
    let lo = lo.min(out_extent);
    (lo, hi.min(out_extent).max(lo))
}


pub use activation::ActKind;
pub use pool::PoolKind;
