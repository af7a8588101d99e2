//! Element-wise arithmetic, channel concat/slice, and the scalar reduction.
//! Multiplication supports extent-1 broadcasting on any axis of two rank-5
//! tensors (that covers gate * feature and global-context products); other
//! ops require exact shape agreement.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    b.ensure_shape(a.shape(), "add")?;
    a.ensure_finite("add lhs")?;
    b.ensure_finite("add rhs")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn scale<S: Scalar>(a: &Tensor<S>, factor: S) -> Result<Tensor<S>> {
    if !factor.is_finite() {
        return Err(Error::numeric(format!("scale factor {factor} is not finite")));
    }
    a.ensure_finite("scale input")?;
    let data = a.data().iter().map(|&x| x * factor).collect();
    Tensor::new(a.shape(), data)
}

/// Shape of `a (*) b` under extent-1 broadcasting, or an error if some axis
/// disagrees.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<[usize; 5]> {
    let (a5, b5) = match (a, b) {
        (&[a0, a1, a2, a3, a4], &[b0, b1, b2, b3, b4]) => ([a0, a1, a2, a3, a4], [b0, b1, b2, b3, b4]),
        _ => return Err(Error::shape("broadcast needs two rank-5 tensors")),
    };
    let mut out = [0usize; 5];
    for i in 0..5 {
        out[i] = match (a5[i], b5[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::shape(format!(
                    "axis {i}: extents {x} and {y} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

fn strides5(shape: [usize; 5]) -> [usize; 5] {
    let mut s = [0usize; 5];
    s[4] = 1;
    for i in (0..4).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides for reading operand `shape` as if it had `out` extents: broadcast
/// axes get stride 0.
fn broadcast_strides(shape: [usize; 5], out: [usize; 5]) -> [usize; 5] {
    let real = strides5(shape);
    let mut s = [0usize; 5];
    for i in 0..5 {
        s[i] = if shape[i] == out[i] { real[i] } else { 0 };
    }
    s
}

fn shape5(shape: &[usize]) -> [usize; 5] {
    [shape[0], shape[1], shape[2], shape[3], shape[4]]
}

pub fn mul_broadcast<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    a.ensure_finite("mul lhs")?;
    b.ensure_finite("mul rhs")?;
    let sa = broadcast_strides(shape5(a.shape()), out_shape);
    let sb = broadcast_strides(shape5(b.shape()), out_shape);
    let [d0, d1, d2, d3, d4] = out_shape;
    let mut out = vec![S::zero(); d0 * d1 * d2 * d3 * d4];
    let mut o = 0usize;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                for i3 in 0..d3 {
                    let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
                    let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
                    let ad = &a.data()[base_a..];
                    let bd = &b.data()[base_b..];
                    if sa[4] == 1 && sb[4] == 1 {
                        for ((&x, &y), ov) in
                            ad[..d4].iter().zip(&bd[..d4]).zip(&mut out[o..o + d4])
                        {
                            *ov = x * y;
                        }
                    } else if sa[4] == 1 {
                        let y = bd[0];
                        for (&x, ov) in ad[..d4].iter().zip(&mut out[o..o + d4]) {
                            *ov = x * y;
                        }
                    } else if sb[4] == 1 {
                        let x = ad[0];
                        for (&y, ov) in bd[..d4].iter().zip(&mut out[o..o + d4]) {
                            *ov = x * y;
                        }
                    } else {
                        let v = ad[0] * bd[0];
                        for ov in &mut out[o..o + d4] {
                            *ov = v;
                        }
                    }
                    o += d4;
                }
            }
        }
    }
    Tensor::new(&out_shape, out)
}

/// Gradient of `mul_broadcast` w.r.t. one operand: grad_out * other, summed
/// over the axes where the operand was broadcast.
pub fn mul_broadcast_backward_one<S: Scalar>(
    grad_out: &Tensor<S>,
    other: &Tensor<S>,
    operand_shape: &[usize],
) -> Result<Tensor<S>> {
    let out_shape = shape5(grad_out.shape());
    let so = broadcast_strides(shape5(other.shape()), out_shape);
    let starget = broadcast_strides(shape5(operand_shape), out_shape);
    let mut g = Tensor::zeros(operand_shape)?;
    let [d0, d1, d2, d3, d4] = out_shape;
    let gd = g.data_mut();
    let mut o = 0usize;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                for i3 in 0..d3 {
                    let base_o = i0 * so[0] + i1 * so[1] + i2 * so[2] + i3 * so[3];
                    let base_t = i0 * starget[0] + i1 * starget[1] + i2 * starget[2] + i3 * starget[3];
                    for i4 in 0..d4 {
                        let go = grad_out.data()[o + i4];
                        let ov = other.data()[base_o + i4 * so[4]];
                        gd[base_t + i4 * starget[4]] += go * ov;
                    }
                    o += d4;
                }
            }
        }
    }
    Ok(g)
}

/// Sum of every element, as a rank-0 tensor.
pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    a.ensure_finite("sum_all input")?;
    let mut acc = S::zero();
    for &v in a.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

/// Stack along the channel axis; batch and spatial extents must agree.
pub fn concat_channels<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if inputs.is_empty() {
        return Err(Error::shape("concat_channels of zero tensors"));
    }
    let [b, _, w, h, z] = inputs[0].dims5()?;
    let mut c_total = 0usize;
    for t in inputs {
        let [tb, tc, tw, th, tz] = t.dims5()?;
        if tb != b || [tw, th, tz] != [w, h, z] {
            return Err(Error::shape(format!(
                "concat_channels: shape {:?} does not match {:?} outside the channel axis",
                t.shape(),
                inputs[0].shape()
            )));
        }
        c_total += tc;
    }
    let svol = w * h * z;
    let mut out = Vec::with_capacity(b * c_total * svol);
    for bi in 0..b {
        for t in inputs {
            let tc = t.shape()[1];
            out.extend_from_slice(&t.data()[bi * tc * svol..][..tc * svol]);
        }
    }
    Tensor::new(&[b, c_total, w, h, z], out)
}

/// `len` channels starting at `start`.
pub fn slice_channels<S: Scalar>(input: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    let [b, c, w, h, z] = input.dims5()?;
    if len == 0 || start + len > c {
        return Err(Error::shape(format!(
            "slice_channels [{start}, {start}+{len}) out of range for {c} channels"
        )));
    }
    let svol = w * h * z;
    let mut out = Vec::with_capacity(b * len * svol);
    for bi in 0..b {
        out.extend_from_slice(&input.data()[(bi * c + start) * svol..][..len * svol]);
    }
    Tensor::new(&[b, len, w, h, z], out)
}

/// Backward of `slice_channels`: embed the gradient back at the channel
/// offset, zeros elsewhere.
pub fn slice_channels_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: &[usize],
    start: usize,
) -> Result<Tensor<S>> {
    let mut gin = Tensor::zeros(input_shape)?;
    let [b, c, w, h, z] = gin.dims5()?;
    let [gb, len, gw, gh, gz] = grad_out.dims5()?;
    if gb != b || [gw, gh, gz] != [w, h, z] || start + len > c {
        return Err(Error::shape("slice_channels_backward shape mismatch"));
    }
    let svol = w * h * z;
    let gd = gin.data_mut();
    for bi in 0..b {
        gd[(bi * c + start) * svol..][..len * svol]
            .copy_from_slice(&grad_out.data()[bi * len * svol..][..len * svol]);
    }
    Ok(gin)
}
