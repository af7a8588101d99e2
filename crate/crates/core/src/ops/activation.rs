//! Pointwise nonlinearities and the channel softmax.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    Gelu,
    Relu,
    /// Softmax across the channel axis, independently per voxel.
    SoftmaxChannel,
}

pub fn activation<S: Scalar>(input: &Tensor<S>, kind: ActKind) -> Result<Tensor<S>> {
    match kind {
        ActKind::Gelu => gelu(input),
        ActKind::Relu => relu(input),
        ActKind::SoftmaxChannel => softmax_channel(input),
    }
}

/// Exact gelu: x * Phi(x) with the Gaussian CDF written via erf (not the
/// tanh approximation).
pub fn gelu<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    input.ensure_finite("gelu input")?;
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let one = S::one();
    let data = input.data().iter().map(|&x| x * half * (one + (x * inv_sqrt2).erf())).collect();
    Tensor::new(input.shape(), data)
}

/// d/dx gelu = Phi(x) + x * phi(x), phi the Gaussian pdf.
pub fn gelu_backward<S: Scalar>(grad_out: &Tensor<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    grad_out.ensure_shape(input.shape(), "gelu grad_out")?;
    let half = S::from_f64(0.5);
    let one = S::one();
    let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt2pi = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| {
            let cdf = half * (one + (x * inv_sqrt2).erf());
            let pdf = inv_sqrt2pi * (-half * x * x).exp();
            g * (cdf + x * pdf)
        })
        .collect();
    Tensor::new(input.shape(), data)
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    input.ensure_finite("relu input")?;
    let zero = S::zero();
    let data = input.data().iter().map(|&x| if x > zero { x } else { zero }).collect();
    Tensor::new(input.shape(), data)
}

/// Subgradient at 0 is taken as 0.
pub fn relu_backward<S: Scalar>(grad_out: &Tensor<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    grad_out.ensure_shape(input.shape(), "relu grad_out")?;
    let zero = S::zero();
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > zero { g } else { zero })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Numerically stable softmax over the channel axis of a 5-D tensor. Works
/// channel-major (running max / running sum over channel rows) so the inner
/// loops stay contiguous.
pub fn softmax_channel<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, c, w, h, z] = input.dims5()?;
    input.ensure_finite("softmax input")?;
    let svol = w * h * z;
    let mut out = vec![S::zero(); input.numel()];
    let mut maxes = vec![S::neg_infinity(); svol];
    let mut sums = vec![S::zero(); svol];

    for bi in 0..b {
        let in_b = &input.data()[bi * c * svol..][..c * svol];
        let out_b = &mut out[bi * c * svol..][..c * svol];
        maxes.fill(S::neg_infinity());
        sums.fill(S::zero());
        for ci in 0..c {
            let row = &in_b[ci * svol..][..svol];
            for (m, &v) in maxes.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        for ci in 0..c {
            let in_row = &in_b[ci * svol..][..svol];
            let out_row = &mut out_b[ci * svol..][..svol];
            for ((o, &v), (&m, s)) in
                out_row.iter_mut().zip(in_row).zip(maxes.iter().zip(sums.iter_mut()))
            {
                let e = (v - m).exp();
                *o = e;
                *s += e;
            }
        }
        for ci in 0..c {
            let out_row = &mut out_b[ci * svol..][..svol];
            for (o, &s) in out_row.iter_mut().zip(sums.iter()) {
                *o = *o / s;
            }
        }
    }
    Tensor::new(input.shape(), out)
}

/// Backward for the channel softmax, taking the forward *output* p:
/// dx_i = p_i * (g_i - sum_j g_j p_j).
pub fn softmax_channel_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    softmax_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let [b, c, w, h, z] = softmax_out.dims5()?;
    grad_out.ensure_shape(softmax_out.shape(), "softmax grad_out")?;
    let svol = w * h * z;
    let mut gin = vec![S::zero(); softmax_out.numel()];
    let mut dots = vec![S::zero(); svol];
    for bi in 0..b {
        let p_b = &softmax_out.data()[bi * c * svol..][..c * svol];
        let g_b = &grad_out.data()[bi * c * svol..][..c * svol];
        let gin_b = &mut gin[bi * c * svol..][..c * svol];
        dots.fill(S::zero());
        for ci in 0..c {
            let p_row = &p_b[ci * svol..][..svol];
            let g_row = &g_b[ci * svol..][..svol];
            for ((d, &p), &g) in dots.iter_mut().zip(p_row).zip(g_row) {
                *d += p * g;
            }
        }
        for ci in 0..c {
            let p_row = &p_b[ci * svol..][..svol];
            let g_row = &g_b[ci * svol..][..svol];
            let gin_row = &mut gin_b[ci * svol..][..svol];
            for (((gi, &p), &g), &d) in gin_row.iter_mut().zip(p_row).zip(g_row).zip(dots.iter()) {
                *gi = p * (g - d);
            }
        }
    }
    Tensor::new(softmax_out.shape(), gin)
}

pub fn ensure_act_supports<S: Scalar>(kind: ActKind, input: &Tensor<S>) -> Result<()> {
    if kind == ActKind::SoftmaxChannel && input.rank() != 5 {
        return Err(Error::shape("channel softmax needs a rank-5 tensor"));
    }
    Ok(())
}
