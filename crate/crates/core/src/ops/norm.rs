//! Instance normalization: each (batch, channel) spatial field is shifted
//! and scaled to zero mean / unit variance, then remapped by a learnable
//! per-channel affine (gamma, beta).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Per-(batch, channel) statistics cached by the forward pass so backward
/// doesn't recompute reductions.
#[derive(Clone, Debug)]
pub struct NormStats<S: Scalar> {
    pub mean: Vec<S>,
    pub inv_std: Vec<S>,
}

fn check_norm_dims<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<[usize; 5]> {
    let dims = input.dims5()?;
    let [_, c, w, h, z] = dims;
    if w * h * z < 2 {
        return Err(Error::numeric(format!(
            "instance_norm over a single-voxel field {:?} is degenerate; \
             the volume is too small for this depth",
            [w, h, z]
        )));
    }
    if gamma.dims1()? != c || beta.dims1()? != c {
        return Err(Error::shape(format!(
            "gamma/beta length {}/{} does not match {c} channels",
            gamma.numel(),
            beta.numel()
        )));
    }
    Ok(dims)
}

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, with biased variance,
/// statistics per (batch, channel). Reductions are fixed-order sums; rayon
/// only splits across (batch, channel) fields.
pub fn instance_norm<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<(Tensor<S>, NormStats<S>)> {
    let [b, c, w, h, z] = check_norm_dims(input, gamma, beta)?;
    input.ensure_finite("instance_norm input")?;
    gamma.ensure_finite("instance_norm gamma")?;
    beta.ensure_finite("instance_norm beta")?;
    let svol = w * h * z;
    let inv_n = S::from_f64(1.0 / svol as f64);
    let eps = S::from_f64(NORM_EPS);

    let mut out = vec![S::zero(); input.numel()];
    let mut mean = vec![S::zero(); b * c];
    let mut inv_std = vec![S::zero(); b * c];

    out.par_chunks_mut(svol)
        .zip(mean.par_iter_mut().zip(inv_std.par_iter_mut()))
        .enumerate()
        .for_each(|(bc, (out_ch, (mean_v, inv_std_v)))| {
            let ci = bc % c;
            let in_ch = &input.data()[bc * svol..][..svol];
            let mut s = S::zero();
            for &v in in_ch {
                s += v;
            }
            let mu = s * inv_n;
            let mut var = S::zero();
            for &v in in_ch {
                let d = v - mu;
                var += d * d;
            }
            var = var * inv_n;
            let r = (var + eps).sqrt().recip();
            let (g, bta) = (gamma.data()[ci], beta.data()[ci]);
            let scale = g * r;
            for (o, &v) in out_ch.iter_mut().zip(in_ch) {
                *o = (v - mu) * scale + bta;
            }
            *mean_v = mu;
            *inv_std_v = r;
        });

    Ok((Tensor::new(input.shape(), out)?, NormStats { mean, inv_std }))
}

/// Gradients for `instance_norm`. Returns (d_input, d_gamma, d_beta).
pub fn instance_norm_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    stats: &NormStats<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let [b, c, w, h, z] = input.dims5()?;
    grad_out.ensure_shape(input.shape(), "instance_norm grad_out")?;
    if stats.mean.len() != b * c || stats.inv_std.len() != b * c {
        return Err(Error::shape("instance_norm stats length mismatch"));
    }
    let svol = w * h * z;
    let inv_n = S::from_f64(1.0 / svol as f64);

    let mut gin = vec![S::zero(); input.numel()];
    // Per-(b,c) reductions needed for both d_input and d_gamma/d_beta.
    let mut sum_g = vec![S::zero(); b * c];
    let mut sum_gx = vec![S::zero(); b * c];

    gin.par_chunks_mut(svol)
        .zip(sum_g.par_iter_mut().zip(sum_gx.par_iter_mut()))
        .enumerate()
        .for_each(|(bc, (gin_ch, (sum_g_v, sum_gx_v)))| {
            let ci = bc % c;
            let in_ch = &input.data()[bc * svol..][..svol];
            let go_ch = &grad_out.data()[bc * svol..][..svol];
            let mu = stats.mean[bc];
            let r = stats.inv_std[bc];
            let g = gamma.data()[ci];

            let mut sg = S::zero();
            let mut sgx = S::zero();
            for (&go, &x) in go_ch.iter().zip(in_ch) {
                sg += go;
                sgx += go * (x - mu) * r;
            }
            *sum_g_v = sg;
            *sum_gx_v = sgx;

            // dx = gamma * r * (go - mean(go) - xhat * mean(go * xhat))
            let mg = sg * inv_n;
            let mgx = sgx * inv_n;
            let scale = g * r;
            for ((gi, &go), &x) in gin_ch.iter_mut().zip(go_ch).zip(in_ch) {
                let xhat = (x - mu) * r;
                *gi = scale * (go - mg - xhat * mgx);
            }
        });

    // d_gamma[c] = sum over (b, voxels) of go * xhat; d_beta[c] = sum of go.
    let mut ggamma = vec![S::zero(); c];
    let mut gbeta = vec![S::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let bc = bi * c + ci;
            ggamma[ci] += sum_gx[bc];
            gbeta[ci] += sum_g[bc];
        }
    }

    Ok((
        Tensor::new(input.shape(), gin)?,
        Tensor::new(&[c], ggamma)?,
        Tensor::new(&[c], gbeta)?,
    ))
}
