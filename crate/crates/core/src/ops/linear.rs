//! Per-voxel channel mixing: `y[b, :, v] = W @ x[b, :, v] + bias` applied
//! independently at every spatial position. Equivalent to a 1x1x1
//! convolution but cheap enough to keep as its own kernel, since the fusion
//! blocks use it everywhere (context projections, gates, modulator mixes).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_linear_dims<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<([usize; 5], [usize; 2])> {
    let dims = input.dims5()?;
    let [c_out, c_in] = weight.dims2()?;
    if c_in != dims[1] {
        return Err(Error::shape(format!(
            "linear weight expects {c_in} channels, input has {}",
            dims[1]
        )));
    }
    if let Some(b) = bias {
        if b.dims1()? != c_out {
            return Err(Error::shape(format!(
                "linear bias length {} does not match c_out {c_out}",
                b.numel()
            )));
        }
    }
    Ok((dims, [c_out, c_in]))
}

pub fn linear<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let ([b, c_in, w, h, z], [c_out, _]) = check_linear_dims(input, weight, bias)?;
    input.ensure_finite("linear input")?;
    weight.ensure_finite("linear weight")?;
    if let Some(bt) = bias {
        bt.ensure_finite("linear bias")?;
    }
    let svol = w * h * z;
    let mut out = vec![S::zero(); b * c_out * svol];
    out.par_chunks_mut(svol).enumerate().for_each(|(idx, out_ch)| {
        let bi = idx / c_out;
        let co = idx % c_out;
        out_ch.fill(bias.map_or(S::zero(), |bt| bt.data()[co]));
        for ci in 0..c_in {
            let wv = weight.data()[co * c_in + ci];
            let in_ch = &input.data()[(bi * c_in + ci) * svol..][..svol];
            for (o, &x) in out_ch.iter_mut().zip(in_ch) {
                *o += wv * x;
            }
        }
    });
    Tensor::new(&[b, c_out, w, h, z], out)
}

pub fn linear_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    weight: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    let mut gin = Tensor::zeros(input_shape)?;
    let [b, c_in, w, h, z] = gin.dims5()?;
    let [c_out, wc_in] = weight.dims2()?;
    if wc_in != c_in {
        return Err(Error::shape("linear_backward_input: weight/input mismatch"));
    }
    let svol = w * h * z;
    grad_out.ensure_shape(&[b, c_out, w, h, z], "linear grad_out")?;
    gin.data_mut().par_chunks_mut(svol).enumerate().for_each(|(idx, gin_ch)| {
        let bi = idx / c_in;
        let ci = idx % c_in;
        for co in 0..c_out {
            let wv = weight.data()[co * c_in + ci];
            let go_ch = &grad_out.data()[(bi * c_out + co) * svol..][..svol];
            for (gi, &go) in gin_ch.iter_mut().zip(go_ch) {
                *gi += wv * go;
            }
        }
    });
    Ok(gin)
}

pub fn linear_backward_weight<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    weight_shape: &[usize],
) -> Result<Tensor<S>> {
    let [b, c_in, w, h, z] = input.dims5()?;
    let [c_out, wc_in] = match *weight_shape {
        [r, c] => [r, c],
        _ => return Err(Error::shape("linear weight must be rank 2")),
    };
    if wc_in != c_in {
        return Err(Error::shape("linear_backward_weight: weight/input mismatch"));
    }
    let svol = w * h * z;
    grad_out.ensure_shape(&[b, c_out, w, h, z], "linear grad_out")?;
    let mut gw = vec![S::zero(); c_out * c_in];
    gw.par_chunks_mut(c_in).enumerate().for_each(|(co, gw_row)| {
        for (ci, gw_v) in gw_row.iter_mut().enumerate() {
            let mut acc = S::zero();
            for bi in 0..b {
                let go_ch = &grad_out.data()[(bi * c_out + co) * svol..][..svol];
                let in_ch = &input.data()[(bi * c_in + ci) * svol..][..svol];
                for (&g, &x) in go_ch.iter().zip(in_ch) {
                    acc += g * x;
                }
            }
            *gw_v = acc;
        }
    });
    Tensor::new(weight_shape, gw)
}

pub fn linear_backward_bias<S: Scalar>(grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, c_out, w, h, z] = grad_out.dims5()?;
    let svol = w * h * z;
    let mut gb = vec![S::zero(); c_out];
    for (co, gb_v) in gb.iter_mut().enumerate() {
        let mut acc = S::zero();
        for bi in 0..b {
            for &g in &grad_out.data()[(bi * c_out + co) * svol..][..svol] {
                acc += g;
            }
        }
        *gb_v = acc;
    }
    Tensor::new(&[c_out], gb)
}
