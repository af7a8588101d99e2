//! 2x2x2 stride-2 pooling (the only pooling geometry the models use) and
//! global average pooling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Pooling output plus, for max pooling, the flat input index each output
/// voxel was taken from (ties go to the first voxel in scan order, which
/// keeps the backward pass deterministic).
pub struct PoolOut<S: Scalar> {
    pub output: Tensor<S>,
    pub argmax: Option<Vec<usize>>,
}

/// 2x2x2 window, stride 2. Spatial extents must be even: these models only
/// ever pool exact halves, and silently dropping a trailing slab would skew
/// the upsample path.
pub fn pool3d<S: Scalar>(input: &Tensor<S>, kind: PoolKind) -> Result<PoolOut<S>> {
    let [b, c, w, h, z] = input.dims5()?;
    if w % 2 != 0 || h % 2 != 0 || z % 2 != 0 {
        return Err(Error::shape(format!(
            "pool3d needs even spatial extents, got {:?}",
            [w, h, z]
        )));
    }
    input.ensure_finite("pool3d input")?;
    let (ow, oh, oz) = (w / 2, h / 2, z / 2);
    let ivol = w * h * z;
    let ovol = ow * oh * oz;
    let mut out = vec![S::zero(); b * c * ovol];
    let mut argmax = if kind == PoolKind::Max { vec![0usize; b * c * ovol] } else { Vec::new() };

    let run = |out_ch: &mut [S], arg_ch: Option<&mut [usize]>, bc: usize| {
        let in_ch = &input.data()[bc * ivol..][..ivol];
        let base = bc * ivol;
        let mut arg_ch = arg_ch;
        for owi in 0..ow {
            for ohi in 0..oh {
                for ozi in 0..oz {
                    let oidx = (owi * oh + ohi) * oz + ozi;
                    match kind {
                        PoolKind::Avg => {
                            let mut acc = S::zero();
                            for dw in 0..2 {
                                for dh in 0..2 {
                                    for dz in 0..2 {
                                        acc += in_ch
                                            [((owi * 2 + dw) * h + ohi * 2 + dh) * z + ozi * 2 + dz];
                                    }
                                }
                            }
                            out_ch[oidx] = acc / S::from_f64(8.0);
                        }
                        PoolKind::Max => {
                            let mut best = S::neg_infinity();
                            let mut best_idx = 0usize;
                            for dw in 0..2 {
                                for dh in 0..2 {
                                    for dz in 0..2 {
                                        let iidx =
                                            ((owi * 2 + dw) * h + ohi * 2 + dh) * z + ozi * 2 + dz;
                                        let v = in_ch[iidx];
                                        if v > best {
                                            best = v;
                                            best_idx = iidx;
                                        }
                                    }
                                }
                            }
                            out_ch[oidx] = best;
                            if let Some(arg) = arg_ch.as_deref_mut() {
                                arg[oidx] = base + best_idx;
                            }
                        }
                    }
                }
            }
        }
    };

    match kind {
        PoolKind::Avg => {
            out.par_chunks_mut(ovol).enumerate().for_each(|(bc, out_ch)| run(out_ch, None, bc));
        }
        PoolKind::Max => {
            out.par_chunks_mut(ovol)
                .zip(argmax.par_chunks_mut(ovol))
                .enumerate()
                .for_each(|(bc, (out_ch, arg_ch))| run(out_ch, Some(arg_ch), bc));
        }
    }

    Ok(PoolOut {
        output: Tensor::new(&[b, c, ow, oh, oz], out)?,
        argmax: (kind == PoolKind::Max).then_some(argmax),
    })
}

/// Backward for `pool3d`. Max pooling routes each output gradient to its
/// argmax voxel; average pooling spreads it evenly over the 8 window voxels.
pub fn pool3d_backward<S: Scalar>(
    kind: PoolKind,
    input_shape: &[usize],
    argmax: Option<&[usize]>,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut gin = Tensor::zeros(input_shape)?;
    let [b, c, w, h, z] = gin.dims5()?;
    let [gb, gc, ow, oh, oz] = grad_out.dims5()?;
    if gb != b || gc != c || ow * 2 != w || oh * 2 != h || oz * 2 != z {
        return Err(Error::shape(format!(
            "pool3d_backward: grad shape {:?} does not halve input shape {input_shape:?}",
            grad_out.shape()
        )));
    }
    match kind {
        PoolKind::Max => {
            let arg = argmax
                .ok_or_else(|| Error::config("pool3d_backward(Max) needs the argmax"))?;
            if arg.len() != grad_out.numel() {
                return Err(Error::shape("argmax length mismatch"));
            }
            let gd = gin.data_mut();
            for (i, &g) in grad_out.data().iter().enumerate() {
                gd[arg[i]] += g;
            }
        }
        PoolKind::Avg => {
            let ivol = w * h * z;
            let ovol = ow * oh * oz;
            let eighth = S::from_f64(0.125);
            let gd = gin.data_mut();
            for bc in 0..b * c {
                let go_ch = &grad_out.data()[bc * ovol..][..ovol];
                let gin_ch = &mut gd[bc * ivol..][..ivol];
                for owi in 0..ow {
                    for ohi in 0..oh {
                        for ozi in 0..oz {
                            let g = go_ch[(owi * oh + ohi) * oz + ozi] * eighth;
                            for dw in 0..2 {
                                for dh in 0..2 {
                                    for dz in 0..2 {
                                        gin_ch[((owi * 2 + dw) * h + ohi * 2 + dh) * z
                                            + ozi * 2
                                            + dz] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Mean over all spatial positions, per (batch, channel): `[b,c,w,h,z]` ->
/// `[b,c,1,1,1]`. Accumulation is a single fixed-order sum per channel.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let [b, c, w, h, z] = input.dims5()?;
    input.ensure_finite("global_avg_pool input")?;
    let svol = w * h * z;
    let inv = S::from_f64(1.0 / svol as f64);
    let mut out = vec![S::zero(); b * c];
    for (bc, o) in out.iter_mut().enumerate() {
        let mut acc = S::zero();
        for &v in &input.data()[bc * svol..][..svol] {
            acc += v;
        }
        *o = acc * inv;
    }
    Tensor::new(&[b, c, 1, 1, 1], out)
}

pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut gin = Tensor::zeros(input_shape)?;
    let [b, c, w, h, z] = gin.dims5()?;
    grad_out.ensure_shape(&[b, c, 1, 1, 1], "global_avg_pool grad_out")?;
    let svol = w * h * z;
    let inv = S::from_f64(1.0 / svol as f64);
    let gd = gin.data_mut();
    for bc in 0..b * c {
        let g = grad_out.data()[bc] * inv;
        for v in &mut gd[bc * svol..][..svol] {
            *v = g;
        }
    }
    Ok(gin)
}
