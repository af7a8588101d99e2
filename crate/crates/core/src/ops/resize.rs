//! Trilinear resampling with half-pixel centers (the align_corners=false
//! convention): source coordinate = (dst + 0.5) * in/out - 0.5, edges
//! clamped. Constant fields stay constant and a same-size resize is an
//! exact copy.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-axis interpolation table: output index -> (low neighbor, high
/// neighbor, high-side weight). Weights are computed in f64 and cast once.
struct AxisTable<S> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<S>,
}

fn axis_table<S: Scalar>(in_extent: usize, out_extent: usize) -> AxisTable<S> {
    let scale = in_extent as f64 / out_extent as f64;
    let mut lo = Vec::with_capacity(out_extent);
    let mut hi = Vec::with_capacity(out_extent);
    let mut frac = Vec::with_capacity(out_extent);
    for o in 0..out_extent {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let floor = src.floor();
        let mut t = src - floor;
        let mut i0 = floor as isize;
        // Clamp to the edge; collapsing both taps onto the border voxel
        // keeps the interpolation constant-preserving there.
        if i0 < 0 {
            i0 = 0;
            t = 0.0;
        }
        let mut i1 = i0 + 1;
        if i1 as usize >= in_extent {
            i1 = in_extent as isize - 1;
            if i0 >= i1 {
                i0 = i1;
                t = 0.0;
            }
        }
        lo.push(i0 as usize);
        hi.push(i1 as usize);
        frac.push(S::from_f64(t));
    }
    AxisTable { lo, hi, frac }
}

pub fn resize_trilinear<S: Scalar>(input: &Tensor<S>, target: [usize; 3]) -> Result<Tensor<S>> {
    let [b, c, w, h, z] = input.dims5()?;
    input.ensure_finite("resize_trilinear input")?;
    if target.contains(&0) {
        return Err(Error::shape(format!("resize target {target:?} has a zero extent")));
    }
    if [w, h, z] == target {
        return Ok(input.clone());
    }
    let [tw, th, tz] = target;
    let tw_tab = axis_table::<S>(w, tw);
    let th_tab = axis_table::<S>(h, th);
    let tz_tab = axis_table::<S>(z, tz);

    let ivol = w * h * z;
    let ovol = tw * th * tz;
    let one = S::one();
    let mut out = vec![S::zero(); b * c * ovol];
    out.par_chunks_mut(ovol).enumerate().for_each(|(bc, out_ch)| {
        let in_ch = &input.data()[bc * ivol..][..ivol];
        for ow in 0..tw {
            let (w0, w1, fw) = (tw_tab.lo[ow], tw_tab.hi[ow], tw_tab.frac[ow]);
            for oh in 0..th {
                let (h0, h1, fh) = (th_tab.lo[oh], th_tab.hi[oh], th_tab.frac[oh]);
                let r00 = &in_ch[(w0 * h + h0) * z..][..z];
                let r01 = &in_ch[(w0 * h + h1) * z..][..z];
                let r10 = &in_ch[(w1 * h + h0) * z..][..z];
                let r11 = &in_ch[(w1 * h + h1) * z..][..z];
                let out_row = &mut out_ch[(ow * th + oh) * tz..][..tz];
                for oz in 0..tz {
                    let (z0, z1, fz) = (tz_tab.lo[oz], tz_tab.hi[oz], tz_tab.frac[oz]);
                    let c00 = r00[z0] * (one - fz) + r00[z1] * fz;
                    let c01 = r01[z0] * (one - fz) + r01[z1] * fz;
                    let c10 = r10[z0] * (one - fz) + r10[z1] * fz;
                    let c11 = r11[z0] * (one - fz) + r11[z1] * fz;
                    let c0 = c00 * (one - fh) + c01 * fh;
                    let c1 = c10 * (one - fh) + c11 * fh;
                    out_row[oz] = c0 * (one - fw) + c1 * fw;
                }
            }
        }
    });
    Tensor::new(&[b, c, tw, th, tz], out)
}

/// Adjoint of `resize_trilinear`: output gradients are scattered back to the
/// 8 source taps with the same weights. Scatter within each (b, c) field is
/// sequential in a fixed order.
pub fn resize_trilinear_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    let mut gin = Tensor::zeros(input_shape)?;
    let [b, c, w, h, z] = gin.dims5()?;
    let [gb, gc, tw, th, tz] = grad_out.dims5()?;
    if gb != b || gc != c {
        return Err(Error::shape("resize_trilinear_backward: batch/channel mismatch"));
    }
    if [tw, th, tz] == [w, h, z] {
        return Ok(grad_out.clone());
    }
    let tw_tab = axis_table::<S>(w, tw);
    let th_tab = axis_table::<S>(h, th);
    let tz_tab = axis_table::<S>(z, tz);
    let ivol = w * h * z;
    let ovol = tw * th * tz;
    let one = S::one();

    gin.data_mut().par_chunks_mut(ivol).enumerate().for_each(|(bc, gin_ch)| {
        let go_ch = &grad_out.data()[bc * ovol..][..ovol];
        for ow in 0..tw {
            let (w0, w1, fw) = (tw_tab.lo[ow], tw_tab.hi[ow], tw_tab.frac[ow]);
            for oh in 0..th {
                let (h0, h1, fh) = (th_tab.lo[oh], th_tab.hi[oh], th_tab.frac[oh]);
                let go_row = &go_ch[(ow * th + oh) * tz..][..tz];
                for oz in 0..tz {
                    let (z0, z1, fz) = (tz_tab.lo[oz], tz_tab.hi[oz], tz_tab.frac[oz]);
                    let g = go_row[oz];
                    gin_ch[(w0 * h + h0) * z + z0] += g * (one - fw) * (one - fh) * (one - fz);
                    gin_ch[(w0 * h + h0) * z + z1] += g * (one - fw) * (one - fh) * fz;
                    gin_ch[(w0 * h + h1) * z + z0] += g * (one - fw) * fh * (one - fz);
                    gin_ch[(w0 * h + h1) * z + z1] += g * (one - fw) * fh * fz;
                    gin_ch[(w1 * h + h0) * z + z0] += g * fw * (one - fh) * (one - fz);
                    gin_ch[(w1 * h + h0) * z + z1] += g * fw * (one - fh) * fz;
                    gin_ch[(w1 * h + h1) * z + z0] += g * fw * fh * (one - fz);
                    gin_ch[(w1 * h + h1) * z + z1] += g * fw * fh * fz;
                }
            }
        }
    });
    Ok(gin)
}
