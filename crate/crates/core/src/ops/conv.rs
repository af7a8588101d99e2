//! Direct 3-D convolution and transposed convolution, forward and backward.
//!
//! Layout conventions (all contiguous, z innermost):
//!   activations  `[batch, channel, w, h, z]`
//!   conv weights `[c_out, c_in/groups, kw, kh, kz]`
//!   deconv weights `[c_in, c_out/groups, kw, kh, kz]`
//!
//! Convolution is cross-correlation (no kernel flip), zero padding. With the
//! deconv weight layout above, `conv_transpose3d(y, w)` is exactly the
//! adjoint of `conv3d(x, w)` for the same buffer `w`, which the tests lean
//! on.
//!
//! Parallelism: rayon splits work over disjoint `(batch, channel)` output
//! chunks only. Within a chunk the accumulation order is a fixed loop nest,
//! so results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::{valid_out_range, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    in_sp: [usize; 3],
    out_sp: [usize; 3],
}

fn check_conv_args<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
    transposed: bool,
) -> Result<ConvDims> {
    spec.validate()?;
    if !transposed && spec.output_padding != [0; 3] {
        return Err(Error::config("output_padding is only valid for conv_transpose3d"));
    }
    let [batch, c_in, w, h, z] = input.dims5()?;
    let [w0, w1, kw, kh, kz] = weight.dims5()?;
    if [kw, kh, kz] != spec.kernel {
        return Err(Error::shape(format!(
            "weight kernel {:?} does not match spec kernel {:?}",
            [kw, kh, kz],
            spec.kernel
        )));
    }
    // Forward weights are [c_out, c_in/g, ...]; transposed weights are
    // [c_in, c_out/g, ...].
    let (c_out, per_group) = if transposed { (w1 * spec.groups, w0) } else { (w0, w1) };
    let expect_per_group = if transposed { c_in } else { c_in / spec.groups.max(1) };
    if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::shape(format!(
            "groups {} must divide c_in {c_in} and c_out {c_out}",
            spec.groups
        )));
    }
    if per_group != expect_per_group {
        return Err(Error::shape(format!(
            "weight shape {:?} inconsistent with c_in {c_in}, groups {}",
            weight.shape(),
            spec.groups
        )));
    }
    if let Some(b) = bias {
        if b.dims1()? != c_out {
            return Err(Error::shape(format!(
                "bias length {} does not match c_out {c_out}",
                b.numel()
            )));
        }
    }
    let in_sp = [w, h, z];
    let out_sp =
        if transposed { spec.deconv_out_extents(in_sp)? } else { spec.conv_out_extents(in_sp)? };
    Ok(ConvDims { batch, c_in, c_out, in_sp, out_sp })
}

fn vol(sp: [usize; 3]) -> usize {
    sp[0] * sp[1] * sp[2]
}

/// Forward convolution. One rayon task per `(batch, c_out)` output channel.
pub fn conv3d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let d = check_conv_args(input, weight, bias, spec, false)?;
    input.ensure_finite("conv3d input")?;
    weight.ensure_finite("conv3d weight")?;
    if let Some(b) = bias {
        b.ensure_finite("conv3d bias")?;
    }

    let cin_g = d.c_in / spec.groups;
    let cout_g = d.c_out / spec.groups;
    let ivol = vol(d.in_sp);
    let ovol = vol(d.out_sp);
    let kvol = vol(spec.kernel);
    let mut out = vec![S::zero(); d.batch * d.c_out * ovol];

    out.par_chunks_mut(ovol).enumerate().for_each(|(idx, out_ch)| {
        let b = idx / d.c_out;
        let co = idx % d.c_out;
        let g = co / cout_g;
        if let Some(bt) = bias {
            out_ch.fill(bt.data()[co]);
        }
        for cig in 0..cin_g {
            let ci = g * cin_g + cig;
            let in_ch = &input.data()[(b * d.c_in + ci) * ivol..][..ivol];
            let w_ch = &weight.data()[(co * cin_g + cig) * kvol..][..kvol];
            accumulate_conv_channel(out_ch, in_ch, w_ch, d.in_sp, d.out_sp, spec);
        }
    });

    Tensor::new(&[d.batch, d.c_out, d.out_sp[0], d.out_sp[1], d.out_sp[2]], out)
}

/// out_ch += in_ch * w_ch for one (input channel, output channel) pair.
fn accumulate_conv_channel<S: Scalar>(
    out_ch: &mut [S],
    in_ch: &[S],
    w_ch: &[S],
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    spec: &ConvSpec,
) {
    let [iw, ih, iz] = in_sp;
    let [ow_e, oh_e, oz_e] = out_sp;
    let [kw, kh, kz] = spec.kernel;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;

    for kwi in 0..kw {
        let (ow0, ow1) = valid_out_range(iw, ow_e, sw, pw, kwi);
        for khi in 0..kh {
            let (oh0, oh1) = valid_out_range(ih, oh_e, sh, ph, khi);
            for ow in ow0..ow1 {
                let iwi = ow * sw + kwi - pw;
                for oh in oh0..oh1 {
                    let ihi = oh * sh + khi - ph;
                    let out_row = &mut out_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                    let in_row = &in_ch[(iwi * ih + ihi) * iz..][..iz];
                    for kzi in 0..kz {
                        let wv = w_ch[(kwi * kh + khi) * kz + kzi];
                        let (oz0, oz1) = valid_out_range(iz, oz_e, sz, pz, kzi);
                        if oz0 >= oz1 {
                            continue;
                        }
                        if sz == 1 {
                            // iz index = oz + kzi - pz; contiguous saxpy.
                            let off = oz0 + kzi - pz;
                            let src = &in_row[off..off + (oz1 - oz0)];
                            let dst = &mut out_row[oz0..oz1];
                            for (o, &i) in dst.iter_mut().zip(src) {
                                *o += wv * i;
                            }
                        } else {
                            for oz in oz0..oz1 {
                                out_row[oz] += wv * in_row[oz * sz + kzi - pz];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution input. One task per `(batch, c_in)`
/// channel of the result; contributions are scattered from the output
/// gradient through the kernel taps.
pub fn conv3d_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    weight: &Tensor<S>,
    input_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [batch, c_in, w, h, z] = match *input_shape {
        [b, c, w, h, z] => [b, c, w, h, z],
        _ => return Err(Error::shape(format!("input shape {input_shape:?} is not rank 5"))),
    };
    let [c_out, cin_g, kw, kh, kz] = weight.dims5()?;
    if [kw, kh, kz] != spec.kernel || cin_g != c_in / spec.groups {
        return Err(Error::shape("weight inconsistent with spec/input"));
    }
    let out_sp = spec.conv_out_extents([w, h, z])?;
    grad_out.ensure_shape(&[batch, c_out, out_sp[0], out_sp[1], out_sp[2]], "conv3d grad_out")?;

    let cout_g = c_out / spec.groups;
    let ivol = w * h * z;
    let ovol = vol(out_sp);
    let kvol = kw * kh * kz;
    let mut gin = vec![S::zero(); batch * c_in * ivol];

    gin.par_chunks_mut(ivol).enumerate().for_each(|(idx, gin_ch)| {
        let b = idx / c_in;
        let ci = idx % c_in;
        let g = ci / cin_g;
        let cig = ci % cin_g;
        for cog in 0..cout_g {
            let co = g * cout_g + cog;
            let go_ch = &grad_out.data()[(b * c_out + co) * ovol..][..ovol];
            let w_ch = &weight.data()[(co * cin_g + cig) * kvol..][..kvol];
            scatter_conv_grad_channel(gin_ch, go_ch, w_ch, [w, h, z], out_sp, spec);
        }
    });

    Tensor::new(input_shape, gin)
}

/// gin_ch += grad_out_ch (*) w_ch scattered back through the taps.
fn scatter_conv_grad_channel<S: Scalar>(
    gin_ch: &mut [S],
    go_ch: &[S],
    w_ch: &[S],
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    spec: &ConvSpec,
) {
    let [iw, ih, iz] = in_sp;
    let [ow_e, oh_e, oz_e] = out_sp;
    let [kw, kh, kz] = spec.kernel;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;

    for kwi in 0..kw {
        let (ow0, ow1) = valid_out_range(iw, ow_e, sw, pw, kwi);
        for khi in 0..kh {
            let (oh0, oh1) = valid_out_range(ih, oh_e, sh, ph, khi);
            for ow in ow0..ow1 {
                let iwi = ow * sw + kwi - pw;
                for oh in oh0..oh1 {
                    let ihi = oh * sh + khi - ph;
                    let go_row = &go_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                    let gin_row = &mut gin_ch[(iwi * ih + ihi) * iz..][..iz];
                    for kzi in 0..kz {
                        let wv = w_ch[(kwi * kh + khi) * kz + kzi];
                        let (oz0, oz1) = valid_out_range(iz, oz_e, sz, pz, kzi);
                        if oz0 >= oz1 {
                            continue;
                        }
                        if sz == 1 {
                            let off = oz0 + kzi - pz;
                            let dst = &mut gin_row[off..off + (oz1 - oz0)];
                            let src = &go_row[oz0..oz1];
                            for (i, &o) in dst.iter_mut().zip(src) {
                                *i += wv * o;
                            }
                        } else {
                            for oz in oz0..oz1 {
                                gin_row[oz * sz + kzi - pz] += wv * go_row[oz];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution weight. One task per output channel (a
/// `[c_in/g, kw, kh, kz]` slice of the gradient); each kernel tap is a dot
/// product between the output gradient and a shifted input window.
pub fn conv3d_backward_weight<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    weight_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [batch, c_in, w, h, z] = input.dims5()?;
    let [c_out, cin_g, kw, kh, kz] = match *weight_shape {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => return Err(Error::shape(format!("weight shape {weight_shape:?} is not rank 5"))),
    };
    if [kw, kh, kz] != spec.kernel || cin_g != c_in / spec.groups {
        return Err(Error::shape("weight shape inconsistent with spec/input"));
    }
    let out_sp = spec.conv_out_extents([w, h, z])?;
    grad_out.ensure_shape(&[batch, c_out, out_sp[0], out_sp[1], out_sp[2]], "conv3d grad_out")?;

    let cout_g = c_out / spec.groups;
    let [ow_e, oh_e, oz_e] = out_sp;
    let ivol = w * h * z;
    let ovol = vol(out_sp);
    let kvol = kw * kh * kz;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;
    let mut gw = vec![S::zero(); c_out * cin_g * kvol];

    gw.par_chunks_mut(cin_g * kvol).enumerate().for_each(|(co, gw_co)| {
        let g = co / cout_g;
        for cig in 0..cin_g {
            let ci = g * cin_g + cig;
            for kwi in 0..kw {
                let (ow0, ow1) = valid_out_range(w, ow_e, sw, pw, kwi);
                for khi in 0..kh {
                    let (oh0, oh1) = valid_out_range(h, oh_e, sh, ph, khi);
                    for kzi in 0..kz {
                        let (oz0, oz1) = valid_out_range(z, oz_e, sz, pz, kzi);
                        let mut acc = S::zero();
                        for b in 0..batch {
                            let in_ch = &input.data()[(b * c_in + ci) * ivol..][..ivol];
                            let go_ch = &grad_out.data()[(b * c_out + co) * ovol..][..ovol];
                            for ow in ow0..ow1 {
                                let iwi = ow * sw + kwi - pw;
                                for oh in oh0..oh1 {
                                    let ihi = oh * sh + khi - ph;
                                    let go_row = &go_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                                    let in_row = &in_ch[(iwi * h + ihi) * z..][..z];
                                    if oz0 >= oz1 {
                                        continue;
                                    }
                                    if sz == 1 {
                                        let off = oz0 + kzi - pz;
                                        let src = &in_row[off..off + (oz1 - oz0)];
                                        for (&o, &i) in go_row[oz0..oz1].iter().zip(src) {
                                            acc += o * i;
                                        }
                                    } else {
                                        for oz in oz0..oz1 {
                                            acc += go_row[oz] * in_row[oz * sz + kzi - pz];
                                        }
                                    }
                                }
                            }
                        }
                        gw_co[(cig * kw + kwi) * kh * kz + khi * kz + kzi] = acc;
                    }
                }
            }
        }
    });

    Tensor::new(weight_shape, gw)
}

/// Gradient w.r.t. the convolution bias: sum of the output gradient over
/// batch and space, per output channel.
pub fn conv3d_backward_bias<S: Scalar>(grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let [batch, c_out, ow, oh, oz] = grad_out.dims5()?;
    let ovol = ow * oh * oz;
    let mut gb = vec![S::zero(); c_out];
    for (co, gb_v) in gb.iter_mut().enumerate() {
        let mut acc = S::zero();
        for b in 0..batch {
            for &v in &grad_out.data()[(b * c_out + co) * ovol..][..ovol] {
                acc += v;
            }
        }
        *gb_v = acc;
    }
    Tensor::new(&[c_out], gb)
}

/// Transposed (fractionally strided) convolution. Weight layout
/// `[c_in, c_out/groups, kw, kh, kz]`. One task per `(batch, c_out)` output
/// channel; input voxels are scattered through the kernel taps.
///
/// Note this is written as its own scatter kernel, not by calling
/// `conv3d_backward_input`, so the two sides of the adjoint identity stay
/// independent.
pub fn conv_transpose3d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let d = check_conv_args(input, weight, bias, spec, true)?;
    input.ensure_finite("conv_transpose3d input")?;
    weight.ensure_finite("conv_transpose3d weight")?;
    if let Some(b) = bias {
        b.ensure_finite("conv_transpose3d bias")?;
    }

    let cin_g = d.c_in / spec.groups;
    let cout_g = d.c_out / spec.groups;
    let ivol = vol(d.in_sp);
    let ovol = vol(d.out_sp);
    let kvol = vol(spec.kernel);
    let [iw, ih, iz] = d.in_sp;
    let [ow_e, oh_e, oz_e] = d.out_sp;
    let [kw, kh, kz] = spec.kernel;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;
    let mut out = vec![S::zero(); d.batch * d.c_out * ovol];

    out.par_chunks_mut(ovol).enumerate().for_each(|(idx, out_ch)| {
        let b = idx / d.c_out;
        let co = idx % d.c_out;
        let g = co / cout_g;
        let cog = co % cout_g;
        if let Some(bt) = bias {
            out_ch.fill(bt.data()[co]);
        }
        for cig in 0..cin_g {
            let ci = g * cin_g + cig;
            let in_ch = &input.data()[(b * d.c_in + ci) * ivol..][..ivol];
            let w_ch = &weight.data()[(ci * cout_g + cog) * kvol..][..kvol];
            // Valid input ranges reuse valid_out_range with the roles of the
            // two extents swapped: we need i with i*s - p + k inside the
            // *output*.
            for kwi in 0..kw {
                let (iw0, iw1) = valid_out_range(ow_e, iw, sw, pw, kwi);
                for khi in 0..kh {
                    let (ih0, ih1) = valid_out_range(oh_e, ih, sh, ph, khi);
                    for iwi in iw0..iw1 {
                        let ow = iwi * sw + kwi - pw;
                        for ihi in ih0..ih1 {
                            let oh = ihi * sh + khi - ph;
                            let in_row = &in_ch[(iwi * ih + ihi) * iz..][..iz];
                            let out_row = &mut out_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                            for kzi in 0..kz {
                                let wv = w_ch[(kwi * kh + khi) * kz + kzi];
                                let (iz0, iz1) = valid_out_range(oz_e, iz, sz, pz, kzi);
                                if iz0 >= iz1 {
                                    continue;
                                }
                                if sz == 1 {
                                    let off = iz0 + kzi - pz;
                                    let dst = &mut out_row[off..off + (iz1 - iz0)];
                                    let src = &in_row[iz0..iz1];
                                    for (o, &i) in dst.iter_mut().zip(src) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for izi in iz0..iz1 {
                                        out_row[izi * sz + kzi - pz] += wv * in_row[izi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(&[d.batch, d.c_out, d.out_sp[0], d.out_sp[1], d.out_sp[2]], out)
}

/// Gradient w.r.t. the transposed-convolution input: a gather over the
/// output gradient (the adjoint direction of the forward scatter).
pub fn conv_transpose3d_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    weight: &Tensor<S>,
    input_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [batch, c_in, w, h, z] = match *input_shape {
        [b, c, w, h, z] => [b, c, w, h, z],
        _ => return Err(Error::shape(format!("input shape {input_shape:?} is not rank 5"))),
    };
    let [w_cin, cout_g, kw, kh, kz] = weight.dims5()?;
    if [kw, kh, kz] != spec.kernel || w_cin != c_in {
        return Err(Error::shape("weight inconsistent with spec/input"));
    }
    let c_out = cout_g * spec.groups;
    let out_sp = spec.deconv_out_extents([w, h, z])?;
    grad_out.ensure_shape(
        &[batch, c_out, out_sp[0], out_sp[1], out_sp[2]],
        "conv_transpose3d grad_out",
    )?;

    let cin_g = c_in / spec.groups;
    let ivol = w * h * z;
    let ovol = vol(out_sp);
    let kvol = kw * kh * kz;
    let [ow_e, oh_e, oz_e] = out_sp;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;
    let mut gin = vec![S::zero(); batch * c_in * ivol];

    gin.par_chunks_mut(ivol).enumerate().for_each(|(idx, gin_ch)| {
        let b = idx / c_in;
        let ci = idx % c_in;
        let g = ci / cin_g;
        for cog in 0..cout_g {
            let co = g * cout_g + cog;
            let go_ch = &grad_out.data()[(b * c_out + co) * ovol..][..ovol];
            let w_ch = &weight.data()[(ci * cout_g + cog) * kvol..][..kvol];
            for kwi in 0..kw {
                let (iw0, iw1) = valid_out_range(ow_e, w, sw, pw, kwi);
                for khi in 0..kh {
                    let (ih0, ih1) = valid_out_range(oh_e, h, sh, ph, khi);
                    for iwi in iw0..iw1 {
                        let ow = iwi * sw + kwi - pw;
                        for ihi in ih0..ih1 {
                            let oh = ihi * sh + khi - ph;
                            let go_row = &go_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                            let gin_row = &mut gin_ch[(iwi * h + ihi) * z..][..z];
                            for kzi in 0..kz {
                                let wv = w_ch[(kwi * kh + khi) * kz + kzi];
                                let (iz0, iz1) = valid_out_range(oz_e, z, sz, pz, kzi);
                                if iz0 >= iz1 {
                                    continue;
                                }
                                if sz == 1 {
                                    let off = iz0 + kzi - pz;
                                    let src = &go_row[off..off + (iz1 - iz0)];
                                    let dst = &mut gin_row[iz0..iz1];
                                    for (i, &o) in dst.iter_mut().zip(src) {
                                        *i += wv * o;
                                    }
                                } else {
                                    for izi in iz0..iz1 {
                                        gin_row[izi] += wv * go_row[izi * sz + kzi - pz];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(input_shape, gin)
}

/// Gradient w.r.t. the transposed-convolution weight. One task per input
/// channel (a `[c_out/g, kw, kh, kz]` slice).
pub fn conv_transpose3d_backward_weight<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    weight_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [batch, c_in, w, h, z] = input.dims5()?;
    let [w_cin, cout_g, kw, kh, kz] = match *weight_shape {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => return Err(Error::shape(format!("weight shape {weight_shape:?} is not rank 5"))),
    };
    if [kw, kh, kz] != spec.kernel || w_cin != c_in {
        return Err(Error::shape("weight shape inconsistent with spec/input"));
    }
    let c_out = cout_g * spec.groups;
    let out_sp = spec.deconv_out_extents([w, h, z])?;
    grad_out.ensure_shape(
        &[batch, c_out, out_sp[0], out_sp[1], out_sp[2]],
        "conv_transpose3d grad_out",
    )?;

    let cin_g = c_in / spec.groups;
    let ivol = w * h * z;
    let ovol = vol(out_sp);
    let kvol = kw * kh * kz;
    let [ow_e, oh_e, oz_e] = out_sp;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;
    let mut gw = vec![S::zero(); c_in * cout_g * kvol];

    gw.par_chunks_mut(cout_g * kvol).enumerate().for_each(|(ci, gw_ci)| {
        let g = ci / cin_g;
        for cog in 0..cout_g {
            let co = g * cout_g + cog;
            for kwi in 0..kw {
                let (iw0, iw1) = valid_out_range(ow_e, w, sw, pw, kwi);
                for khi in 0..kh {
                    let (ih0, ih1) = valid_out_range(oh_e, h, sh, ph, khi);
                    for kzi in 0..kz {
                        let (iz0, iz1) = valid_out_range(oz_e, z, sz, pz, kzi);
                        let mut acc = S::zero();
                        for b in 0..batch {
                            let in_ch = &input.data()[(b * c_in + ci) * ivol..][..ivol];
                            let go_ch = &grad_out.data()[(b * c_out + co) * ovol..][..ovol];
                            for iwi in iw0..iw1 {
                                let ow = iwi * sw + kwi - pw;
                                for ihi in ih0..ih1 {
                                    let oh = ihi * sh + khi - ph;
                                    let in_row = &in_ch[(iwi * h + ihi) * z..][..z];
                                    let go_row = &go_ch[(ow * oh_e + oh) * oz_e..][..oz_e];
                                    if iz0 >= iz1 {
                                        continue;
                                    }
                                    if sz == 1 {
                                        let off = iz0 + kzi - pz;
                                        let src = &go_row[off..off + (iz1 - iz0)];
                                        for (&i, &o) in in_row[iz0..iz1].iter().zip(src) {
                                            acc += i * o;
                                        }
                                    } else {
                                        for izi in iz0..iz1 {
                                            acc += in_row[izi] * go_row[izi * sz + kzi - pz];
                                        }
                                    }
                                }
                            }
                        }
                        gw_ci[(cog * kw + kwi) * kh * kz + khi * kz + kzi] = acc;
                    }
                }
            }
        }
    });

    Tensor::new(weight_shape, gw)
}
