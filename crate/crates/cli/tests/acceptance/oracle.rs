//! Independent reference implementations for the acceptance checks.
//!
//! Everything here is written as the plainest possible nested loops over
//! definitions, with all arithmetic in f64, sharing no code with the crate
//! under test. Slow on purpose: these exist to disagree loudly if the
//! production kernels drift.

use volfuse_core::ops::ConvSpec;
use volfuse_core::{LabelVolume, Tensor};

fn at5(shape: &[usize; 5], i: [usize; 5]) -> usize {
    (((i[0] * shape[1] + i[1]) * shape[2] + i[2]) * shape[3] + i[3]) * shape[4] + i[4]
}

pub fn ref_conv3d(x: &Tensor<f32>, w: &Tensor<f32>, bias: Option<&Tensor<f32>>, spec: &ConvSpec) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let ws: [usize; 5] = w.shape().try_into().unwrap();
    let (b, c_in) = (xs[0], xs[1]);
    let c_out = ws[0];
    let g = spec.groups;
    let (cig, cog) = (c_in / g, c_out / g);
    let [kw, kh, kz] = spec.kernel;
    let [sw, sh, sz] = spec.stride;
    let [pw, ph, pz] = spec.padding;
    let out_sp: Vec<usize> = (0..3)
        .map(|d| (xs[2 + d] + 2 * spec.padding[d] - spec.kernel[d]) / spec.stride[d] + 1)
        .collect();
    let os = [b, c_out, out_sp[0], out_sp[1], out_sp[2]];
    let mut out = vec![0f64; os.iter().product()];
    for bi in 0..b {
        for co in 0..c_out {
            let grp = co / cog;
            for ow in 0..os[2] {
                for oh in 0..os[3] {
                    for oz in 0..os[4] {
                        let mut acc = bias.map_or(0.0, |t| t.data()[co] as f64);
                        for cg in 0..cig {
                            let ci = grp * cig + cg;
                            for ki in 0..kw {
                                for kj in 0..kh {
                                    for kk in 0..kz {
                                        let iw = (ow * sw + ki) as isize - pw as isize;
                                        let ih = (oh * sh + kj) as isize - ph as isize;
                                        let iz = (oz * sz + kk) as isize - pz as isize;
                                        if iw < 0 || ih < 0 || iz < 0 {
                                            continue;
                                        }
                                        let (iw, ih, iz) = (iw as usize, ih as usize, iz as usize);
                                        if iw >= xs[2] || ih >= xs[3] || iz >= xs[4] {
                                            continue;
                                        }
                                        let xv = x.data()[at5(&xs, [bi, ci, iw, ih, iz])] as f64;
                                        let wv = w.data()[at5(&ws, [co, cg, ki, kj, kk])] as f64;
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[at5(&os, [bi, co, ow, oh, oz])] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Transposed convolution by its defining scatter: every input voxel sprays
/// its kernel into the output. Output extent (in−1)·s − 2p + k + op.
pub fn ref_conv_transpose3d(
    x: &Tensor<f32>,
    w: &Tensor<f32>,
    bias: Option<&Tensor<f32>>,
    spec: &ConvSpec,
) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let ws: [usize; 5] = w.shape().try_into().unwrap();
    let (b, c_in) = (xs[0], xs[1]);
    let g = spec.groups;
    let cig = c_in / g;
    let cog = ws[1];
    let c_out = cog * g;
    let [kw, kh, kz] = spec.kernel;
    let out_sp: Vec<usize> = (0..3)
        .map(|d| {
            (xs[2 + d] - 1) * spec.stride[d] + spec.kernel[d] + spec.output_padding[d]
                - 2 * spec.padding[d]
        })
        .collect();
    let os = [b, c_out, out_sp[0], out_sp[1], out_sp[2]];
    let mut out = vec![0f64; os.iter().product()];
    if let Some(t) = bias {
        for bi in 0..b {
            for co in 0..c_out {
                let base = at5(&os, [bi, co, 0, 0, 0]);
                for v in &mut out[base..base + out_sp.iter().product::<usize>()] {
                    *v = t.data()[co] as f64;
                }
            }
        }
    }
    for bi in 0..b {
        for ci in 0..c_in {
            let grp = ci / cig;
            for iw in 0..xs[2] {
                for ih in 0..xs[3] {
                    for iz in 0..xs[4] {
                        let xv = x.data()[at5(&xs, [bi, ci, iw, ih, iz])] as f64;
                        for ki in 0..kw {
                            for kj in 0..kh {
                                for kk in 0..kz {
                                    let ow = (iw * spec.stride[0] + ki) as isize
                                        - spec.padding[0] as isize;
                                    let oh = (ih * spec.stride[1] + kj) as isize
                                        - spec.padding[1] as isize;
                                    let oz = (iz * spec.stride[2] + kk) as isize
                                        - spec.padding[2] as isize;
                                    if ow < 0 || oh < 0 || oz < 0 {
                                        continue;
                                    }
                                    let (ow, oh, oz) = (ow as usize, oh as usize, oz as usize);
                                    if ow >= os[2] || oh >= os[3] || oz >= os[4] {
                                        continue;
                                    }
                                    for cg in 0..cog {
                                        let co = grp * cog + cg;
                                        let wv =
                                            w.data()[at5(&ws, [ci, cg, ki, kj, kk])] as f64;
                                        out[at5(&os, [bi, co, ow, oh, oz])] += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn ref_pool(x: &Tensor<f32>, max: bool) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let os = [xs[0], xs[1], xs[2] / 2, xs[3] / 2, xs[4] / 2];
    let mut out = vec![0f64; os.iter().product()];
    for bi in 0..os[0] {
        for c in 0..os[1] {
            for ow in 0..os[2] {
                for oh in 0..os[3] {
                    for oz in 0..os[4] {
                        let mut vals = Vec::with_capacity(8);
                        for dw in 0..2 {
                            for dh in 0..2 {
                                for dz in 0..2 {
                                    vals.push(
                                        x.data()[at5(
                                            &xs,
                                            [bi, c, ow * 2 + dw, oh * 2 + dh, oz * 2 + dz],
                                        )] as f64,
                                    );
                                }
                            }
                        }
                        out[at5(&os, [bi, c, ow, oh, oz])] = if max {
                            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        } else {
                            vals.iter().sum::<f64>() / 8.0
                        };
                    }
                }
            }
        }
    }
    out
}

pub fn ref_global_avg_pool(x: &Tensor<f32>) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let svol = xs[2] * xs[3] * xs[4];
    let mut out = vec![0f64; xs[0] * xs[1]];
    for (bc, o) in out.iter_mut().enumerate() {
        let ch = &x.data()[bc * svol..][..svol];
        *o = ch.iter().map(|&v| v as f64).sum::<f64>() / svol as f64;
    }
    out
}

pub fn ref_linear(x: &Tensor<f32>, w: &Tensor<f32>, bias: Option<&Tensor<f32>>) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let c_out = w.shape()[0];
    let c_in = w.shape()[1];
    let svol = xs[2] * xs[3] * xs[4];
    let mut out = vec![0f64; xs[0] * c_out * svol];
    for bi in 0..xs[0] {
        for co in 0..c_out {
            for v in 0..svol {
                let mut acc = bias.map_or(0.0, |t| t.data()[co] as f64);
                for ci in 0..c_in {
                    acc += x.data()[(bi * c_in + ci) * svol + v] as f64
                        * w.data()[co * c_in + ci] as f64;
                }
                out[(bi * c_out + co) * svol + v] = acc;
            }
        }
    }
    out
}

pub fn ref_instance_norm(x: &Tensor<f32>, gamma: &Tensor<f32>, beta: &Tensor<f32>, eps: f64) -> Vec<f64> {
    let xs: [usize; 5] = x.shape().try_into().unwrap();
    let c = xs[1];
    let svol = xs[2] * xs[3] * xs[4];
    let mut out = vec![0f64; x.numel()];
    for bc in 0..xs[0] * c {
        let ch: Vec<f64> = x.data()[bc * svol..][..svol].iter().map(|&v| v as f64).collect();
        let mean = ch.iter().sum::<f64>() / svol as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / svol as f64;
        let g = gamma.data()[bc % c] as f64;
        let b = beta.data()[bc % c] as f64;
        for (o, v) in out[bc * svol..][..svol].iter_mut().zip(&ch) {
            *o = g * (v - mean) / (var + eps).sqrt() + b;
        }
    }
    out
}

// ---- surface metrics ----------------------------------------------------

/// Boundary voxels by the 6-neighbor rule (outside the volume counts as
/// background), as physical coordinates in scan order.
pub fn ref_surface(vol: &LabelVolume, class: u8, spacing: [f64; 3]) -> Vec<[f64; 3]> {
    let [w, h, z] = vol.extents();
    let lab = |x: isize, y: isize, s: isize| -> u8 {
        if x < 0 || y < 0 || s < 0 || x >= w as isize || y >= h as isize || s >= z as isize {
            return 0;
        }
        vol.data()[(x as usize * h + y as usize) * z + s as usize]
    };
    let mut pts = Vec::new();
    for x in 0..w as isize {
        for y in 0..h as isize {
            for s in 0..z as isize {
                if lab(x, y, s) != class {
                    continue;
                }
                let exposed = [
                    lab(x - 1, y, s), lab(x + 1, y, s),
                    lab(x, y - 1, s), lab(x, y + 1, s),
                    lab(x, y, s - 1), lab(x, y, s + 1),
                ]
                .iter()
                .any(|&n| n != class);
                if exposed {
                    pts.push([
                        x as f64 * spacing[0],
                        y as f64 * spacing[1],
                        s as f64 * spacing[2],
                    ]);
                }
            }
        }
    }
    pts
}

/// Nearest-point distance from every point of `from` to the set `to`,
/// in `from`'s order.
pub fn ref_directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            let mut best = f64::INFINITY;
            for b in to {
                let dx = a[0] - b[0];
                let dy = a[1] - b[1];
                let dz = a[2] - b[2];
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < best {
                    best = d2;
                }
            }
            best.sqrt()
        })
        .collect()
}

pub fn ref_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let fwd = ref_directed(a, b);
    let bwd = ref_directed(b, a);
    fwd.into_iter().chain(bwd).fold(f64::NEG_INFINITY, f64::max)
}

pub fn ref_asd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let sa: f64 = ref_directed(a, b).into_iter().sum();
    let sb: f64 = ref_directed(b, a).into_iter().sum();
    (sa + sb) / (a.len() + b.len()) as f64
}

pub fn ref_dice(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> f64 {
    let mut np = 0usize;
    let mut nt = 0usize;
    let mut inter = 0usize;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (ip, it) = (p == class, t == class);
        np += ip as usize;
        nt += it as usize;
        inter += (ip && it) as usize;
    }
    if np + nt == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (np + nt) as f64
}
