//! Combined segmentation loss: equal parts soft dice (over softmax
//! probabilities, averaged across all classes) and voxel-mean cross
//! entropy. Forward and backward are hand-fused into one tape primitive so
//! the per-class reductions are computed once and the gradient is exact.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelVolume, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// Everything the backward pass needs, captured at forward time.
pub struct DiceCeCache<S: Scalar> {
    probs: Tensor<S>,
    labels_flat: Vec<u8>,
    /// Per class: 2 * sum(p * g) + eps.
    class_num: Vec<S>,
    /// Per class: sum(p) + sum(g) + eps.
    class_den: Vec<S>,
    pub dice_loss: S,
    pub ce_loss: S,
}

impl<S: Scalar> DiceCeCache<S> {
    pub fn probs(&self) -> &Tensor<S> {
        &self.probs
    }
}

/// loss = 0.5 * (1 - mean_c dice_c) + 0.5 * mean_v (-log p[label_v]).
///
/// dice_c = (2 * sum(p_c * g_c) + eps) / (sum(p_c) + sum(g_c) + eps), with
/// the sums running over every voxel of every batch item; the mean runs over
/// all classes, background included. Cross entropy is computed in
/// log-softmax form, so it stays finite for any finite logits.
pub fn dice_ce_forward<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[LabelVolume],
) -> Result<(Tensor<S>, DiceCeCache<S>)> {
    let [b, c, w, h, z] = logits.dims5()?;
    logits.ensure_finite("dice_ce logits")?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "{} label volumes for batch of {b}",
            labels.len()
        )));
    }
    for (i, lv) in labels.iter().enumerate() {
        if lv.extents() != [w, h, z] {
            return Err(Error::shape(format!(
                "label volume {i} extents {:?} do not match logits {:?}",
                lv.extents(),
                [w, h, z]
            )));
        }
        lv.ensure_classes(c, "dice_ce labels")?;
    }

    let svol = w * h * z;
    let n_vox = b * svol;
    let eps = S::from_f64(DICE_EPS);

    let mut probs = vec![S::zero(); logits.numel()];
    let mut labels_flat = Vec::with_capacity(n_vox);
    let mut sum_p = vec![S::zero(); c];
    let mut sum_pg = vec![S::zero(); c];
    let mut count_g = vec![0usize; c];
    let mut ce_acc = S::zero();

    let mut maxes = vec![S::zero(); svol];
    let mut sums = vec![S::zero(); svol];
    for bi in 0..b {
        let z_b = &logits.data()[bi * c * svol..][..c * svol];
        let p_b = &mut probs[bi * c * svol..][..c * svol];
        let lab = labels[bi].data();
        labels_flat.extend_from_slice(lab);

        maxes.fill(S::neg_infinity());
        for ci in 0..c {
            for (m, &v) in maxes.iter_mut().zip(&z_b[ci * svol..][..svol]) {
                if v > *m {
                    *m = v;
                }
            }
        }
        sums.fill(S::zero());
        for ci in 0..c {
            let z_row = &z_b[ci * svol..][..svol];
            let p_row = &mut p_b[ci * svol..][..svol];
            for (((p, &zv), &m), s) in
                p_row.iter_mut().zip(z_row).zip(maxes.iter()).zip(sums.iter_mut())
            {
                let e = (zv - m).exp();
                *p = e;
                *s += e;
            }
        }
        for ci in 0..c {
            let p_row = &mut p_b[ci * svol..][..svol];
            let mut sp = S::zero();
            let mut spg = S::zero();
            for ((p, &s), &g) in p_row.iter_mut().zip(sums.iter()).zip(lab) {
                *p = *p / s;
                sp += *p;
                if g as usize == ci {
                    spg += *p;
                }
            }
            sum_p[ci] += sp;
            sum_pg[ci] += spg;
        }
        // Cross entropy straight from the log-softmax identity:
        // -log p_g = -(z_g - max) + log(sum exp(z - max)); the log stays in
        // [0, log c], so the term is finite for finite logits.
        for (v, &g) in lab.iter().enumerate() {
            let zg = z_b[g as usize * svol + v];
            ce_acc += -(zg - maxes[v]) + sums[v].ln();
            count_g[g as usize] += 1;
        }
    }

    let two = S::from_f64(2.0);
    let mut dice_mean = S::zero();
    let mut class_num = vec![S::zero(); c];
    let mut class_den = vec![S::zero(); c];
    for ci in 0..c {
        let sg = S::from_f64(count_g[ci] as f64);
        let num = two * sum_pg[ci] + eps;
        let den = sum_p[ci] + sg + eps;
        class_num[ci] = num;
        class_den[ci] = den;
        dice_mean += num / den;
    }
    dice_mean = dice_mean / S::from_f64(c as f64);

    let dice_loss = S::one() - dice_mean;
    let ce_loss = ce_acc / S::from_f64(n_vox as f64);
    let half = S::from_f64(0.5);
    let total = half * dice_loss + half * ce_loss;
    if !total.is_finite() {
        return Err(Error::numeric(format!("dice_ce loss is not finite: {total}")));
    }

    let cache = DiceCeCache {
        probs: Tensor::new(logits.shape(), probs)?,
        labels_flat,
        class_num,
        class_den,
        dice_loss,
        ce_loss,
    };
    Ok((Tensor::scalar(total)?, cache))
}

/// Gradient of the combined loss w.r.t. the logits, given the upstream
/// scalar gradient.
pub fn dice_ce_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    cache: &DiceCeCache<S>,
) -> Result<Tensor<S>> {
    let g0 = grad_out.item()?;
    let [b, c, w, h, z] = cache.probs.dims5()?;
    let svol = w * h * z;
    let n_vox = b * svol;
    let half = S::from_f64(0.5);
    let inv_c = S::from_f64(1.0 / c as f64);
    let inv_n = S::from_f64(1.0 / n_vox as f64);
    let two = S::from_f64(2.0);

    // d(loss)/dp_cv depends only on the class and whether the voxel's label
    // is that class, so precompute both variants per class:
    //   miss: label != c  ->  +0.5/C * num / den^2
    //   hit:  label == c  ->  -0.5/C * (2*den - num) / den^2
    let mut coef_miss = vec![S::zero(); c];
    let mut coef_hit = vec![S::zero(); c];
    for ci in 0..c {
        let num = cache.class_num[ci];
        let den = cache.class_den[ci];
        let den2 = den * den;
        coef_miss[ci] = half * inv_c * (num / den2);
        coef_hit[ci] = -(half * inv_c) * (two * den - num) / den2;
    }

    let mut gin = vec![S::zero(); cache.probs.numel()];
    // Scratch: per-voxel dot of a_cv * p_cv (the softmax-jacobian coupling
    // term for the dice part).
    let mut dots = vec![S::zero(); svol];
    for bi in 0..b {
        let p_b = &cache.probs.data()[bi * c * svol..][..c * svol];
        let lab = &cache.labels_flat[bi * svol..][..svol];
        dots.fill(S::zero());
        for ci in 0..c {
            let p_row = &p_b[ci * svol..][..svol];
            for ((d, &p), &g) in dots.iter_mut().zip(p_row).zip(lab) {
                let a = if g as usize == ci { coef_hit[ci] } else { coef_miss[ci] };
                *d += a * p;
            }
        }
        let g_b = &mut gin[bi * c * svol..][..c * svol];
        for ci in 0..c {
            let p_row = &p_b[ci * svol..][..svol];
            let g_row = &mut g_b[ci * svol..][..svol];
            for (((gv, &p), &g), &dot) in
                g_row.iter_mut().zip(p_row).zip(lab).zip(dots.iter())
            {
                let hit = g as usize == ci;
                let a = if hit { coef_hit[ci] } else { coef_miss[ci] };
                // Dice part chained through softmax, plus the closed-form
                // cross-entropy-through-softmax term (p - onehot)/N.
                let dice_part = p * (a - dot);
                let onehot = if hit { S::one() } else { S::zero() };
                let ce_part = half * inv_n * (p - onehot);
                *gv = g0 * (dice_part + ce_part);
            }
        }
    }

    Tensor::new(cache.probs.shape(), gin)
}
