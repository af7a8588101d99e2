//! The desk-scale training loop: batch-1 (or small-batch) passes over a
//! phantom set, Adam with the triangular learning-rate schedule, periodic
//! dice/surface validation, and a checkpoint rewritten at every epoch.
//! Everything is a pure function of (config, samples, options), so two runs
//! with the same inputs produce byte-identical logs and checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::arch::Model;
use crate::checkpoint::save_checkpoint;
use crate::config::ModelConfig;
use crate::data::VolumeSample;
use crate::error::{Error, Result};
use crate::metrics::evaluate_volume;
use crate::optim::{adam_step, cyclic_lr, AdamHyper, OptimState};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::{LabelVolume, Tensor};

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// One epoch = one pass over the sample list in order.
    pub epochs: usize,
    pub seed: u64,
    pub half_cycle: u64,
    pub batch_size: usize,
    pub hyper: AdamHyper,
    /// Global L2 gradient-norm ceiling; None (the default) leaves
    /// gradients untouched.
    pub grad_clip: Option<f64>,
    /// Checkpoint path, rewritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// Run validation every this many epochs (the final epoch always
    /// validates).
    pub val_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1,
            seed: 0,
            half_cycle: 100,
            batch_size: 1,
            hyper: AdamHyper::default(),
            grad_clip: None,
            checkpoint: None,
            val_every: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f32,
}

/// Validation summary: per-volume foreground means averaged over the
/// validation volumes. Surface metrics go missing (None) while the model
/// still predicts empty masks for some class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub mean_dice: Option<f64>,
    pub mean_hd: Option<f64>,
    pub mean_asd: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub iters: Vec<IterRecord>,
    pub vals: Vec<ValRecord>,
    /// Iteration at which a non-finite loss or gradient killed the run.
    pub diverged: Option<u64>,
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "n/a".to_string(),
    }
}

impl TrainLog {
    /// Line-oriented serialization: `iter`, `val`, and `diverged` records
    /// in chronological order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut vals = self.vals.iter().peekable();
        for rec in &self.iters {
            let _ = writeln!(out, "iter {} lr {} loss {}", rec.iteration, rec.lr, rec.loss);
            while vals
                .peek()
                .is_some_and(|v| v.iteration == rec.iteration + 1)
            {
                let v = vals.next().expect("peeked");
                let _ = writeln!(
                    out,
                    "val epoch {} iter {} dice {} hd {} asd {}",
                    v.epoch,
                    v.iteration,
                    opt_cell(v.mean_dice),
                    opt_cell(v.mean_hd),
                    opt_cell(v.mean_asd)
                );
            }
        }
        if let Some(iter) = self.diverged {
            let _ = writeln!(out, "diverged iter {iter}");
        }
        out
    }

    pub fn last_val(&self) -> Option<&ValRecord> {
        self.vals.last()
    }
}

pub struct TrainOutput {
    pub params: ParamStore<f32>,
    pub state: OptimState<f32>,
    pub log: TrainLog,
}

/// Class of every voxel by channel-axis argmax; ties go to the lower class
/// id so the result never depends on scan order.
pub fn argmax_labels(logits: &Tensor<f32>) -> Result<Vec<LabelVolume>> {
    let [b, c, w, h, z] = logits.dims5()?;
    if c > 256 {
        return Err(Error::shape(format!("{c} channels cannot map to u8 labels")));
    }
    let svol = w * h * z;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let vol = &logits.data()[bi * c * svol..][..c * svol];
        let mut labels = vec![0u8; svol];
        for (v, label) in labels.iter_mut().enumerate() {
            let mut best_class = 0usize;
            let mut best = vol[v];
            for ci in 1..c {
                let x = vol[ci * svol + v];
                if x > best {
                    best = x;
                    best_class = ci;
                }
            }
            *label = best_class as u8;
        }
        out.push(LabelVolume::new([w, h, z], labels)?);
    }
    Ok(out)
}

/// Forward pass without gradients, straight to hard labels.
pub fn predict(
    model: &Model,
    params: &ParamStore<f32>,
    image: &Tensor<f32>,
) -> Result<LabelVolume> {
    // accept a sample image `[c, w, h, z]` and give it a batch axis
    let volume = match image.shape() {
        &[c, w, h, z] => Tensor::new(&[1, c, w, h, z], image.data().to_vec())?,
        _ => image.clone(),
    };
    let mut tape = Tape::new();
    let trace = model.forward(&mut tape, params, volume, false)?;
    let labels = argmax_labels(tape.value(trace.logits))?;
    labels
        .into_iter()
        .next()
        .ok_or_else(|| Error::shape("empty batch from forward pass".to_string()))
}

fn validate(
    model: &Model,
    params: &ParamStore<f32>,
    samples: &[VolumeSample],
) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    let mut dices = Vec::new();
    let mut hds = Vec::new();
    let mut asds = Vec::new();
    for sample in samples {
        let image = sample.image.as_ref().expect("training samples carry images");
        let pred = predict(model, params, image)?;
        let report = evaluate_volume(
            &pred,
            &sample.labels,
            sample.spacing,
            model.config().num_classes,
        )?;
        if let Some(d) = report.mean_dsc {
            dices.push(d);
        }
        if let Some(h) = report.mean_hd {
            hds.push(h);
        }
        if let Some(a) = report.mean_asd {
            asds.push(a);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok((mean(&dices), mean(&hds), mean(&asds)))
}

/// Stacks `batch` samples into one `[b, 1, w, h, z]` tensor plus the label
/// list the loss wants.
fn stack_batch(batch: &[&VolumeSample]) -> Result<(Tensor<f32>, Vec<LabelVolume>)> {
    let [w, h, z] = batch[0].extents();
    let mut data = Vec::with_capacity(batch.len() * w * h * z);
    let mut labels = Vec::with_capacity(batch.len());
    for sample in batch {
        if sample.extents() != [w, h, z] {
            return Err(Error::shape(format!(
                "cannot batch {} ({:?}) with {} ({:?})",
                batch[0].id,
                [w, h, z],
                sample.id,
                sample.extents()
            )));
        }
        let image = sample
            .image
            .as_ref()
            .ok_or_else(|| Error::data(format!("{}: training needs image data", sample.id)))?;
        data.extend_from_slice(image.data());
        labels.push(sample.labels.clone());
    }
    Ok((Tensor::new(&[batch.len(), 1, w, h, z], data)?, labels))
}

fn clip_gradients(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for v in g.data() {
            let v = *v as f64;
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

pub fn train(
    config: &ModelConfig,
    samples: &[VolumeSample],
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    if samples.is_empty() {
        return Err(Error::config("cannot train on an empty dataset".to_string()));
    }
    if opts.epochs == 0 {
        return Err(Error::config("epochs must be positive".to_string()));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch size must be positive".to_string()));
    }
    if opts.half_cycle == 0 {
        return Err(Error::config("half_cycle must be positive".to_string()));
    }
    for sample in samples {
        sample.check_for_model()?;
        if sample.num_classes != config.num_classes {
            return Err(Error::config(format!(
                "{}: sample has {} classes, model expects {}",
                sample.id, sample.num_classes, config.num_classes
            )));
        }
    }

    let model = Model::new(config.clone())?;
    let mut params: ParamStore<f32> = model.init_params(opts.seed)?;
    let mut state = OptimState::new(opts.hyper);
    let mut log = TrainLog::default();
    let mut tape: Tape<f32> = Tape::new();
    let mut iteration = 0u64;

    'epochs: for epoch in 1..=opts.epochs {
        for batch in samples.chunks(opts.batch_size) {
            let refs: Vec<&VolumeSample> = batch.iter().collect();
            let (volume, labels) = stack_batch(&refs)?;
            let lr = cyclic_lr(iteration, opts.hyper.lr_min, opts.hyper.lr_max, opts.half_cycle);

            tape.reset();
            let trace = model.forward(&mut tape, &params, volume, true)?;
            let loss_id = tape.dice_ce_loss(trace.logits, &labels)?;
            let loss = tape.value(loss_id).item()?;
            log.iters.push(IterRecord { iteration, lr, loss });
            if !loss.is_finite() {
                log.diverged = Some(iteration);
                break 'epochs;
            }

            let mut grads_all = tape.backward(loss_id)?;
            let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
            for (name, id) in &trace.param_ids {
                if let Some(g) = grads_all.take(*id) {
                    grads.insert(name.clone(), g);
                }
            }
            if let Some(max_norm) = opts.grad_clip {
                clip_gradients(&mut grads, max_norm);
            }
            if let Err(err) = adam_step(&mut params, &grads, &mut state, lr) {
                // non-finite gradients are divergence, not a caller bug
                if matches!(err, Error::Numeric(_)) {
                    log.diverged = Some(iteration);
                    break 'epochs;
                }
                return Err(err);
            }
            iteration += 1;
        }

        let last_epoch = epoch == opts.epochs;
        if (opts.val_every > 0 && epoch % opts.val_every == 0) || last_epoch {
            let (mean_dice, mean_hd, mean_asd) = validate(&model, &params, samples)?;
            log.vals.push(ValRecord { epoch, iteration, mean_dice, mean_hd, mean_asd });
        }
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(&params, &state, config, path)?;
        }
    }

    Ok(TrainOutput { params, state, log })
}
