//! Subcommand bodies. Every handler is deterministic given its flags: file
//! listings are sorted, seeds flow from the --seed flag, and nothing reads
//! clocks or process ids.

use std::fs;
use std::path::{Path, PathBuf};

use volfuse_core::arch::describe as describe_structure;
use volfuse_core::data::{
    generate_phantom_set, read_volume, write_volume, PhantomSpec, VolumeSample,
};
use volfuse_core::metrics::{evaluate_volume, ClassMetrics, MetricsReport};
use volfuse_core::train::{predict, train as run_training, TrainOptions};
use volfuse_core::{
    load_checkpoint, Error, Model, ModelConfig, Result, Variant,
};

use crate::Outcome;

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| Error::data(format!("creating {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

/// Sorted list of the .mvol files in a directory.
fn list_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::data(format!("listing {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|er| er.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "mvol"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_config(
    path: Option<&Path>,
    variant: Option<String>,
    base_channels: Option<usize>,
) -> Result<ModelConfig> {
    let mut config = match path {
        Some(p) => ModelConfig::parse(&read_to_string(p)?)?,
        None => ModelConfig::default(),
    };
    if let Some(v) = variant {
        config.variant = Variant::parse(&v)?;
    }
    if let Some(b) = base_channels {
        config.base_channels = b;
    }
    config.validate()?;
    Ok(config)
}

pub fn gen_data(spec_path: Option<&Path>, count: usize, seed: u64, out: &Path) -> Result<Outcome> {
    let mut spec = match spec_path {
        Some(p) => PhantomSpec::parse(&read_to_string(p)?)?,
        None => PhantomSpec::default(),
    };
    spec.seed = seed;
    ensure_dir(out)?;

    let samples = generate_phantom_set(&spec, count)?;
    let mut manifest = String::new();
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("{}.mvol", sample.id);
        let path = out.join(&name);
        write_volume(sample, &path)?;
        let bytes =
            fs::read(&path).map_err(|e| Error::data(format!("rereading {name}: {e}")))?;
        manifest.push_str(&format!(
            "id {} seed {} file {} digest sha256:{}\n",
            sample.id,
            spec.for_sample(i as u64).seed,
            name,
            sha256_hex(&bytes)
        ));
    }
    write_file(&out.join("manifest.txt"), &manifest)?;
    println!("wrote {count} volume(s) to {}", out.display());
    Ok(Outcome::Success)
}

pub struct TrainFlags {
    pub epochs: usize,
    pub seed: u64,
    pub half_cycle: u64,
    pub variant: Option<String>,
    pub base_channels: Option<usize>,
    pub grad_clip: Option<f64>,
    pub val_every: usize,
}

pub fn train(
    config_path: Option<&Path>,
    data: &Path,
    out: &Path,
    flags: TrainFlags,
) -> Result<Outcome> {
    let config = load_config(config_path, flags.variant, flags.base_channels)?;
    let paths = list_volumes(data)?;
    if paths.is_empty() {
        return Err(Error::data(format!("no .mvol volumes in {}", data.display())));
    }
    let samples: Vec<VolumeSample> =
        paths.iter().map(|p| read_volume(p)).collect::<Result<_>>()?;
    ensure_dir(out)?;

    let opts = TrainOptions {
        epochs: flags.epochs,
        seed: flags.seed,
        half_cycle: flags.half_cycle,
        grad_clip: flags.grad_clip,
        val_every: flags.val_every,
        checkpoint: Some(out.join("model.ckpt")),
        ..TrainOptions::default()
    };
    let result = run_training(&config, &samples, &opts)?;
    write_file(&out.join("train.log"), &result.log.to_text())?;

    if let Some(iter) = result.log.diverged {
        return Ok(Outcome::Diverged(iter));
    }
    if let Some(val) = result.log.last_val() {
        let dice = val.mean_dice.map_or("n/a".to_string(), |d| format!("{d:.4}"));
        println!(
            "trained {} iteration(s); final mean foreground dice {dice}",
            result.log.iters.len()
        );
    }
    Ok(Outcome::Success)
}

pub fn infer(checkpoint: &Path, volume: &Path, out: &Path) -> Result<Outcome> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = Model::new(ckpt.config.clone())?;
    let sample = read_volume(volume)?;
    sample.check_for_model()?;
    if sample.num_classes != ckpt.config.num_classes {
        return Err(Error::config(format!(
            "{}: volume declares {} classes, checkpoint was trained with {}",
            sample.id, sample.num_classes, ckpt.config.num_classes
        )));
    }
    let image = sample.image.as_ref().ok_or_else(|| {
        Error::data(format!("{}: volume has no image payload to infer from", sample.id))
    })?;
    let labels = predict(&model, &ckpt.params, image)?;
    let prediction = VolumeSample {
        id: sample.id.clone(),
        image: None,
        labels,
        spacing: sample.spacing,
        num_classes: sample.num_classes,
    };
    write_volume(&prediction, out)?;
    println!("wrote prediction for {} to {}", sample.id, out.display());
    Ok(Outcome::Success)
}

/// Index volumes by their header id, rejecting duplicates.
fn index_by_id(dir: &Path) -> Result<Vec<(String, VolumeSample)>> {
    let mut out = Vec::new();
    for path in list_volumes(dir)? {
        let sample = read_volume(&path)?;
        if out.iter().any(|(id, _)| id == &sample.id) {
            return Err(Error::data(format!(
                "{}: duplicate volume id {}",
                dir.display(),
                sample.id
            )));
        }
        out.push((sample.id.clone(), sample));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn eval(pred_dir: &Path, truth_dir: &Path, out: Option<&Path>) -> Result<Outcome> {
    let preds = index_by_id(pred_dir)?;
    let truths = index_by_id(truth_dir)?;
    if preds.is_empty() {
        return Err(Error::data(format!("no .mvol volumes in {}", pred_dir.display())));
    }

    let pred_ids: Vec<&str> = preds.iter().map(|(id, _)| id.as_str()).collect();
    let truth_ids: Vec<&str> = truths.iter().map(|(id, _)| id.as_str()).collect();
    let unmatched: Vec<&str> = pred_ids
        .iter()
        .filter(|id| !truth_ids.contains(id))
        .chain(truth_ids.iter().filter(|id| !pred_ids.contains(id)))
        .copied()
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::data(format!(
            "volumes without a counterpart: {}",
            unmatched.join(", ")
        )));
    }

    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let mut reports = Vec::new();
    for ((id, pred), (_, truth)) in preds.iter().zip(&truths) {
        let report =
            evaluate_volume(&pred.labels, &truth.labels, truth.spacing, truth.num_classes)?;
        if let Some(dir) = out {
            write_file(&dir.join(format!("{id}.csv")), &report.to_csv())?;
        }
        reports.push(report);
    }

    let aggregate = aggregate_reports(&reports);
    let table = aggregate.to_text_table();
    print!("{table}");
    if let Some(dir) = out {
        write_file(&dir.join("aggregate.csv"), &aggregate.to_csv())?;
        write_file(&dir.join("aggregate.txt"), &table)?;
    }
    Ok(Outcome::Success)
}

/// Mean of the per-volume reports: per-class dice averaged across volumes,
/// surface metrics averaged where defined, overall means averaged over the
/// volumes that had them.
fn aggregate_reports(reports: &[MetricsReport]) -> MetricsReport {
    let classes = reports.iter().map(|r| r.per_class.len()).max().unwrap_or(0);
    let mean = |vals: &[f64]| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let mut per_class = Vec::with_capacity(classes);
    for ci in 0..classes {
        let rows: Vec<&ClassMetrics> =
            reports.iter().filter_map(|r| r.per_class.get(ci)).collect();
        let dsc: Vec<f64> = rows.iter().map(|c| c.dsc).collect();
        let hd: Vec<f64> = rows.iter().filter_map(|c| c.hd).collect();
        let asd: Vec<f64> = rows.iter().filter_map(|c| c.asd).collect();
        per_class.push(ClassMetrics {
            class: rows.first().map_or(0, |c| c.class),
            dsc: mean(&dsc).unwrap_or(0.0),
            hd: mean(&hd),
            asd: mean(&asd),
            in_truth: rows.iter().any(|c| c.in_truth),
        });
    }
    let dsc: Vec<f64> = reports.iter().filter_map(|r| r.mean_dsc).collect();
    let hd: Vec<f64> = reports.iter().filter_map(|r| r.mean_hd).collect();
    let asd: Vec<f64> = reports.iter().filter_map(|r| r.mean_asd).collect();
    MetricsReport {
        per_class,
        mean_dsc: mean(&dsc),
        mean_hd: mean(&hd),
        mean_asd: mean(&asd),
    }
}

pub fn describe(
    config_path: Option<&Path>,
    variant: Option<String>,
    base_channels: Option<usize>,
) -> Result<Outcome> {
    let config = load_config(config_path, variant, base_channels)?;
    let report = describe_structure(&config)?;
    print!("{}", report.to_text());
    Ok(Outcome::Success)
}
