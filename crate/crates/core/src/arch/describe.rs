//! Structural report: per-module parameter counts, activation shapes at a
//! 32^3 reference input, and per-stream receptive-field schedules.

use std::fmt::Write as _;

use crate::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::params::ParamSpec;

use super::Model;

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub module: String,
    /// Parameters of rank >= 2 (conv/linear kernels).
    pub weight_params: usize,
    /// Rank-1 parameters: biases and norm scale/shift.
    pub bias_params: usize,
    /// Output activation shape for a 1x{in}x32x32x32 input.
    pub activation: Option<Vec<usize>>,
    /// Local receptive-field sizes contributed by this module's depthwise
    /// stack, plus "global" where a pooled context level exists.
    pub receptive: Option<String>,
}

impl ReportRow {
    pub fn total(&self) -> usize {
        self.weight_params + self.bias_params
    }
}

pub struct StructureReport {
    pub variant: Variant,
    pub rows: Vec<ReportRow>,
    pub total_params: usize,
}

/// Module key for a parameter name: encoder blocks group by their first
/// segment, everything else by the first two ("focal.s1", "dec.head", ...).
fn module_of(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or(name);
    if first.starts_with("enc") {
        return first.to_string();
    }
    match parts.next() {
        Some(second) => format!("{first}.{second}"),
        None => first.to_string(),
    }
}

fn fuse_receptive(levels: usize, with_global: bool) -> String {
    let mut entries: Vec<String> = (1..=levels).map(|l| (3 * l).to_string()).collect();
    if with_global {
        entries.push("global".to_string());
    }
    entries.join(", ")
}

pub fn describe(config: &ModelConfig) -> Result<StructureReport> {
    let model = Model::new(config.clone())?;
    let specs: Vec<ParamSpec> = model.param_specs();

    let mut rows: Vec<ReportRow> = Vec::new();
    for spec in &specs {
        let module = module_of(&spec.name);
        if rows.last().map(|r| r.module.as_str()) != Some(module.as_str()) {
            rows.push(ReportRow {
                module,
                weight_params: 0,
                bias_params: 0,
                activation: None,
                receptive: None,
            });
        }
        let row = rows.last_mut().expect("just pushed");
        if spec.shape.len() >= 2 {
            row.weight_params += spec.numel();
        } else {
            row.bias_params += spec.numel();
        }
    }

    // reference activation shapes for a 32^3 input
    const REF: usize = 32;
    for row in &mut rows {
        let (scale, channels) = if let Some(k) = row.module.strip_prefix("enc") {
            let k: usize = k.parse().expect("encoder block index");
            (k, config.channels_at(k))
        } else if let Some(a) = row.module.strip_prefix("focal.s") {
            let a: usize = a.parse().expect("scale index");
            row.receptive = Some(fuse_receptive(config.focal_levels, true));
            (a, config.channels_at(a))
        } else if let Some(a) = row.module.strip_prefix("msf.s") {
            let a: usize = a.parse().expect("scale index");
            row.receptive = Some(fuse_receptive(config.dense_layers, false));
            (a, config.channels_at(a))
        } else if let Some(s) = row.module.strip_prefix("dec.s") {
            let s: usize = s.parse().expect("stage index");
            (s, config.channels_at(s))
        } else {
            debug_assert_eq!(row.module, "dec.head");
            (1, config.num_classes)
        };
        let e = REF >> (scale - 1);
        row.activation = Some(vec![1, channels, e, e, e]);
    }

    let total_params = specs.iter().map(|s| s.numel()).sum();
    Ok(StructureReport { variant: config.variant, rows, total_params })
}

impl StructureReport {
    pub fn to_text(&self) -> String {
        let fmt_shape = |s: &Option<Vec<usize>>| -> String {
            match s {
                Some(v) => v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"),
                None => "-".to_string(),
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "variant: {}", self.variant);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>8} {:<16} {}",
            "module", "weights", "biases", "activation@32^3", "receptive"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>8} {:<16} {}",
                row.module,
                row.weight_params,
                row.bias_params,
                fmt_shape(&row.activation),
                row.receptive.as_deref().unwrap_or("-")
            );
        }
        let _ = writeln!(out, "total parameters: {}", self.total_params);
        out
    }
}
