//! Checkpoint files: a UTF-8 manifest (format tag, model config, optimizer
//! step and hyperparameters, named-tensor index, payload digest) followed
//! by every tensor as raw little-endian f32 in index order. Loading is
//! bitwise-exact and refuses anything inconsistent.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::optim::{AdamHyper, OptimState};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &str = "MCKPT1\n";

/// Everything a checkpoint holds. Parameters live under their model names;
/// optimizer moments are indexed as `adam.m/<name>` and `adam.v/<name>`.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub state: OptimState<f32>,
}

impl Checkpoint {
    /// Rejects a checkpoint whose stored config differs from the one the
    /// caller is about to run with.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config != expected {
            return Err(Error::config(format!(
                "checkpoint was trained as `{}` (base {}), requested `{}` (base {})",
                self.config.variant,
                self.config.base_channels,
                expected.variant,
                expected.base_channels
            )));
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push_tensor(payload: &mut Vec<u8>, index: &mut String, name: &str, t: &Tensor<f32>) {
    index.push_str("tensor ");
    index.push_str(name);
    for e in t.shape() {
        index.push_str(&format!(" {e}"));
    }
    index.push('\n');
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    params: &ParamStore<f32>,
    state: &OptimState<f32>,
    config: &ModelConfig,
    path: &Path,
) -> Result<()> {
    let mut index = String::new();
    let mut payload = Vec::new();
    for (name, t) in params.iter() {
        push_tensor(&mut payload, &mut index, name, t);
    }
    for (name, m, v) in state.moments() {
        push_tensor(&mut payload, &mut index, &format!("adam.m/{name}"), m);
        push_tensor(&mut payload, &mut index, &format!("adam.v/{name}"), v);
    }
    let digest = hex(&Sha256::digest(&payload));

    let h = state.hyper;
    let mut text = String::from(MAGIC);
    text.push_str(&config.to_text());
    text.push_str(&format!("step {}\n", state.step));
    text.push_str(&format!("beta1 {}\n", h.beta1));
    text.push_str(&format!("beta2 {}\n", h.beta2));
    text.push_str(&format!("eps {}\n", h.eps));
    text.push_str(&format!("lr_min {}\n", h.lr_min));
    text.push_str(&format!("lr_max {}\n", h.lr_max));
    text.push_str(&index);
    text.push_str(&format!("digest sha256:{digest}\n\n"));

    let mut bytes = text.into_bytes();
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)
        .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        fs::read(path).map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
    let ctx = path.display();

    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(Error::data(format!(
            "{ctx}: not a checkpoint this build understands (bad or newer format tag)"
        )));
    }
    let mut header_end = None;
    for i in MAGIC.len()..bytes.len().saturating_sub(1) {
        if bytes[i] == b'\n' && bytes[i + 1] == b'\n' {
            header_end = Some(i + 2);
            break;
        }
    }
    let header_end =
        header_end.ok_or_else(|| Error::data(format!("{ctx}: unterminated manifest")))?;
    let header = std::str::from_utf8(&bytes[MAGIC.len()..header_end])
        .map_err(|_| Error::data(format!("{ctx}: manifest is not UTF-8")))?;

    let mut config_text = String::new();
    let mut step: Option<u64> = None;
    let mut hyper = AdamHyper::default();
    let mut seen_hyper = [false; 5];
    let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
    let mut digest: Option<String> = None;

    for line in header.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::data(format!("{ctx}: malformed manifest line `{line}`")))?;
        let bad = |what: &str| Error::data(format!("{ctx}: bad {what} `{value}`"));
        match key {
            "step" => step = Some(value.parse().map_err(|_| bad("step"))?),
            "beta1" => {
                hyper.beta1 = value.parse().map_err(|_| bad("beta1"))?;
                seen_hyper[0] = true;
            }
            "beta2" => {
                hyper.beta2 = value.parse().map_err(|_| bad("beta2"))?;
                seen_hyper[1] = true;
            }
            "eps" => {
                hyper.eps = value.parse().map_err(|_| bad("eps"))?;
                seen_hyper[2] = true;
            }
            "lr_min" => {
                hyper.lr_min = value.parse().map_err(|_| bad("lr_min"))?;
                seen_hyper[3] = true;
            }
            "lr_max" => {
                hyper.lr_max = value.parse().map_err(|_| bad("lr_max"))?;
                seen_hyper[4] = true;
            }
            "tensor" => {
                let mut parts = value.split(' ');
                let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| {
                    Error::data(format!("{ctx}: tensor line without a name"))
                })?;
                let shape: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| bad("tensor shape")))
                    .collect::<Result<_>>()?;
                if shape.is_empty() {
                    return Err(Error::data(format!("{ctx}: tensor {name} has no shape")));
                }
                tensors.push((name.to_string(), shape));
            }
            "digest" => {
                digest = Some(
                    value
                        .strip_prefix("sha256:")
                        .ok_or_else(|| bad("digest"))?
                        .to_string(),
                )
            }
            // anything else belongs to the model config
            _ => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }

    let config = ModelConfig::parse(&config_text)
        .map_err(|e| Error::data(format!("{ctx}: embedded config: {e}")))?;
    let step = step.ok_or_else(|| Error::data(format!("{ctx}: manifest is missing `step`")))?;
    if seen_hyper.iter().any(|s| !s) {
        return Err(Error::data(format!(
            "{ctx}: manifest is missing optimizer hyperparameters"
        )));
    }
    let digest =
        digest.ok_or_else(|| Error::data(format!("{ctx}: manifest is missing `digest`")))?;

    let payload = &bytes[header_end..];
    let declared: usize = tensors
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>() * 4)
        .sum();
    if payload.len() != declared {
        return Err(Error::data(format!(
            "{ctx}: payload is {} bytes, index declares {declared} (truncated?)",
            payload.len()
        )));
    }
    if hex(&Sha256::digest(payload)) != digest {
        return Err(Error::data(format!("{ctx}: payload digest mismatch (file corrupt?)")));
    }

    let mut params = ParamStore::new();
    let mut state = OptimState::new(hyper);
    state.step = step;
    let mut moments: std::collections::BTreeMap<String, (Option<Tensor<f32>>, Option<Tensor<f32>>)> =
        Default::default();
    let mut offset = 0usize;
    for (name, shape) in &tensors {
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = payload[offset..offset + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += numel * 4;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::data(format!("{ctx}: tensor {name}: {e}")))?;
        if let Some(rest) = name.strip_prefix("adam.m/") {
            moments.entry(rest.to_string()).or_default().0 = Some(tensor);
        } else if let Some(rest) = name.strip_prefix("adam.v/") {
            moments.entry(rest.to_string()).or_default().1 = Some(tensor);
        } else {
            params.insert(name, tensor)?;
        }
    }
    for (name, (m, v)) in moments {
        let (m, v) = match (m, v) {
            (Some(m), Some(v)) => (m, v),
            _ => {
                return Err(Error::data(format!(
                    "{ctx}: optimizer moments for {name} are incomplete"
                )))
            }
        };
        if !params.contains(&name) {
            return Err(Error::data(format!(
                "{ctx}: optimizer moments for unknown parameter {name}"
            )));
        }
        state.restore_moments(&name, m, v)?;
    }

    Ok(Checkpoint { config, params, state })
}
