//! Model hyperparameters and their plain-text `key value` file format.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Four-stream encoder with focal multi-scale fusion at every scale.
    FocalFuse,
    /// Four-stream encoder with densely connected multi-scale fusion.
    Msf3d,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "focal_fuse" => Ok(Variant::FocalFuse),
            "msf3d" => Ok(Variant::Msf3d),
            other => Err(Error::config(format!(
                "unknown variant {other:?} (expected focal_fuse or msf3d)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::FocalFuse => "focal_fuse",
            Variant::Msf3d => "msf3d",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Channel width at the finest scale; scale k has base_channels << (k-1).
    pub base_channels: usize,
    /// Number of encoder streams feeding the fusion blocks. The fusion
    /// wiring is written for exactly 4.
    pub num_scales: usize,
    /// Focal context levels N (focal_fuse only).
    pub focal_levels: usize,
    /// Dense fusion layers per block (msf3d only).
    pub dense_layers: usize,
    pub num_classes: usize,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::FocalFuse,
            base_channels: 16,
            num_scales: 4,
            focal_levels: 2,
            dense_layers: 3,
            num_classes: 6,
            input_channels: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales != 4 {
            return Err(Error::config(format!(
                "num_scales must be 4 (the fusion wiring is fixed at four streams), got {}",
                self.num_scales
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive".to_string()));
        }
        if self.focal_levels == 0 {
            return Err(Error::config("focal_levels must be at least 1".to_string()));
        }
        if self.dense_layers == 0 {
            return Err(Error::config("dense_layers must be at least 1".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be positive".to_string()));
        }
        Ok(())
    }

    /// Channel width at encoder scale `k` in 1..=5 (scale 5 is the
    /// bottleneck).
    pub fn channels_at(&self, scale: usize) -> usize {
        debug_assert!((1..=5).contains(&scale));
        self.base_channels << (scale - 1)
    }

    /// Parses the `key value` config format: one pair per line, `#` starts
    /// a comment, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::config(format!("line {}: expected `key value`, got {raw:?}", ln + 1))
            })?;
            let value = value.trim();
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| {
                    Error::config(format!("line {}: {key} wants an integer, got {v:?}", ln + 1))
                })
            };
            match key {
                "variant" => cfg.variant = Variant::parse(value)?,
                "base_channels" => cfg.base_channels = parse_usize(value)?,
                "num_scales" => cfg.num_scales = parse_usize(value)?,
                "focal_levels" => cfg.focal_levels = parse_usize(value)?,
                "dense_layers" => cfg.dense_layers = parse_usize(value)?,
                "num_classes" => cfg.num_classes = parse_usize(value)?,
                "input_channels" => cfg.input_channels = parse_usize(value)?,
                other => {
                    return Err(Error::config(format!(
                        "line {}: unknown config key {other:?}",
                        ln + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialized form; `parse` of the output reproduces the config.
    pub fn to_text(&self) -> String {
        format!(
            "variant {}\nbase_channels {}\nnum_scales {}\nfocal_levels {}\n\
             dense_layers {}\nnum_classes {}\ninput_channels {}\n",
            self.variant,
            self.base_channels,
            self.num_scales,
            self.focal_levels,
            self.dense_layers,
            self.num_classes,
            self.input_channels
        )
    }
}
