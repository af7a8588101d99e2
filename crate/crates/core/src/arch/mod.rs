//! Model assembly: encoder, one of the two fusion blocks, and the decoder.

pub mod align;
pub mod decoder;
pub mod describe;
pub mod encoder;
pub mod focal;
pub mod layers;
pub mod msf;

pub use describe::{describe, ReportRow, StructureReport};
pub use focal::{FocalFuse, FocalTrace};
pub use layers::GraphCtx;
pub use msf::{MsfDense, MsfTrace};

use crate::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::params::{ParamSpec, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

use decoder::Decoder;
use encoder::Encoder;

enum Fusion {
    Focal(FocalFuse),
    Msf(MsfDense),
}

/// What the fusion stage computed, depending on the variant.
pub enum FusionTrace {
    Focal(FocalTrace),
    Msf(MsfTrace),
}

impl FusionTrace {
    /// The per-scale fusion outputs Y_1..Y_4.
    pub fn outputs(&self) -> &[TensorId] {
        match self {
            FusionTrace::Focal(t) => &t.fused,
            FusionTrace::Msf(t) => &t.fused,
        }
    }
}

/// Tape ids of the interesting intermediates of one forward pass.
pub struct ModelTrace {
    /// Encoder streams I_1..I_5 (bottleneck last).
    pub streams: Vec<TensorId>,
    pub fusion: FusionTrace,
    pub logits: TensorId,
    /// Where each parameter landed on the tape, for gradient extraction.
    pub param_ids: std::collections::BTreeMap<String, TensorId>,
}

pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    fusion: Fusion,
    decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let channels: Vec<usize> = (1..=4).map(|a| config.channels_at(a)).collect();
        let fusion = match config.variant {
            Variant::FocalFuse => Fusion::Focal(FocalFuse::new(&channels, config.focal_levels)?),
            Variant::Msf3d => Fusion::Msf(MsfDense::new(&channels, config.dense_layers)?),
        };
        Ok(Model {
            encoder: Encoder::new(&config),
            fusion,
            decoder: Decoder::new(&config),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every parameter of the model, in a fixed order (encoder, fusion,
    /// decoder). Initialization walks this order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.encoder.param_specs();
        match &self.fusion {
            Fusion::Focal(f) => specs.extend(f.param_specs()),
            Fusion::Msf(m) => specs.extend(m.param_specs()),
        }
        specs.extend(self.decoder.param_specs());
        specs
    }

    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        ParamStore::init(&self.param_specs(), seed)
    }

    /// One forward pass. `trainable` marks parameters for gradient
    /// accumulation; pass `false` for inference to keep the tape cold.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamStore<S>,
        volume: Tensor<S>,
        trainable: bool,
    ) -> Result<ModelTrace> {
        params.validate_against(&self.param_specs())?;
        let input = tape.leaf(volume);
        let mut ctx = GraphCtx::new(tape, params, trainable);
        let streams = self.encoder.apply(&mut ctx, input)?;
        let fusion = match &self.fusion {
            Fusion::Focal(f) => FusionTrace::Focal(f.apply(&mut ctx, &streams[..4])?),
            Fusion::Msf(m) => FusionTrace::Msf(m.apply(&mut ctx, &streams[..4])?),
        };
        let logits = self.decoder.apply(&mut ctx, fusion.outputs(), streams[4])?;
        let param_ids = ctx.bound_params().map(|(n, id)| (n.clone(), id)).collect();
        Ok(ModelTrace { streams, fusion, logits, param_ids })
    }
}
