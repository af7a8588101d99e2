//! Five-block downsampling encoder producing one feature stream per scale.
//!
//! Block k emits `base_channels * 2^(k-1)` channels. The pre-pool activation
//! of blocks 1..4 is exported as the stream feature I_a; block 5 is the
//! bottleneck and is exported as-is. Max pooling (2x2x2, stride 2) sits
//! between blocks, so input extents must be divisible by 16.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, PoolKind};
use crate::params::ParamSpec;
use crate::scalar::Scalar;
use crate::tape::TensorId;

use super::layers::{ConvLayer, GraphCtx, NormLayer};

struct EncBlock {
    conv1: ConvLayer,
    norm1: NormLayer,
    conv2: ConvLayer,
    norm2: NormLayer,
}

impl EncBlock {
    fn new(index: usize, c_in: usize, c_out: usize) -> Self {
        let p = format!("enc{index}");
        EncBlock {
            conv1: ConvLayer::new(format!("{p}.conv1"), c_in, c_out, ConvSpec::k3s1p1()),
            norm1: NormLayer::new(format!("{p}.norm1"), c_out),
            conv2: ConvLayer::new(format!("{p}.conv2"), c_out, c_out, ConvSpec::k3s1p1()),
            norm2: NormLayer::new(format!("{p}.norm2"), c_out),
        }
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.conv1.param_specs();
        specs.extend(self.norm1.param_specs());
        specs.extend(self.conv2.param_specs());
        specs.extend(self.norm2.param_specs());
        specs
    }

    fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let x = self.conv1.apply(ctx, x)?;
        let x = self.norm1.apply(ctx, x)?;
        let x = ctx.tape.relu(x)?;
        let x = self.conv2.apply(ctx, x)?;
        let x = self.norm2.apply(ctx, x)?;
        ctx.tape.relu(x)
    }
}

pub struct Encoder {
    blocks: Vec<EncBlock>,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut blocks = Vec::with_capacity(5);
        let mut c_in = cfg.input_channels;
        for k in 1..=5 {
            let c_out = cfg.channels_at(k);
            blocks.push(EncBlock::new(k, c_in, c_out));
            c_in = c_out;
        }
        Encoder { blocks }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.blocks.iter().flat_map(|b| b.param_specs()).collect()
    }

    /// Runs the encoder; returns the five stream features I_1..I_5
    /// (finest to coarsest, bottleneck last).
    pub fn apply<S: Scalar>(
        &self,
        ctx: &mut GraphCtx<'_, S>,
        volume: TensorId,
    ) -> Result<Vec<TensorId>> {
        let [_, _, w, h, z] = ctx.tape.value(volume).dims5()?;
        for e in [w, h, z] {
            if e % 16 != 0 {
                return Err(Error::config(format!(
                    "input extents {w}x{h}x{z} must be divisible by 16 (four pooling stages)"
                )));
            }
        }
        if (w / 16) * (h / 16) * (z / 16) < 2 {
            return Err(Error::config(format!(
                "input extents {w}x{h}x{z} leave a single-voxel bottleneck; \
                 its normalization needs at least 2 voxels (grow one extent to 32)"
            )));
        }
        let mut streams = Vec::with_capacity(5);
        let mut x = volume;
        for (k, block) in self.blocks.iter().enumerate() {
            let features = block.apply(ctx, x)?;
            streams.push(features);
            if k < 4 {
                x = ctx.tape.pool3d(features, PoolKind::Max)?;
            }
        }
        Ok(streams)
    }
}
