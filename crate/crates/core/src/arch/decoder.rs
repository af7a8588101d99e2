//! Upsampling decoder and segmentation head.
//!
//! Starting from the bottleneck, each stage doubles the resolution with a
//! stride-2 transposed convolution, concatenates the fusion output of the
//! matching scale, and reduces with conv3 -> instance norm -> ReLU. After
//! the finest stage a 1x1x1 head emits one channel per class.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::ops::ConvSpec;
use crate::params::ParamSpec;
use crate::scalar::Scalar;
use crate::tape::TensorId;

use super::layers::{ConvLayer, DeconvLayer, GraphCtx, NormLayer};

struct DecStage {
    up: DeconvLayer,
    conv: ConvLayer,
    norm: NormLayer,
}

pub struct Decoder {
    /// Stages in application order: scale 4 down to scale 1.
    stages: Vec<DecStage>,
    head: ConvLayer,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut stages = Vec::with_capacity(4);
        for s in (1..=4usize).rev() {
            let c_in = cfg.channels_at(s + 1);
            let c = cfg.channels_at(s);
            let p = format!("dec.s{s}");
            stages.push(DecStage {
                up: DeconvLayer::new(format!("{p}.up"), c_in, c, ConvSpec::k3s2p1_op1()),
                conv: ConvLayer::new(format!("{p}.conv"), 2 * c, c, ConvSpec::k3s1p1()),
                norm: NormLayer::new(format!("{p}.norm"), c),
            });
        }
        let head = ConvLayer::new("dec.head", cfg.channels_at(1), cfg.num_classes, ConvSpec::k1());
        Decoder { stages, head }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for st in &self.stages {
            specs.extend(st.up.param_specs());
            specs.extend(st.conv.param_specs());
            specs.extend(st.norm.param_specs());
        }
        specs.extend(self.head.param_specs());
        specs
    }

    /// `skips` are the fusion outputs Y_1..Y_4 (finest first); `bottleneck`
    /// is I_5. Returns class logits at skip-1 resolution.
    pub fn apply<S: Scalar>(
        &self,
        ctx: &mut GraphCtx<'_, S>,
        skips: &[TensorId],
        bottleneck: TensorId,
    ) -> Result<TensorId> {
        let mut x = bottleneck;
        for (stage, &skip) in self.stages.iter().zip(skips.iter().rev()) {
            let up = stage.up.apply(ctx, x)?;
            let cat = ctx.tape.concat_channels(&[up, skip])?;
            let mixed = stage.conv.apply(ctx, cat)?;
            let normed = stage.norm.apply(ctx, mixed)?;
            x = ctx.tape.relu(normed)?;
        }
        self.head.apply(ctx, x)
    }
}
