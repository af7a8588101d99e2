//! Cross-scale feature alignment.
//!
//! Moving a feature map between resolution streams always spends one learned
//! stride-2 depthwise step (plain convolution going down, transposed going
//! up); any distance beyond a factor of two is closed with average pooling
//! (down) or trilinear resizing (up), and a final 1x1x1 convolution maps the
//! channel count to the destination stream's width.

use crate::error::{Error, Result};
use crate::ops::{ConvSpec, PoolKind};
use crate::params::ParamSpec;
use crate::scalar::Scalar;
use crate::tape::TensorId;

use super::layers::{ConvLayer, DeconvLayer, GraphCtx};

enum DepthStep {
    Down(ConvLayer),
    Up(DeconvLayer),
}

pub struct ScaleAligner {
    pub from_scale: usize,
    pub to_scale: usize,
    depth: DepthStep,
    pointwise: ConvLayer,
}

impl ScaleAligner {
    /// `prefix` namespaces this aligner's parameters (`{prefix}.dw`,
    /// `{prefix}.pw`). Scales are 1-based stream indices in 1..=4.
    pub fn new(
        prefix: &str,
        from_scale: usize,
        to_scale: usize,
        c_from: usize,
        c_to: usize,
    ) -> Result<Self> {
        if !(1..=4).contains(&from_scale) || !(1..=4).contains(&to_scale) {
            return Err(Error::config(format!(
                "aligner scales must lie in 1..=4, got {from_scale} -> {to_scale}"
            )));
        }
        if from_scale == to_scale {
            return Err(Error::config(format!(
                "aligner needs two distinct scales, got {from_scale} -> {to_scale}"
            )));
        }
        let dw_name = format!("{prefix}.dw");
        let depth = if to_scale > from_scale {
            DepthStep::Down(ConvLayer::new(
                dw_name,
                c_from,
                c_from,
                ConvSpec::k3s2p1().with_groups(c_from),
            ))
        } else {
            DepthStep::Up(DeconvLayer::new(
                dw_name,
                c_from,
                c_from,
                ConvSpec::k3s2p1_op1().with_groups(c_from),
            ))
        };
        let pointwise = ConvLayer::new(format!("{prefix}.pw"), c_from, c_to, ConvSpec::k1());
        Ok(ScaleAligner { from_scale, to_scale, depth, pointwise })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = match &self.depth {
            DepthStep::Down(c) => c.param_specs(),
            DepthStep::Up(d) => d.param_specs(),
        };
        specs.extend(self.pointwise.param_specs());
        specs
    }

    pub fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let gap = self.from_scale.abs_diff(self.to_scale);
        let mut x = match &self.depth {
            DepthStep::Down(c) => c.apply(ctx, x)?,
            DepthStep::Up(d) => d.apply(ctx, x)?,
        };
        if self.to_scale > self.from_scale {
            for _ in 1..gap {
                x = ctx.tape.pool3d(x, PoolKind::Avg)?;
            }
        } else if gap > 1 {
            let [_, _, w, h, z] = ctx.tape.value(x).dims5()?;
            let f = 1usize << (gap - 1);
            x = ctx.tape.resize_trilinear(x, [w * f, h * f, z * f])?;
        }
        self.pointwise.apply(ctx, x)
    }
}
