//! Focal multi-scale fusion.
//!
//! Every resolution stream builds a stack of context levels: each level
//! gathers the previous level from all four streams (cross-scale features
//! are realigned first), fuses them with a 1x1x1 convolution, and widens
//! the local context with a depthwise 3^3 convolution plus GeLU. A final
//! "level" is the global average of the deepest local level. Per-level gate
//! maps — plain linear projections of the level-0 features, no squashing —
//! weight each level's contribution to a modulator, which (after a channel
//! mixing projection) multiplies a linear projection of the stream's own
//! input. Zeroed gates therefore annihilate the whole output.

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::ParamSpec;
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

use super::align::ScaleAligner;
use super::layers::{ConvLayer, GraphCtx, LinearLayer};

struct FocalLevel {
    /// Aligners for the three foreign streams, ascending scale order.
    aligners: Vec<ScaleAligner>,
    fuse: ConvLayer,
    depthwise: ConvLayer,
}

struct FocalScale {
    scale: usize,
    proj: LinearLayer,
    levels: Vec<FocalLevel>,
    gates: LinearLayer,
    mix: LinearLayer,
    query: LinearLayer,
}

pub struct FocalFuse {
    /// Stream widths, finest first.
    channels: Vec<usize>,
    num_levels: usize,
    scales: Vec<FocalScale>,
}

/// Tape ids of everything the block computes, for inspection and tests.
#[derive(Debug)]
pub struct FocalTrace {
    /// `levels[a-1][l]` is the level-l feature of stream a, l = 0..=N.
    pub levels: Vec<Vec<TensorId>>,
    /// Global context per stream: the average-pooled deepest level.
    pub global_ctx: Vec<TensorId>,
    /// Raw gate maps per stream (N+1 channels each).
    pub gates: Vec<TensorId>,
    /// Modulated outputs Y_a, shaped like the stream inputs.
    pub fused: Vec<TensorId>,
}

impl FocalFuse {
    pub fn new(channels: &[usize], num_levels: usize) -> Result<Self> {
        if channels.len() != 4 {
            return Err(Error::config(format!(
                "focal fusion is wired for 4 streams, got {}",
                channels.len()
            )));
        }
        if num_levels == 0 {
            return Err(Error::config("focal fusion needs at least 1 level"));
        }
        let mut scales = Vec::with_capacity(4);
        for a in 1..=4usize {
            let c = channels[a - 1];
            let p = format!("focal.s{a}");
            let mut levels = Vec::with_capacity(num_levels);
            for l in 1..=num_levels {
                let mut aligners = Vec::with_capacity(3);
                for b in 1..=4usize {
                    if b != a {
                        aligners.push(ScaleAligner::new(
                            &format!("{p}.l{l}.from{b}"),
                            b,
                            a,
                            channels[b - 1],
                            c,
                        )?);
                    }
                }
                levels.push(FocalLevel {
                    aligners,
                    fuse: ConvLayer::new(format!("{p}.l{l}.fuse"), 4 * c, c, ConvSpec::k1()),
                    depthwise: ConvLayer::new(
                        format!("{p}.l{l}.dw"),
                        c,
                        c,
                        ConvSpec::k3s1p1().with_groups(c),
                    ),
                });
            }
            scales.push(FocalScale {
                scale: a,
                proj: LinearLayer::new(format!("{p}.proj"), c, c),
                levels,
                gates: LinearLayer::new(format!("{p}.gates"), c, num_levels + 1),
                mix: LinearLayer::new(format!("{p}.mix"), c, c),
                query: LinearLayer::new(format!("{p}.query"), c, c),
            });
        }
        Ok(FocalFuse { channels: channels.to_vec(), num_levels, scales })
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for s in &self.scales {
            specs.extend(s.proj.param_specs());
            for l in &s.levels {
                for al in &l.aligners {
                    specs.extend(al.param_specs());
                }
                specs.extend(l.fuse.param_specs());
                specs.extend(l.depthwise.param_specs());
            }
            specs.extend(s.gates.param_specs());
            specs.extend(s.mix.param_specs());
            specs.extend(s.query.param_specs());
        }
        specs
    }

    fn check_streams<S: Scalar>(&self, tape: &Tape<S>, streams: &[TensorId]) -> Result<()> {
        if streams.len() != 4 {
            return Err(Error::shape(format!("expected 4 streams, got {}", streams.len())));
        }
        let mut prev: Option<[usize; 5]> = None;
        for (i, &s) in streams.iter().enumerate() {
            let d = tape.value(s).dims5()?;
            if d[1] != self.channels[i] {
                return Err(Error::shape(format!(
                    "stream {} has {} channels, block is built for {}",
                    i + 1,
                    d[1],
                    self.channels[i]
                )));
            }
            if let Some(p) = prev {
                if [p[2] / 2, p[3] / 2, p[4] / 2] != [d[2], d[3], d[4]] || p[0] != d[0] {
                    return Err(Error::shape(format!(
                        "stream {} extents {:?} are not half of stream {} extents {:?}",
                        i + 1,
                        &d[2..],
                        i,
                        &p[2..]
                    )));
                }
            }
            prev = Some(d);
        }
        Ok(())
    }

    pub fn apply<S: Scalar>(
        &self,
        ctx: &mut GraphCtx<'_, S>,
        streams: &[TensorId],
    ) -> Result<FocalTrace> {
        self.check_streams(ctx.tape, streams)?;

        // level 0: per-stream linear projection
        let mut levels: Vec<Vec<TensorId>> = Vec::with_capacity(4);
        for (s, &input) in self.scales.iter().zip(streams) {
            levels.push(vec![s.proj.apply(ctx, input)?]);
        }

        // levels 1..=N: gather all four streams, fuse, widen locally
        for l in 1..=self.num_levels {
            let mut next = Vec::with_capacity(4);
            for s in &self.scales {
                let a = s.scale;
                let level = &s.levels[l - 1];
                let mut parts = vec![levels[a - 1][l - 1]];
                let mut aligners = level.aligners.iter();
                for b in 1..=4usize {
                    if b != a {
                        let al = aligners.next().expect("three aligners per level");
                        parts.push(al.apply(ctx, levels[b - 1][l - 1])?);
                    }
                }
                let cat = ctx.tape.concat_channels(&parts)?;
                let fused = level.fuse.apply(ctx, cat)?;
                let local = level.depthwise.apply(ctx, fused)?;
                next.push(ctx.tape.gelu(local)?);
            }
            for (a, id) in next.into_iter().enumerate() {
                levels[a].push(id);
            }
        }

        let mut global_ctx = Vec::with_capacity(4);
        let mut gates = Vec::with_capacity(4);
        let mut fused = Vec::with_capacity(4);
        for (s, &input) in self.scales.iter().zip(streams) {
            let a = s.scale;
            global_ctx.push(ctx.tape.global_avg_pool(levels[a - 1][self.num_levels])?);
            let gate = s.gates.apply(ctx, levels[a - 1][0])?;
            gates.push(gate);

            // modulator: sum of gated levels, the global context last
            let mut acc: Option<TensorId> = None;
            for l in 1..=self.num_levels + 1 {
                let feature = if l <= self.num_levels {
                    levels[a - 1][l]
                } else {
                    global_ctx[a - 1]
                };
                let g = ctx.tape.slice_channels(gate, l - 1, 1)?;
                let term = ctx.tape.mul_broadcast(feature, g)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => ctx.tape.add(prev, term)?,
                });
            }
            let modulator = s.mix.apply(ctx, acc.expect("at least one level"))?;
            let q = s.query.apply(ctx, input)?;
            fused.push(ctx.tape.mul_broadcast(modulator, q)?);
        }

        Ok(FocalTrace { levels, global_ctx, gates, fused })
    }
}
