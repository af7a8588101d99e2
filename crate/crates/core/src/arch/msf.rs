//! Densely connected multi-scale fusion.
//!
//! Each stream grows a stack of layers. Layer l concatenates every earlier
//! layer of its own stream with the latest layer of the other three streams
//! (realigned to this stream's resolution and width), mixes the pile down
//! to the stream width with a 1x1x1 convolution, then widens the local
//! context with a depthwise 3^3 convolution and a GeLU — the same layer
//! unit the focal block uses, with dense instead of level-wise inputs. The
//! final layer of each stream is the fusion output Y_a.

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::ParamSpec;
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

use super::align::ScaleAligner;
use super::layers::{ConvLayer, GraphCtx};

struct MsfLayer {
    /// Aligners for the three foreign streams, ascending scale order.
    aligners: Vec<ScaleAligner>,
    pointwise: ConvLayer,
    depthwise: ConvLayer,
}

struct MsfScale {
    scale: usize,
    layers: Vec<MsfLayer>,
}

pub struct MsfDense {
    channels: Vec<usize>,
    num_layers: usize,
    scales: Vec<MsfScale>,
}

#[derive(Debug)]
pub struct MsfTrace {
    /// `layers[a-1][l]` is layer l of stream a, l = 0..=L (0 is the input).
    pub layers: Vec<Vec<TensorId>>,
    /// Final layer of each stream.
    pub fused: Vec<TensorId>,
}

impl MsfDense {
    pub fn new(channels: &[usize], num_layers: usize) -> Result<Self> {
        if channels.len() != 4 {
            return Err(Error::config(format!(
                "dense fusion is wired for 4 streams, got {}",
                channels.len()
            )));
        }
        if num_layers == 0 {
            return Err(Error::config("dense fusion needs at least 1 layer"));
        }
        let mut scales = Vec::with_capacity(4);
        for a in 1..=4usize {
            let c = channels[a - 1];
            let p = format!("msf.s{a}");
            let mut layers = Vec::with_capacity(num_layers);
            for l in 1..=num_layers {
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
                // l own-stream layers plus three realigned foreign ones
                let c_cat = (l + 3) * c;
                layers.push(MsfLayer {
                    aligners,
                    pointwise: ConvLayer::new(format!("{p}.l{l}.pw"), c_cat, c, ConvSpec::k1()),
                    depthwise: ConvLayer::new(
                        format!("{p}.l{l}.dw"),
                        c,
                        c,
                        ConvSpec::k3s1p1().with_groups(c),
                    ),
                });
            }
            scales.push(MsfScale { scale: a, layers });
        }
        Ok(MsfDense { channels: channels.to_vec(), num_layers, scales })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for s in &self.scales {
            for l in &s.layers {
                for al in &l.aligners {
                    specs.extend(al.param_specs());
                }
                specs.extend(l.pointwise.param_specs());
                specs.extend(l.depthwise.param_specs());
            }
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
    ) -> Result<MsfTrace> {
        self.check_streams(ctx.tape, streams)?;

        let mut layers: Vec<Vec<TensorId>> = streams.iter().map(|&s| vec![s]).collect();
        for l in 1..=self.num_layers {
            let mut next = Vec::with_capacity(4);
            for s in &self.scales {
                let a = s.scale;
                let layer = &s.layers[l - 1];
                // all earlier own-stream layers, then the foreign streams
                let mut parts: Vec<TensorId> = layers[a - 1][..l].to_vec();
                let mut aligners = layer.aligners.iter();
                for b in 1..=4usize {
                    if b != a {
                        let al = aligners.next().expect("three aligners per layer");
                        parts.push(al.apply(ctx, layers[b - 1][l - 1])?);
                    }
                }
                let cat = ctx.tape.concat_channels(&parts)?;
                let mixed = layer.pointwise.apply(ctx, cat)?;
                let local = layer.depthwise.apply(ctx, mixed)?;
                next.push(ctx.tape.gelu(local)?);
            }
            for (a, id) in next.into_iter().enumerate() {
                layers[a].push(id);
            }
        }

        let fused = layers.iter().map(|l| *l.last().expect("nonempty")).collect();
        Ok(MsfTrace { layers, fused })
    }
}
