//! Glue between the parameter store and the tape.
//!
//! [`GraphCtx`] binds named parameters into a tape as leaves (once each, so
//! fan-out accumulates into a single gradient slot) and the layer structs
//! below pair a `param_specs` listing with an `apply` method, keeping the
//! parameter list and the forward wiring in one place per layer.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::ops::ConvSpec;
use crate::params::{InitKind, ParamSpec, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};

pub struct GraphCtx<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    params: &'a ParamStore<S>,
    bound: BTreeMap<String, TensorId>,
    trainable: bool,
}

impl<'a, S: Scalar> GraphCtx<'a, S> {
    /// `trainable` decides whether bound parameters request gradients;
    /// inference graphs pass `false` and the backward machinery stays cold.
    pub fn new(tape: &'a mut Tape<S>, params: &'a ParamStore<S>, trainable: bool) -> Self {
        GraphCtx { tape, params, bound: BTreeMap::new(), trainable }
    }

    /// Pre-registers an existing tape node as the value of a named
    /// parameter, overriding the store. Lets callers (gradient checks,
    /// mostly) route parameters through leaves they already control.
    pub fn bind(&mut self, name: &str, id: TensorId) {
        self.bound.insert(name.to_string(), id);
    }

    /// Leaf id for a named parameter, binding it on first use.
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let mut tensor = self.params.get(name)?.clone();
        tensor.set_requires_grad(self.trainable);
        let id = self.tape.leaf(tensor);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Names and leaf ids of every parameter the graph actually touched,
    /// in name order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&String, TensorId)> {
        self.bound.iter().map(|(k, &v)| (k, v))
    }
}

/// 3D convolution with optional bias. Weight layout `[c_out, c_in/g, k³]`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, spec: ConvSpec) -> Self {
        ConvLayer { name: name.into(), c_in, c_out, spec }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let [kw, kh, kz] = self.spec.kernel;
        let cg = self.c_in / self.spec.groups;
        vec![
            ParamSpec::new(
                format!("{}.weight", self.name),
                vec![self.c_out, cg, kw, kh, kz],
                InitKind::FanInNormal { fan_in: cg * kw * kh * kz },
            ),
            ParamSpec::new(format!("{}.bias", self.name), vec![self.c_out], InitKind::Zero),
        ]
    }

    pub fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        ctx.tape.conv3d(x, w, Some(b), &self.spec)
    }
}

/// Transposed 3D convolution. Weight layout `[c_in, c_out/g, k³]`.
#[derive(Clone, Debug)]
pub struct DeconvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub spec: ConvSpec,
}

impl DeconvLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, spec: ConvSpec) -> Self {
        DeconvLayer { name: name.into(), c_in, c_out, spec }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let [kw, kh, kz] = self.spec.kernel;
        let cg = self.c_out / self.spec.groups;
        vec![
            ParamSpec::new(
                format!("{}.weight", self.name),
                vec![self.c_in, cg, kw, kh, kz],
                InitKind::FanInNormal {
                    fan_in: (self.c_in / self.spec.groups) * kw * kh * kz,
                },
            ),
            ParamSpec::new(format!("{}.bias", self.name), vec![self.c_out], InitKind::Zero),
        ]
    }

    pub fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        ctx.tape.conv_transpose3d(x, w, Some(b), &self.spec)
    }
}

/// Per-voxel channel mixing (equivalent to a 1×1×1 convolution but cheaper
/// bookkeeping). Weight layout `[c_out, c_in]`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
}

impl LinearLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        LinearLayer { name: name.into(), c_in, c_out }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                format!("{}.weight", self.name),
                vec![self.c_out, self.c_in],
                InitKind::FanInNormal { fan_in: self.c_in },
            ),
            ParamSpec::new(format!("{}.bias", self.name), vec![self.c_out], InitKind::Zero),
        ]
    }

    pub fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        ctx.tape.linear(x, w, Some(b))
    }
}

/// Instance norm with learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub name: String,
    pub channels: usize,
}

impl NormLayer {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        NormLayer { name: name.into(), channels }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{}.gamma", self.name), vec![self.channels], InitKind::One),
            ParamSpec::new(format!("{}.beta", self.name), vec![self.channels], InitKind::Zero),
        ]
    }

    pub fn apply<S: Scalar>(&self, ctx: &mut GraphCtx<'_, S>, x: TensorId) -> Result<TensorId> {
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        ctx.tape.instance_norm(x, gamma, beta)
    }
}
