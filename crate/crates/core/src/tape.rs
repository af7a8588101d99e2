//! Reverse-mode autodiff over a linear tape. Each op appends a node holding
//! its output value plus whatever the backward pass needs (input ids, the
//! occasional cache like pooling argmaxes or norm statistics). Nodes are
//! topologically ordered by construction, so `backward` is a single reverse
//! sweep with fixed accumulation order — gradients are bitwise reproducible.

use crate::error::{Error, Result};
use crate::loss::DiceCeCache;
use crate::ops::activation as act;
use crate::ops::conv;
use crate::ops::elementwise as ew;
use crate::ops::linear as lin;
use crate::ops::norm;
use crate::ops::pool;
use crate::ops::resize;
use crate::ops::{ConvSpec, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::{LabelVolume, Tensor};

/// Handle to a tape node. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Record<S: Scalar> {
    Leaf,
    Conv3d { input: TensorId, weight: TensorId, bias: Option<TensorId>, spec: ConvSpec },
    ConvTranspose3d { input: TensorId, weight: TensorId, bias: Option<TensorId>, spec: ConvSpec },
    Pool { input: TensorId, kind: PoolKind, argmax: Option<Vec<usize>> },
    GlobalAvgPool { input: TensorId },
    Resize { input: TensorId },
    Linear { input: TensorId, weight: TensorId, bias: Option<TensorId> },
    InstanceNorm { input: TensorId, gamma: TensorId, beta: TensorId, stats: norm::NormStats<S> },
    Gelu { input: TensorId },
    Relu { input: TensorId },
    SoftmaxChannel { input: TensorId },
    Concat { inputs: Vec<TensorId> },
    SliceChannels { input: TensorId, start: usize },
    Add { a: TensorId, b: TensorId },
    MulBroadcast { a: TensorId, b: TensorId },
    Scale { input: TensorId, factor: S },
    SumAll { input: TensorId },
    DiceCe { logits: TensorId, cache: DiceCeCache<S> },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    record: Record<S>,
    needs_grad: bool,
}

/// Gradients for leaf nodes, indexed by `TensorId`. Intermediate gradients
/// are dropped during the sweep to keep memory bounded.
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: TensorId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: TensorId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    swept: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), swept: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes so the tape can record a fresh graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.swept = false;
    }

    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn check(&self, id: TensorId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::config(format!(
                "tensor id {} does not belong to this tape (len {})",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<S>, record: Record<S>, needs_grad: bool) -> TensorId {
        self.nodes.push(Node { value, record, needs_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers an input tensor. Its gradient is produced by `backward`
    /// only if `requires_grad` is set on the tensor.
    pub fn leaf(&mut self, value: Tensor<S>) -> TensorId {
        let needs = value.requires_grad();
        self.push(value, Record::Leaf, needs)
    }

    pub fn conv3d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        spec: &ConvSpec,
    ) -> Result<TensorId> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let out = conv::conv3d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map_or(false, |b| self.needs(b));
        Ok(self.push(
            out,
            Record::Conv3d { input, weight, bias, spec: spec.clone() },
            needs,
        ))
    }

    pub fn conv_transpose3d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        spec: &ConvSpec,
    ) -> Result<TensorId> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let out = conv::conv_transpose3d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map_or(false, |b| self.needs(b));
        Ok(self.push(
            out,
            Record::ConvTranspose3d { input, weight, bias, spec: spec.clone() },
            needs,
        ))
    }

    pub fn pool3d(&mut self, input: TensorId, kind: PoolKind) -> Result<TensorId> {
        self.check(input)?;
        let pooled = pool::pool3d(self.value(input), kind)?;
        let needs = self.needs(input);
        Ok(self.push(pooled.output, Record::Pool { input, kind, argmax: pooled.argmax }, needs))
    }

    pub fn global_avg_pool(&mut self, input: TensorId) -> Result<TensorId> {
        self.check(input)?;
        let out = pool::global_avg_pool(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::GlobalAvgPool { input }, needs))
    }

    pub fn resize_trilinear(&mut self, input: TensorId, target: [usize; 3]) -> Result<TensorId> {
        self.check(input)?;
        let out = resize::resize_trilinear(self.value(input), target)?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::Resize { input }, needs))
    }

    pub fn linear(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
    ) -> Result<TensorId> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let out = lin::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map_or(false, |b| self.needs(b));
        Ok(self.push(out, Record::Linear { input, weight, bias }, needs))
    }

    pub fn instance_norm(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
    ) -> Result<TensorId> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (out, stats) =
            norm::instance_norm(self.value(input), self.value(gamma), self.value(beta))?;
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Record::InstanceNorm { input, gamma, beta, stats }, needs))
    }

    pub fn gelu(&mut self, input: TensorId) -> Result<TensorId> {
        self.check(input)?;
        let out = act::gelu(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::Gelu { input }, needs))
    }

    pub fn relu(&mut self, input: TensorId) -> Result<TensorId> {
        self.check(input)?;
        let out = act::relu(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::Relu { input }, needs))
    }

    pub fn softmax_channel(&mut self, input: TensorId) -> Result<TensorId> {
        self.check(input)?;
        let out = act::softmax_channel(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::SoftmaxChannel { input }, needs))
    }

    pub fn activation(&mut self, input: TensorId, kind: act::ActKind) -> Result<TensorId> {
        match kind {
            act::ActKind::Gelu => self.gelu(input),
            act::ActKind::Relu => self.relu(input),
            act::ActKind::SoftmaxChannel => self.softmax_channel(input),
        }
    }

    pub fn concat_channels(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        for &i in inputs {
            self.check(i)?;
        }
        let tensors: Vec<&Tensor<S>> = inputs.iter().map(|&i| self.value(i)).collect();
        let out = ew::concat_channels(&tensors)?;
        let needs = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(out, Record::Concat { inputs: inputs.to_vec() }, needs))
    }

    pub fn slice_channels(&mut self, input: TensorId, start: usize, len: usize) -> Result<TensorId> {
        self.check(input)?;
        let out = ew::slice_channels(self.value(input), start, len)?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::SliceChannels { input, start }, needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        let out = ew::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Record::Add { a, b }, needs))
    }

    pub fn mul_broadcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check(a)?;
        self.check(b)?;
        let out = ew::mul_broadcast(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Record::MulBroadcast { a, b }, needs))
    }

    pub fn scale(&mut self, input: TensorId, factor: S) -> Result<TensorId> {
        self.check(input)?;
        let out = ew::scale(self.value(input), factor)?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::Scale { input, factor }, needs))
    }

    pub fn sum_all(&mut self, input: TensorId) -> Result<TensorId> {
        self.check(input)?;
        let out = ew::sum_all(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Record::SumAll { input }, needs))
    }

    /// Combined soft-dice + cross-entropy loss against integer labels (one
    /// `LabelVolume` per batch item). Produces a rank-0 node.
    pub fn dice_ce_loss(&mut self, logits: TensorId, labels: &[LabelVolume]) -> Result<TensorId> {
        self.check(logits)?;
        let (value, cache) = crate::loss::dice_ce_forward(self.value(logits), labels)?;
        let needs = self.needs(logits);
        Ok(self.push(value, Record::DiceCe { logits, cache }, needs))
    }

    /// Reverse sweep from `loss` (must be rank-0). Returns gradients for
    /// every leaf whose tensor had `requires_grad`; intermediate gradients
    /// are freed as soon as their node has been processed. The tape must be
    /// `reset` before it can be swept again — gradients from two sweeps over
    /// one recording would silently double-count.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients<S>> {
        self.check(loss)?;
        if self.swept {
            return Err(Error::config(
                "tape already swept; reset() before recording/backpropagating again".to_string(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::config(
                "loss does not depend on any tensor with requires_grad".to_string(),
            ));
        }
        self.swept = true;

        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one())?);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].record {
                Record::Leaf => {
                    // Keep it: this is an output of the sweep.
                    grads[i] = Some(g);
                    continue;
                }
                Record::Conv3d { input, weight, bias, spec } => {
                    let (input, weight, bias, spec) = (*input, *weight, *bias, spec.clone());
                    if self.needs(input) {
                        let gi = conv::conv3d_backward_input(
                            &g,
                            self.value(weight),
                            self.value(input).shape(),
                            &spec,
                        )?;
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(weight) {
                        let gw = conv::conv3d_backward_weight(
                            &g,
                            self.value(input),
                            self.value(weight).shape(),
                            &spec,
                        )?;
                        accumulate(&mut grads, weight, gw)?;
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            accumulate(&mut grads, b, conv::conv3d_backward_bias(&g)?)?;
                        }
                    }
                }
                Record::ConvTranspose3d { input, weight, bias, spec } => {
                    let (input, weight, bias, spec) = (*input, *weight, *bias, spec.clone());
                    if self.needs(input) {
                        let gi = conv::conv_transpose3d_backward_input(
                            &g,
                            self.value(weight),
                            self.value(input).shape(),
                            &spec,
                        )?;
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(weight) {
                        let gw = conv::conv_transpose3d_backward_weight(
                            &g,
                            self.value(input),
                            self.value(weight).shape(),
                            &spec,
                        )?;
                        accumulate(&mut grads, weight, gw)?;
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            // Same reduction as the forward-conv bias.
                            accumulate(&mut grads, b, conv::conv3d_backward_bias(&g)?)?;
                        }
                    }
                }
                Record::Pool { input, kind, argmax } => {
                    let input = *input;
                    let gi = pool::pool3d_backward(
                        *kind,
                        self.value(input).shape(),
                        argmax.as_deref(),
                        &g,
                    )?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::GlobalAvgPool { input } => {
                    let input = *input;
                    let gi = pool::global_avg_pool_backward(self.value(input).shape(), &g)?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::Resize { input } => {
                    let input = *input;
                    let gi = resize::resize_trilinear_backward(&g, self.value(input).shape())?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::Linear { input, weight, bias } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    if self.needs(input) {
                        let gi = lin::linear_backward_input(
                            &g,
                            self.value(weight),
                            self.value(input).shape(),
                        )?;
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(weight) {
                        let gw = lin::linear_backward_weight(
                            &g,
                            self.value(input),
                            self.value(weight).shape(),
                        )?;
                        accumulate(&mut grads, weight, gw)?;
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            accumulate(&mut grads, b, lin::linear_backward_bias(&g)?)?;
                        }
                    }
                }
                Record::InstanceNorm { input, gamma, beta, stats } => {
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    let (gi, gg, gb) = norm::instance_norm_backward(
                        &g,
                        self.value(input),
                        self.value(gamma),
                        stats,
                    )?;
                    if self.needs(input) {
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(gamma) {
                        accumulate(&mut grads, gamma, gg)?;
                    }
                    if self.needs(beta) {
                        accumulate(&mut grads, beta, gb)?;
                    }
                }
                Record::Gelu { input } => {
                    let input = *input;
                    let gi = act::gelu_backward(&g, self.value(input))?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::Relu { input } => {
                    let input = *input;
                    let gi = act::relu_backward(&g, self.value(input))?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::SoftmaxChannel { input } => {
                    let input = *input;
                    // Backward consumes the forward output, i.e. this node's
                    // own value.
                    let gi = act::softmax_channel_backward(&g, &self.nodes[i].value)?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::Concat { inputs } => {
                    let inputs = inputs.clone();
                    let mut start = 0usize;
                    for inp in inputs {
                        let c = self.value(inp).shape()[1];
                        if self.needs(inp) {
                            let gi = ew::slice_channels(&g, start, c)?;
                            accumulate(&mut grads, inp, gi)?;
                        }
                        start += c;
                    }
                }
                Record::SliceChannels { input, start } => {
                    let (input, start) = (*input, *start);
                    let gi = ew::slice_channels_backward(&g, self.value(input).shape(), start)?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.clone())?;
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.clone())?;
                    }
                }
                Record::MulBroadcast { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let ga = ew::mul_broadcast_backward_one(
                            &g,
                            self.value(b),
                            self.value(a).shape(),
                        )?;
                        accumulate(&mut grads, a, ga)?;
                    }
                    if self.needs(b) {
                        let gb = ew::mul_broadcast_backward_one(
                            &g,
                            self.value(a),
                            self.value(b).shape(),
                        )?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Record::Scale { input, factor } => {
                    let (input, factor) = (*input, *factor);
                    let gi = ew::scale(&g, factor)?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::SumAll { input } => {
                    let input = *input;
                    let gv = g.item()?;
                    let gi = Tensor::full(self.value(input).shape(), gv)?;
                    accumulate(&mut grads, input, gi)?;
                }
                Record::DiceCe { logits, cache } => {
                    let logits = *logits;
                    let gi = crate::loss::dice_ce_backward(&g, cache)?;
                    accumulate(&mut grads, logits, gi)?;
                }
            }
            // Intermediate gradient no longer needed.
        }

        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    id: TensorId,
    partial: Tensor<S>,
) -> Result<()> {
    match &mut grads[id.0] {
        slot @ None => *slot = Some(partial),
        Some(existing) => {
            partial.ensure_shape(existing.shape(), "gradient accumulation")?;
            for (e, &p) in existing.data_mut().iter_mut().zip(partial.data()) {
                *e += p;
            }
        }
    }
    Ok(())
}
