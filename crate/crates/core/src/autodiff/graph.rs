//! A static differentiable graph.
//!
//! Nodes are appended in topological order while the graph is built; shapes
//! are checked at build time. `forward` binds named inputs and evaluates
//! every node, retaining activations; `backward` then accumulates
//! reverse-mode gradients into each parameter's gradient slot.
//!
//! Nodes fed (directly or indirectly) by an input are *batched*: their
//! leading dimension follows the batch size chosen at `forward` time.
//! Parameters and constants have fixed dims and broadcast over the batch.

use std::collections::BTreeMap;

use super::kernels::{self, LEAKY_SLOPE};
use super::params::ParamSet;
use super::tensor::{Real, Tensor4};
use crate::error::{mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Param(usize),
    Const(usize),
    Conv2d,
    LeakyRelu,
    Tanh,
    Add,
    Mul,
    Scale(f64),
    Concat,
    Slice { start: usize, len: usize },
    Down2,
    Up2,
    ChannelAffine,
    MeanSquare,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Conv2d => "conv2d",
            Op::LeakyRelu => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Down2 => "downsample2",
            Op::Up2 => "upsample2",
            Op::ChannelAffine => "channel_affine",
            Op::MeanSquare => "mean_square",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    /// Full dims; the leading entry is meaningless for batched nodes.
    dims: [usize; 4],
    batched: bool,
    requires_grad: bool,
}

#[derive(Debug, Clone)]
pub struct ParamSlot<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct DiffGraph<T: Real> {
    nodes: Vec<Node>,
    params: Vec<ParamSlot<T>>,
    param_index: BTreeMap<String, usize>,
    consts: Vec<Tensor4<T>>,
    inputs: Vec<(String, NodeId)>,
    outputs: Vec<(String, NodeId)>,
    values: Vec<Option<Tensor4<T>>>,
    forward_done: bool,
}

impl<T: Real> Default for DiffGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> DiffGraph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: BTreeMap::new(),
            consts: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            values: Vec::new(),
            forward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, dims: [usize; 4], batched: bool) -> NodeId {
        let requires_grad = match op {
            Op::Param(i) => self.params[i].trainable,
            Op::Input(_) | Op::Const(_) => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            parents,
            dims,
            batched,
            requires_grad,
        });
        self.forward_done = false;
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// `(C, H, W)` of a node.
    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        let d = self.node(id).dims;
        [d[1], d[2], d[3]]
    }

    /// Batched placeholder with per-sample shape `(C, H, W)`.
    pub fn input(&mut self, name: &str, chw: [usize; 3]) -> Result<NodeId> {
        if self.inputs.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate graph input `{name}`")));
        }
        let id = self.push(Op::Input(name.to_string()), vec![], [0, chw[0], chw[1], chw[2]], true);
        self.inputs.push((name.to_string(), id));
        Ok(id)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, name: &str, value: Tensor4<T>) -> Result<NodeId> {
        self.add_param(name, value, true)
    }

    /// Named leaf excluded from optimisation (still saved with the parameters).
    pub fn frozen_param(&mut self, name: &str, value: Tensor4<T>) -> Result<NodeId> {
        self.add_param(name, value, false)
    }

    fn add_param(&mut self, name: &str, value: Tensor4<T>, trainable: bool) -> Result<NodeId> {
        if self.param_index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let dims = value.dims();
        let idx = self.params.len();
        self.params.push(ParamSlot {
            name: name.to_string(),
            grad: Tensor4::zeros(dims),
            value,
            trainable,
        });
        self.param_index.insert(name.to_string(), idx);
        Ok(self.push(Op::Param(idx), vec![], dims, false))
    }

    /// Anonymous constant (e.g. a frozen stencil kernel).
    pub fn constant(&mut self, value: Tensor4<T>) -> NodeId {
        let dims = value.dims();
        self.consts.push(value);
        self.push(Op::Const(self.consts.len() - 1), vec![], dims, false)
    }

    /// Convolution with an odd square kernel node `(Co, Ci, k, k)` and an
    /// optional bias node `(1, Co, 1, 1)`; replicate padding, stride 1.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xd = self.node(x).dims;
        let wd = self.node(w).dims;
        if self.node(w).batched || wd[2] != wd[3] || wd[2] % 2 == 0 {
            return Err(mismatch("conv2d kernel", "unbatched (Co, Ci, k, k) with odd k", wd));
        }
        if wd[1] != xd[1] {
            return Err(mismatch("conv2d input channels", wd[1], xd[1]));
        }
        let mut parents = vec![x, w];
        if let Some(b) = b {
            let bd = self.node(b).dims;
            if self.node(b).batched || bd != [1, wd[0], 1, 1] {
                return Err(mismatch("conv2d bias", [1, wd[0], 1, 1], bd));
            }
            parents.push(b);
        }
        let batched = self.node(x).batched;
        Ok(self.push(Op::Conv2d, parents, [xd[0], wd[0], xd[2], xd[3]], batched))
    }

    pub fn leaky_relu(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x).clone();
        self.push(Op::LeakyRelu, vec![x], n.dims, n.batched)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x).clone();
        self.push(Op::Tanh, vec![x], n.dims, n.batched)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let n = self.node(x).clone();
        self.push(Op::Scale(factor), vec![x], n.dims, n.batched)
    }

    fn check_broadcast(&self, ctx: &str, a: NodeId, b: NodeId) -> Result<([usize; 4], bool)> {
        let (an, bn) = (self.node(a), self.node(b));
        let (ad, bd) = (an.dims, bn.dims);
        let spatial_ok = (ad[2] == bd[2] && ad[3] == bd[3]) || (bd[2] == 1 && bd[3] == 1);
        let chan_ok = bd[1] == ad[1] || bd[1] == 1;
        let batch_ok = if bn.batched {
            an.batched
        } else if an.batched {
            bd[0] == 1
        } else {
            bd[0] == ad[0] || bd[0] == 1
        };
        if !(spatial_ok && chan_ok && batch_ok) {
            return Err(mismatch(ctx, ad, bd));
        }
        Ok((ad, an.batched))
    }

    /// `a + b`; `b` may broadcast over batch, channel and (jointly) space.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (dims, batched) = self.check_broadcast("add", a, b)?;
        Ok(self.push(Op::Add, vec![a, b], dims, batched))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise `a ∘ b`; `b` broadcasts as in [`DiffGraph::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (dims, batched) = self.check_broadcast("mul", a, b)?;
        Ok(self.push(Op::Mul, vec![a, b], dims, batched))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| mismatch("concat", "≥1 part", 0))?;
        let f = self.node(first).clone();
        let mut c = 0;
        for &p in parts {
            let n = self.node(p);
            if n.batched != f.batched || n.dims[2..] != f.dims[2..] || (!n.batched && n.dims[0] != f.dims[0]) {
                return Err(mismatch("concat part", f.dims, n.dims));
            }
            c += n.dims[1];
        }
        Ok(self.push(Op::Concat, parts.to_vec(), [f.dims[0], c, f.dims[2], f.dims[3]], f.batched))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.node(x).clone();
        if len == 0 || start + len > n.dims[1] {
            return Err(mismatch("slice_channels range", n.dims[1], start + len));
        }
        Ok(self.push(Op::Slice { start, len }, vec![x], [n.dims[0], len, n.dims[2], n.dims[3]], n.batched))
    }

    pub fn downsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x).clone();
        if n.dims[2] % 2 != 0 || n.dims[3] % 2 != 0 || n.dims[2] < 2 || n.dims[3] < 2 {
            return Err(mismatch("downsample2 (even H, W)", "even", n.dims));
        }
        Ok(self.push(Op::Down2, vec![x], [n.dims[0], n.dims[1], n.dims[2] / 2, n.dims[3] / 2], n.batched))
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x).clone();
        self.push(Op::Up2, vec![x], [n.dims[0], n.dims[1], n.dims[2] * 2, n.dims[3] * 2], n.batched)
    }

    /// `x · scale[c] + shift[c]` with `(1, C, 1, 1)` scale and shift nodes.
    pub fn channel_affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let n = self.node(x).clone();
        let want = [1, n.dims[1], 1, 1];
        for p in [scale, shift] {
            if self.node(p).batched || self.node(p).dims != want {
                return Err(mismatch("channel_affine coefficients", want, self.node(p).dims));
            }
        }
        Ok(self.push(Op::ChannelAffine, vec![x, scale, shift], n.dims, n.batched))
    }

    /// Mean of squares over every element (batch included) → scalar.
    pub fn mean_square(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanSquare, vec![x], [1, 1, 1, 1], false)
    }

    pub fn mark_output(&mut self, name: &str, node: NodeId) {
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), node));
    }

    pub fn output_id(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn leaf_value(&self, id: NodeId) -> Option<&Tensor4<T>> {
        match self.node(id).op {
            Op::Param(i) => Some(&self.params[i].value),
            Op::Const(i) => Some(&self.consts[i]),
            _ => self.values.get(id.0).and_then(|v| v.as_ref()),
        }
    }

    /// Value of a node after `forward`.
    pub fn value(&self, id: NodeId) -> Option<&Tensor4<T>> {
        if !self.forward_done && !matches!(self.node(id).op, Op::Param(_) | Op::Const(_)) {
            return None;
        }
        self.leaf_value(id)
    }

    fn val(&self, id: NodeId) -> &Tensor4<T> {
        self.leaf_value(id).expect("node evaluated before use")
    }

    /// Evaluates the whole graph and returns every marked output.
    pub fn forward(&mut self, inputs: &BTreeMap<String, Tensor4<T>>) -> Result<BTreeMap<String, Tensor4<T>>> {
        let mut batch: Option<usize> = None;
        for (name, id) in &self.inputs {
            let t = inputs.get(name).ok_or_else(|| Error::UnknownName(format!("missing graph input `{name}`")))?;
            let want = self.nodes[id.0].dims;
            let got = t.dims();
            if got[1..] != want[1..] {
                return Err(mismatch(format!("graph input `{name}`"), &want[1..], &got[1..]));
            }
            match batch {
                None => batch = Some(got[0]),
                Some(b) if b != got[0] => return Err(mismatch(format!("batch size of `{name}`"), b, got[0])),
                _ => {}
            }
        }
        self.forward_done = false;
        self.values = vec![None; self.nodes.len()];
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            let out = match &node.op {
                Op::Param(_) | Op::Const(_) => continue,
                Op::Input(name) => inputs[name].clone(),
                op => self.eval_op(op, &node.parents),
            };
            if !out.is_finite() {
                return Err(Error::NanInGraph {
                    node: idx,
                    op: self.nodes[idx].op.name(),
                });
            }
            self.values[idx] = Some(out);
        }
        self.forward_done = true;
        self.outputs
            .iter()
            .map(|(name, id)| Ok((name.clone(), self.val(*id).clone())))
            .collect()
    }

    fn eval_op(&self, op: &Op, parents: &[NodeId]) -> Tensor4<T> {
        let p = |k: usize| self.val(parents[k]);
        match op {
            Op::Conv2d => {
                let b = parents.get(2).map(|&b| self.val(b));
                kernels::conv2d_forward(p(0), p(1), b)
            }
            Op::LeakyRelu => {
                let s = T::cast_from(LEAKY_SLOPE);
                p(0).map(|x| if x > T::zero() { x } else { x * s })
            }
            Op::Tanh => p(0).map(|x| x.tanh()),
            Op::Add => kernels::broadcast_binary(p(0), p(1), |a, b| a + b),
            Op::Mul => kernels::broadcast_binary(p(0), p(1), |a, b| a * b),
            Op::Scale(f) => {
                let f = T::cast_from(*f);
                p(0).map(|x| x * f)
            }
            Op::Concat => {
                let parts: Vec<&Tensor4<T>> = parents.iter().map(|&q| self.val(q)).collect();
                kernels::concat(&parts)
            }
            Op::Slice { start, len } => kernels::slice_channels(p(0), *start, *len),
            Op::Down2 => kernels::downsample2(p(0)),
            Op::Up2 => kernels::upsample2(p(0)),
            Op::ChannelAffine => kernels::channel_affine(p(0), p(1), p(2)),
            Op::MeanSquare => {
                let x = p(0);
                let n = T::cast_from(x.numel() as f64);
                Tensor4::scalar(x.data().iter().map(|&v| v * v).sum::<T>() / n)
            }
            Op::Input(_) | Op::Param(_) | Op::Const(_) => unreachable!(),
        }
    }

    /// Reverse-mode sweep from a scalar `loss` node. Every trainable
    /// parameter's gradient slot is overwritten (zero when unreachable).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.forward_done {
            return Err(Error::BackwardBeforeForward);
        }
        let ld = self.val(loss).dims();
        if ld.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss { node: loss.0, dims: ld });
        }
        for slot in &mut self.params {
            slot.grad = Tensor4::zeros(slot.value.dims());
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor4::filled(ld, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(i) = node.op {
                self.params[i].grad = g;
                continue;
            }
            let parent_grads = self.adjoint(idx, &g);
            for (parent, pg) in self.nodes[idx].parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn adjoint(&self, idx: usize, g: &Tensor4<T>) -> Vec<Option<Tensor4<T>>> {
        let node = &self.nodes[idx];
        let parents = &node.parents;
        let need: Vec<bool> = parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
        let x = |k: usize| self.val(parents[k]);
        match &node.op {
            Op::Conv2d => {
                let want = [need[0], need[1], need.get(2).copied().unwrap_or(false)];
                let cg = kernels::conv2d_backward(x(0), x(1), g, want);
                let mut out = vec![cg.x, cg.w];
                if parents.len() == 3 {
                    out.push(cg.b);
                }
                out
            }
            Op::LeakyRelu => {
                let s = T::cast_from(LEAKY_SLOPE);
                let inp = x(0);
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(inp.data()) {
                    if xv <= T::zero() {
                        *gv *= s;
                    }
                }
                vec![Some(gx)]
            }
            Op::Tanh => {
                let y = self.val(NodeId(idx));
                let mut gx = g.clone();
                for (gv, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *gv *= T::one() - yv * yv;
                }
                vec![Some(gx)]
            }
            Op::Add => vec![
                need[0].then(|| g.clone()),
                need[1].then(|| kernels::reduce_to(g, x(1).dims())),
            ],
            Op::Mul => vec![
                need[0].then(|| kernels::broadcast_binary(g, x(1), |a, b| a * b)),
                need[1].then(|| {
                    let prod = kernels::broadcast_binary(g, x(0), |a, b| a * b);
                    kernels::reduce_to(&prod, x(1).dims())
                }),
            ],
            Op::Scale(f) => {
                let f = T::cast_from(*f);
                vec![Some(g.map(|v| v * f))]
            }
            Op::Concat => {
                let mut off = 0;
                parents
                    .iter()
                    .zip(&need)
                    .map(|(p, &nd)| {
                        let c = self.val(*p).dims()[1];
                        let s = nd.then(|| kernels::slice_channels(g, off, c));
                        off += c;
                        s
                    })
                    .collect()
            }
            Op::Slice { start, .. } => {
                let mut gx = Tensor4::zeros(x(0).dims());
                kernels::scatter_channels(&mut gx, g, *start);
                vec![Some(gx)]
            }
            Op::Down2 => vec![Some(kernels::downsample2_backward(g, x(0).dims()))],
            Op::Up2 => vec![Some(kernels::upsample2_backward(g, x(0).dims()))],
            Op::ChannelAffine => {
                let (inp, scale) = (x(0), x(1));
                let [n, c, _, _] = inp.dims();
                let plane = inp.plane();
                let gx = need[0].then(|| {
                    let mut gx = g.clone();
                    for nn in 0..n {
                        for cc in 0..c {
                            let a = scale.data()[cc];
                            let off = (nn * c + cc) * plane;
                            for v in &mut gx.data_mut()[off..off + plane] {
                                *v *= a;
                            }
                        }
                    }
                    gx
                });
                let mut gs = Tensor4::zeros([1, c, 1, 1]);
                let mut gb = Tensor4::zeros([1, c, 1, 1]);
                for nn in 0..n {
                    for cc in 0..c {
                        let off = (nn * c + cc) * plane;
                        let gp = &g.data()[off..off + plane];
                        let xp = &inp.data()[off..off + plane];
                        gs.data_mut()[cc] += gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<T>();
                        gb.data_mut()[cc] += gp.iter().copied().sum::<T>();
                    }
                }
                vec![gx, need[1].then_some(gs), need[2].then_some(gb)]
            }
            Op::MeanSquare => {
                let inp = x(0);
                let k = g.item() * T::cast_from(2.0 / inp.numel() as f64);
                vec![Some(inp.map(|v| v * k))]
            }
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
        }
    }

    pub fn params(&self) -> &[ParamSlot<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamSlot<T>] {
        self.forward_done = false;
        &mut self.params
    }

    pub fn param_value(&self, name: &str) -> Result<&Tensor4<T>> {
        let i = self.param_index.get(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(&self.params[*i].value)
    }

    pub fn param_grad(&self, name: &str) -> Result<&Tensor4<T>> {
        let i = self.param_index.get(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(&self.params[*i].grad)
    }

    /// Snapshot of every parameter (trainable or frozen) by name.
    pub fn export_params(&self) -> ParamSet<T> {
        let mut set = ParamSet::new();
        for slot in &self.params {
            set.insert(&slot.name, slot.value.clone());
        }
        set
    }

    /// Overwrites the named parameters from `set`. Every name in `set` must
    /// exist in the graph with identical dims.
    pub fn load_params(&mut self, set: &ParamSet<T>) -> Result<()> {
        for (name, t) in set.iter() {
            let i = *self.param_index.get(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
            if self.params[i].value.dims() != t.dims() {
                return Err(mismatch(format!("parameter `{name}`"), self.params[i].value.dims(), t.dims()));
            }
            self.params[i].value = t.clone();
        }
        self.forward_done = false;
        Ok(())
    }
}
