//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every primitive is evaluated eagerly when it is recorded, so node ids are
//! issued in topological order. [`Tape::backpropagate`] walks the record in
//! reverse and accumulates adjoints in that fixed order, which makes the
//! gradients bit-reproducible.

use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeom, GroupStats};
use super::{NumericsError, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf { name: Option<String>, trainable: bool },
    Conv2d { geom: ConvGeom, out_channels: usize },
    Upsample2x,
    Linear,
    Matmul,
    GroupNorm { groups: usize, stats: GroupStats<S> },
    Silu,
    Add,
    AddBroadcast,
    BroadcastSpatial,
    Concat { splits: Vec<usize> },
    Scale(S),
    Mse,
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x => "upsample2x",
            Op::Linear => "linear",
            Op::Matmul => "matmul",
            Op::GroupNorm { .. } => "group_norm",
            Op::Silu => "silu",
            Op::Add => "add",
            Op::AddBroadcast => "add_broadcast",
            Op::BroadcastSpatial => "broadcast_spatial",
            Op::Concat { .. } => "concat",
            Op::Scale(_) => "scale",
            Op::Mse => "mse",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    inputs: Vec<NodeId>,
    requires_grad: bool,
}

/// Gradients of a scalar terminal with respect to every trainable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S = f32> {
    by_name: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.by_name.iter()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<S>> {
        self.by_name
    }

    pub fn from_map(by_name: BTreeMap<String, Tensor<S>>) -> Self {
        Self { by_name }
    }

    /// Adds `other` into `self`, name by name, in sorted-name order.
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for g in self.by_name.values_mut() {
            for v in g.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Recording of primitive applications in evaluation order.
#[derive(Clone, Debug, Default)]
pub struct Tape<S = f32> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, NodeId>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, None, false)
    }

    /// A named non-trainable leaf.
    pub fn input(&mut self, name: &str, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, Some(name.to_owned()), false)
    }

    /// A named trainable leaf. Registering the same name twice returns the
    /// first node, so shared weights accumulate into a single gradient.
    pub fn param(&mut self, name: &str, value: &Tensor<S>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push_leaf(value.clone(), Some(name.to_owned()), true);
        self.params.insert(name.to_owned(), id);
        id
    }

    /// The node previously registered under `name` by [`Tape::param`].
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    fn push_leaf(&mut self, value: Tensor<S>, name: Option<String>, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: Op::Leaf { name, trainable },
            inputs: Vec::new(),
            requires_grad: trainable,
        });
        id
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: Vec<NodeId>) -> Result<NodeId, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(id)
    }

    fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Zero same-padded convolution. `weight` is `[out, in, k, k]` with
    /// `k ∈ {1, 3}`, `stride ∈ {1, 2}`; `x` is `[n, in, h, w]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Self::mismatch("conv2d", &xs, &ws));
        }
        let k = ws[2];
        if !(k == 1 || k == 3) || !(stride == 1 || stride == 2) {
            return Err(NumericsError::Unsupported(format!(
                "conv2d with kernel {k} and stride {stride}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Self::mismatch("conv2d bias", self.shape(b), &ws));
            }
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], k, stride);
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            xs[0],
            &geom,
            self.value(weight).data(),
            ws[0],
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts_unchecked(vec![xs[0], ws[0], geom.out_height, geom.out_width], out);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                geom,
                out_channels: ws[0],
            },
            inputs,
        )
    }

    /// Nearest-neighbour 2× upsampling of a `[n, c, h, w]` tensor.
    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(NumericsError::InvalidShape(xs));
        }
        let out = kernels::upsample2x_forward(self.value(x).data(), xs[0] * xs[1], xs[2], xs[3]);
        let value = Tensor::from_parts_unchecked(vec![xs[0], xs[1], 2 * xs[2], 2 * xs[3]], out);
        self.push(value, Op::Upsample2x, vec![x])
    }

    /// Dense layer `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(bias) != [ws[0]] {
            return Err(Self::mismatch("linear", &xs, &ws));
        }
        let (n, m, k) = (xs[0], ws[0], xs[1]);
        let mut out = vec![S::zero(); n * m];
        let b = self.value(bias).data();
        for row in out.chunks_mut(m) {
            row.copy_from_slice(b);
        }
        kernels::gemm(false, true, n, m, k, self.value(x).data(), self.value(weight).data(), S::one(), &mut out);
        self.push(Tensor::from_parts_unchecked(vec![n, m], out), Op::Linear, vec![x, weight, bias])
    }

    /// Matrix product `x · w` with `x: [n, k]`, `w: [k, m]`.
    pub fn matmul(&mut self, x: NodeId, weight: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Self::mismatch("matmul", &xs, &ws));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut out = vec![S::zero(); n * m];
        kernels::gemm(false, false, n, m, k, self.value(x).data(), self.value(weight).data(), S::zero(), &mut out);
        self.push(Tensor::from_parts_unchecked(vec![n, m], out), Op::Matmul, vec![x, weight])
    }

    /// Group normalization over `[n, c, h, w]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
    ) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || groups == 0 || !xs[1].is_multiple_of(groups) {
            return Err(NumericsError::Unsupported(format!(
                "group_norm with {groups} groups over shape {xs:?}"
            )));
        }
        if self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(Self::mismatch("group_norm affine", self.shape(gamma), &xs));
        }
        let (out, stats) = kernels::group_norm_forward(
            self.value(x).data(),
            xs[0],
            xs[1],
            xs[2] * xs[3],
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            S::of(GROUP_NORM_EPS),
        );
        self.push(
            Tensor::from_parts_unchecked(xs, out),
            Op::GroupNorm { groups, stats },
            vec![x, gamma, beta],
        )
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(x).map(|v| v * kernels::sigmoid(v));
        self.push(value, Op::Silu, vec![x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::mismatch("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        self.push(value, Op::Add, vec![a, b])
    }

    /// `x + v` where `x: [n, c, h, w]` and `v: [n, c]` is broadcast over space.
    pub fn add_broadcast(&mut self, x: NodeId, v: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.shape(x).to_vec();
        let vs = self.shape(v).to_vec();
        if xs.len() != 4 || vs != xs[..2] {
            return Err(Self::mismatch("add_broadcast", &xs, &vs));
        }
        let sp = xs[2] * xs[3];
        let mut data = self.value(x).data().to_vec();
        for (plane, &b) in data.chunks_mut(sp).zip(self.value(v).data()) {
            for p in plane {
                *p = *p + b;
            }
        }
        self.push(Tensor::from_parts_unchecked(xs, data), Op::AddBroadcast, vec![x, v])
    }

    /// Repeats `v: [n, c]` over an `h × w` grid.
    pub fn broadcast_spatial(&mut self, v: NodeId, h: usize, w: usize) -> Result<NodeId, NumericsError> {
        let vs = self.shape(v).to_vec();
        if vs.len() != 2 || h == 0 || w == 0 {
            return Err(NumericsError::InvalidShape(vs));
        }
        let mut data = Vec::with_capacity(vs[0] * vs[1] * h * w);
        for &b in self.value(v).data() {
            data.extend(std::iter::repeat_n(b, h * w));
        }
        self.push(
            Tensor::from_parts_unchecked(vec![vs[0], vs[1], h, w], data),
            Op::BroadcastSpatial,
            vec![v],
        )
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty("concat"))?;
        let fs = self.shape(*first).to_vec();
        if fs.len() < 2 {
            return Err(NumericsError::InvalidShape(fs));
        }
        let inner: usize = fs[2..].iter().product();
        let mut splits = Vec::with_capacity(parts.len());
        for &p in parts {
            let ps = self.shape(p);
            if ps.len() != fs.len() || ps[0] != fs[0] || ps[2..] != fs[2..] {
                return Err(Self::mismatch("concat", &fs, ps));
            }
            splits.push(ps[1]);
        }
        let total: usize = splits.iter().sum();
        let n = fs[0];
        let mut data = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&splits) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = fs.clone();
        shape[1] = total;
        self.push(Tensor::from_parts_unchecked(shape, data), Op::Concat { splits }, parts.to_vec())
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        let f = S::of(factor);
        let value = self.value(x).map(|v| v * f);
        self.push(value, Op::Scale(f), vec![x])
    }

    /// Mean of squared differences; a one-element result.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::mismatch("mse", va.shape(), vb.shape()));
        }
        let mut acc = S::zero();
        for (&p, &q) in va.data().iter().zip(vb.data()) {
            let d = p - q;
            acc = acc + d * d;
        }
        let value = Tensor::scalar(acc / S::of(va.len() as f64));
        self.push(value, Op::Mse, vec![a, b])
    }

    /// Gradients of the one-element node `terminal` with respect to every
    /// trainable leaf on the tape. Leaves the terminal does not depend on get
    /// an all-zero gradient; non-trainable leaves are omitted.
    pub fn backpropagate(&self, terminal: NodeId) -> Result<Gradients<S>, NumericsError> {
        let Some(node) = self.nodes.get(terminal.0) else {
            return Err(NumericsError::NotEvaluated);
        };
        if !node.value.is_scalar() {
            return Err(NumericsError::NonScalarTerminal(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; terminal.0 + 1];
        grads[terminal.0] = Some(Tensor::full(node.value.shape().to_vec(), S::one()));
        let mut out = BTreeMap::new();
        for (name, &id) in &self.params {
            out.insert(name.clone(), Tensor::zeros(self.nodes[id.0].value.shape().to_vec()));
        }

        for idx in (0..=terminal.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { name: Some(name), trainable: true } = &node.op {
                out.insert(name.clone(), g);
                continue;
            }
            for (input, gi) in self.input_grads(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { by_name: out })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn input_grads(&self, node: &Node<S>, g: &Tensor<S>) -> Vec<(NodeId, Tensor<S>)> {
        let ins = &node.inputs;
        let mut res = Vec::with_capacity(ins.len());
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { geom, out_channels } => {
                let x = self.value(ins[0]);
                let w = self.value(ins[1]);
                let grads = kernels::conv2d_backward(
                    x.data(),
                    x.shape()[0],
                    geom,
                    w.data(),
                    *out_channels,
                    g.data(),
                    self.needs(ins[0]),
                    self.needs(ins[1]),
                    ins.len() > 2 && self.needs(ins[2]),
                );
                if let Some(dx) = grads.dx {
                    res.push((ins[0], Tensor::from_parts_unchecked(x.shape().to_vec(), dx)));
                }
                if let Some(dw) = grads.dw {
                    res.push((ins[1], Tensor::from_parts_unchecked(w.shape().to_vec(), dw)));
                }
                if let Some(db) = grads.db {
                    res.push((ins[2], Tensor::from_parts_unchecked(vec![*out_channels], db)));
                }
            }
            Op::Upsample2x => {
                let xs = self.shape(ins[0]);
                let dx = kernels::upsample2x_backward(g.data(), xs[0] * xs[1], xs[2], xs[3]);
                res.push((ins[0], Tensor::from_parts_unchecked(xs.to_vec(), dx)));
            }
            Op::Linear => {
                let x = self.value(ins[0]);
                let w = self.value(ins[1]);
                let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                if self.needs(ins[0]) {
                    let mut dx = vec![S::zero(); n * k];
                    kernels::gemm(false, false, n, k, m, g.data(), w.data(), S::zero(), &mut dx);
                    res.push((ins[0], Tensor::from_parts_unchecked(vec![n, k], dx)));
                }
                if self.needs(ins[1]) {
                    let mut dw = vec![S::zero(); m * k];
                    kernels::gemm(true, false, m, k, n, g.data(), x.data(), S::zero(), &mut dw);
                    res.push((ins[1], Tensor::from_parts_unchecked(vec![m, k], dw)));
                }
                if self.needs(ins[2]) {
                    let mut db = vec![S::zero(); m];
                    for row in g.data().chunks(m) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    res.push((ins[2], Tensor::from_parts_unchecked(vec![m], db)));
                }
            }
            Op::Matmul => {
                let x = self.value(ins[0]);
                let w = self.value(ins[1]);
                let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                if self.needs(ins[0]) {
                    let mut dx = vec![S::zero(); n * k];
                    kernels::gemm(false, true, n, k, m, g.data(), w.data(), S::zero(), &mut dx);
                    res.push((ins[0], Tensor::from_parts_unchecked(vec![n, k], dx)));
                }
                if self.needs(ins[1]) {
                    let mut dw = vec![S::zero(); k * m];
                    kernels::gemm(true, false, k, m, n, x.data(), g.data(), S::zero(), &mut dw);
                    res.push((ins[1], Tensor::from_parts_unchecked(vec![k, m], dw)));
                }
            }
            Op::GroupNorm { groups, stats } => {
                let x = self.value(ins[0]);
                let xs = x.shape();
                let gr = kernels::group_norm_backward(
                    x.data(),
                    g.data(),
                    xs[0],
                    xs[1],
                    xs[2] * xs[3],
                    *groups,
                    self.value(ins[1]).data(),
                    stats,
                );
                if self.needs(ins[0]) {
                    res.push((ins[0], Tensor::from_parts_unchecked(xs.to_vec(), gr.dx)));
                }
                if self.needs(ins[1]) {
                    res.push((ins[1], Tensor::from_parts_unchecked(vec![xs[1]], gr.dgamma)));
                }
                if self.needs(ins[2]) {
                    res.push((ins[2], Tensor::from_parts_unchecked(vec![xs[1]], gr.dbeta)));
                }
            }
            Op::Silu => {
                let x = self.value(ins[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        let s = kernels::sigmoid(v);
                        gv * s * (S::one() + v * (S::one() - s))
                    })
                    .collect();
                res.push((ins[0], Tensor::from_parts_unchecked(x.shape().to_vec(), data)));
            }
            Op::Add => {
                for &i in ins {
                    if self.needs(i) {
                        res.push((i, g.clone()));
                    }
                }
            }
            Op::AddBroadcast => {
                if self.needs(ins[0]) {
                    res.push((ins[0], g.clone()));
                }
                if self.needs(ins[1]) {
                    let vs = self.shape(ins[1]).to_vec();
                    let sp = g.len() / (vs[0] * vs[1]);
                    let data = g
                        .data()
                        .chunks(sp)
                        .map(|plane| plane.iter().fold(S::zero(), |a, &b| a + b))
                        .collect();
                    res.push((ins[1], Tensor::from_parts_unchecked(vs, data)));
                }
            }
            Op::BroadcastSpatial => {
                let vs = self.shape(ins[0]).to_vec();
                let sp = g.len() / (vs[0] * vs[1]);
                let data = g
                    .data()
                    .chunks(sp)
                    .map(|plane| plane.iter().fold(S::zero(), |a, &b| a + b))
                    .collect();
                res.push((ins[0], Tensor::from_parts_unchecked(vs, data)));
            }
            Op::Concat { splits } => {
                let gs = g.shape();
                let inner: usize = gs[2..].iter().product();
                let total = gs[1];
                let mut offset = 0;
                for (&i, &c) in ins.iter().zip(splits) {
                    if self.needs(i) {
                        let mut data = Vec::with_capacity(gs[0] * c * inner);
                        for b in 0..gs[0] {
                            let start = (b * total + offset) * inner;
                            data.extend_from_slice(&g.data()[start..start + c * inner]);
                        }
                        let mut shape = gs.to_vec();
                        shape[1] = c;
                        res.push((i, Tensor::from_parts_unchecked(shape, data)));
                    }
                    offset += c;
                }
            }
            Op::Scale(f) => {
                res.push((ins[0], g.map(|v| v * *f)));
            }
            Op::Mse => {
                let (a, b) = (self.value(ins[0]), self.value(ins[1]));
                let coef = g.item() * S::of(2.0) / S::of(a.len() as f64);
                let diff: Vec<S> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&p, &q)| (p - q) * coef)
                    .collect();
                if self.needs(ins[0]) {
                    res.push((ins[0], Tensor::from_parts_unchecked(a.shape().to_vec(), diff.clone())));
                }
                if self.needs(ins[1]) {
                    let neg = diff.into_iter().map(|v| -v).collect();
                    res.push((ins[1], Tensor::from_parts_unchecked(a.shape().to_vec(), neg)));
                }
            }
        }
        res
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;
