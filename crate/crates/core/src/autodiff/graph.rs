//! Symbolic computation graph with a reverse-mode backward pass.
//!
//! A [`Graph`] is built once against the extents of a [`ParamStore`],
//! evaluated with [`Graph::forward`] (which records every node value on
//! the tape) and differentiated with [`Graph::backward`]. Nodes are
//! appended in evaluation order, so the node list is already a
//! topological order.

use crate::autodiff::ops::{self, ConvGeom, UnaryFn};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            grads: self.tensors.iter().map(|t| Tensor::zeros(t.dims())).collect(),
        }
    }
}

/// One gradient tensor per parameter, same extents as the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Constant(Tensor),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool(NodeId),
    Unary(NodeId, UnaryFn),
    SoftmaxXent {
        logits: NodeId,
        label: usize,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `H x W x C` plus a per-channel `C` vector.
    AddChannels {
        input: NodeId,
        bias: NodeId,
    },
    /// `H x W x C` times a per-channel `C` vector.
    ScaleChannels {
        input: NodeId,
        scale: NodeId,
    },
    /// Forward `[logit > 0]`, backward passes the gradient to `soft`.
    StraightThrough {
        logit: NodeId,
        soft: NodeId,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::Dense { .. } => "dense",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Unary(_, f) => f.name(),
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddChannels { .. } => "add_channels",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::StraightThrough { .. } => "straight_through",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    dims: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Graph {
    param_dims: Vec<Vec<usize>>,
    nodes: Vec<Node>,
    values: Option<Vec<Tensor>>,
}

impl Graph {
    /// Starts an empty graph whose parameter leaves follow `params`' extents.
    pub fn new(params: &ParamStore) -> Self {
        Self {
            param_dims: params.tensors.iter().map(|t| t.dims().to_vec()).collect(),
            nodes: Vec::new(),
            values: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].dims
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Inputs of the ops that are not differentiable at zero (ReLU and the
    /// straight-through threshold).
    pub fn kink_inputs(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Unary(x, UnaryFn::Relu) => Some(x),
                Op::StraightThrough { logit, .. } => Some(logit),
                _ => None,
            })
            .collect()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push(&mut self, op: Op, dims: Vec<usize>) -> NodeId {
        self.values = None;
        self.nodes.push(Node { op, dims });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let dims = self.param_dims[id.0].clone();
        self.push(Op::Param(id), dims)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let dims = value.dims().to_vec();
        self.push(Op::Constant(value), dims)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let geom = ops::conv_geometry(self.dims(input), self.dims(kernel), stride, padding)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            vec![geom.oh, geom.ow, geom.cout],
        ))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, m) = ops::dense_geometry(self.dims(input), self.dims(weights), self.dims(bias))?;
        Ok(self.push(
            Op::Dense {
                input,
                weights,
                bias,
            },
            vec![m],
        ))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let c = match *self.dims(input) {
            [_, _, c] => c,
            ref d => return Err(Error::shape(format!("avg pool needs HxWxC, got {d:?}"))),
        };
        Ok(self.push(Op::GlobalAvgPool(input), vec![c]))
    }

    pub fn unary(&mut self, input: NodeId, f: UnaryFn) -> NodeId {
        let dims = self.dims(input).to_vec();
        self.push(Op::Unary(input, f), dims)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.unary(input, UnaryFn::Relu)
    }

    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        self.unary(input, UnaryFn::Softplus)
    }

    pub fn log(&mut self, input: NodeId) -> NodeId {
        self.unary(input, UnaryFn::Log)
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        self.unary(input, UnaryFn::Exp)
    }

    pub fn softmax_xent(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let k: usize = self.dims(logits).iter().product();
        if label >= k {
            return Err(Error::Index(format!("label {label} out of range for {k} classes")));
        }
        Ok(self.push(Op::SoftmaxXent { logits, label }, vec![1]))
    }

    fn same_dims(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(self.dims(a).to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = self.same_dims(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), dims))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let dims = self.same_dims(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), dims))
    }

    /// Multiplies every element by a fixed constant.
    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let c = self.constant(Tensor::full(&self.dims(input).to_vec(), factor));
        self.mul(input, c)
    }

    /// Adds a fixed constant tensor.
    pub fn offset(&mut self, input: NodeId, value: Tensor) -> Result<NodeId> {
        let c = self.constant(value);
        self.add(input, c)
    }

    /// Sum of all elements as a length-1 node, composed from `dense`.
    pub fn sum(&mut self, input: NodeId, weight: f64) -> Result<NodeId> {
        let n: usize = self.dims(input).iter().product();
        let w = self.constant(Tensor::full(&[n, 1], weight));
        let b = self.constant(Tensor::zeros(&[1]));
        self.dense(input, w, b)
    }

    fn channel_vector(&self, input: NodeId, v: NodeId, what: &str) -> Result<Vec<usize>> {
        match (self.dims(input), self.dims(v)) {
            ([_, _, c], [n]) if c == n => Ok(self.dims(input).to_vec()),
            (a, b) => Err(Error::shape(format!("{what}: {a:?} with {b:?}"))),
        }
    }

    pub fn add_channels(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let dims = self.channel_vector(input, bias, "add_channels")?;
        Ok(self.push(Op::AddChannels { input, bias }, dims))
    }

    pub fn scale_channels(&mut self, input: NodeId, scale: NodeId) -> Result<NodeId> {
        let dims = self.channel_vector(input, scale, "scale_channels")?;
        Ok(self.push(Op::ScaleChannels { input, scale }, dims))
    }

    pub fn straight_through(&mut self, logit: NodeId, soft: NodeId) -> Result<NodeId> {
        let dims = self.same_dims(logit, soft, "straight_through")?;
        Ok(self.push(Op::StraightThrough { logit, soft }, dims))
    }

    /// Evaluates every node and records the values for [`Graph::backward`].
    pub fn forward(&mut self, params: &ParamStore) -> Result<()> {
        if params.len() != self.param_dims.len()
            || params
                .tensors
                .iter()
                .zip(&self.param_dims)
                .any(|(t, d)| t.dims() != &d[..])
        {
            return Err(Error::shape("parameter store does not match the graph"));
        }
        self.values = None;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = |id: NodeId| &values[id.0];
            let out = match &node.op {
                Op::Param(p) => params.get(*p).clone(),
                Op::Constant(t) => t.clone(),
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => ops::conv2d_raw(v(*input).data(), v(*kernel).data(), geom),
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => ops::dense(v(*input), v(*weights), v(*bias))?,
                Op::GlobalAvgPool(x) => ops::global_avg_pool(v(*x))?,
                Op::Unary(x, f) => ops::apply_unary(v(*x), *f).map_err(|e| match e {
                    Error::Domain(d) => Error::NonFinite {
                        node: idx,
                        op: f.name(),
                        detail: d,
                    },
                    e => e,
                })?,
                Op::SoftmaxXent { logits, label } => {
                    Tensor::scalar(ops::softmax_xent(v(*logits), *label)?)
                }
                Op::Add(a, b) => zip_map(v(*a), v(*b), |x, y| x + y),
                Op::Mul(a, b) => zip_map(v(*a), v(*b), |x, y| x * y),
                Op::AddChannels { input, bias } => {
                    per_channel(v(*input), v(*bias), |x, b| x + b)
                }
                Op::ScaleChannels { input, scale } => {
                    per_channel(v(*input), v(*scale), |x, s| x * s)
                }
                Op::StraightThrough { logit, .. } => {
                    let data = v(*logit)
                        .data()
                        .iter()
                        .map(|&z| if z > 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    Tensor::new(node.dims.clone(), data)?
                }
            };
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                    detail: "forward produced NaN or infinity".into(),
                });
            }
            values.push(out);
        }
        self.values = Some(values);
        Ok(())
    }

    pub fn is_evaluated(&self) -> bool {
        self.values.is_some()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.values
            .as_ref()
            .map(|v| &v[id.0])
            .ok_or_else(|| Error::State("graph has not been evaluated".into()))
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let t = self.value(id)?;
        if t.len() != 1 {
            return Err(Error::shape(format!("node {} is not scalar", id.0)));
        }
        Ok(t.data()[0])
    }

    /// Gradients of `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let mut grads = Gradients {
            grads: self.param_dims.iter().map(|d| Tensor::zeros(d)).collect(),
        };
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but adds into existing gradients.
    pub fn backward_into(&self, loss: NodeId, grads: &mut Gradients) -> Result<()> {
        let values = self
            .values
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if self.nodes[loss.0].dims.iter().product::<usize>() != 1 {
            return Err(Error::shape("loss must be a scalar node"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |id: NodeId| values[id.0].data();
            let mut send = |id: NodeId, d: Vec<f64>| add_into(&mut adj[id.0], d);
            match &node.op {
                Op::Param(p) => {
                    for (a, b) in grads.grads[p.0].data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Constant(_) => {}
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    let (gx, gk) = ops::conv2d_backward(val(*input), val(*kernel), &g, geom);
                    send(*input, gx);
                    send(*kernel, gk);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let x = val(*input);
                    let w = val(*weights);
                    let m = g.len();
                    let gx = (0..x.len())
                        .map(|i| w[i * m..][..m].iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    let mut gw = vec![0.0; w.len()];
                    for (i, &xi) in x.iter().enumerate() {
                        for (d, &gj) in gw[i * m..][..m].iter_mut().zip(&g) {
                            *d = xi * gj;
                        }
                    }
                    send(*input, gx);
                    send(*weights, gw);
                    send(*bias, g);
                }
                Op::GlobalAvgPool(x) => {
                    let c = g.len();
                    let n = values[x.0].len();
                    let inv = 1.0 / (n / c) as f64;
                    let gx = (0..n).map(|i| g[i % c] * inv).collect();
                    send(*x, gx);
                }
                Op::Unary(x, f) => {
                    let gx = ops::unary_backward(*f, val(*x), values[idx].data(), &g);
                    send(*x, gx);
                }
                Op::SoftmaxXent { logits, label } => {
                    let mut p = ops::softmax(val(*logits));
                    p[*label] -= 1.0;
                    p.iter_mut().for_each(|v| *v *= g[0]);
                    send(*logits, p);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::AddChannels { input, bias } => {
                    let c = values[bias.0].len();
                    let mut gb = vec![0.0; c];
                    for px in g.chunks_exact(c) {
                        gb.iter_mut().zip(px).for_each(|(a, b)| *a += b);
                    }
                    send(*input, g);
                    send(*bias, gb);
                }
                Op::ScaleChannels { input, scale } => {
                    let s = val(*scale);
                    let x = val(*input);
                    let c = s.len();
                    let mut gs = vec![0.0; c];
                    let mut gx = vec![0.0; g.len()];
                    for ((gp, xp), gxp) in g
                        .chunks_exact(c)
                        .zip(x.chunks_exact(c))
                        .zip(gx.chunks_exact_mut(c))
                    {
                        for i in 0..c {
                            gs[i] += gp[i] * xp[i];
                            gxp[i] = gp[i] * s[i];
                        }
                    }
                    send(*input, gx);
                    send(*scale, gs);
                }
                Op::StraightThrough { soft, .. } => send(*soft, g),
            }
        }
        Ok(())
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, d: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("same extents")
}

fn per_channel(x: &Tensor, v: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let c = v.len();
    let mut data = Vec::with_capacity(x.len());
    for px in x.data().chunks_exact(c) {
        data.extend(px.iter().zip(v.data()).map(|(&a, &b)| f(a, b)));
    }
    Tensor::new(x.dims().to_vec(), data).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let sq = g.mul(xn, xn).unwrap();
        g.forward(&store).unwrap();
        assert_eq!(g.scalar(sq).unwrap(), 9.0);
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).data(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(2.0));
        let y = store.add("y", Tensor::from_vec(vec![1.0, 2.0]));
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let _yn = g.param(y);
        let loss = g.exp(xn);
        g.forward(&store).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!((grads.get(x).data()[0] - 2f64.exp()).abs() < 1e-12);
        assert_eq!(grads.get(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        assert!(matches!(g.backward(xn), Err(Error::State(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::from_vec(vec![1.0, 2.0]));
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        g.forward(&store).unwrap();
        assert!(matches!(g.backward(xn), Err(Error::Shape(_))));
    }

    #[test]
    fn straight_through_forward_is_hard() {
        let mut store = ParamStore::new();
        let z = store.add("z", Tensor::from_vec(vec![-0.5, 0.0, 2.0]));
        let mut g = Graph::new(&store);
        let zn = g.param(z);
        let soft = g.exp(zn);
        let st = g.straight_through(zn, soft).unwrap();
        let loss = g.sum(st, 1.0).unwrap();
        g.forward(&store).unwrap();
        assert_eq!(g.value(st).unwrap().data(), &[0.0, 0.0, 1.0]);
        let grads = g.backward(loss).unwrap();
        let want: Vec<f64> = [-0.5f64, 0.0, 2.0].iter().map(|v| v.exp()).collect();
        assert_eq!(grads.get(z).data(), &want[..]);
    }

    #[test]
    fn log_of_zero_names_node() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::from_vec(vec![0.0]));
        let mut g = Graph::new(&store);
        let xn = g.param(x);
        let l = g.log(xn);
        match g.forward(&store) {
            Err(Error::NonFinite { node, op, .. }) => {
                assert_eq!(node, l.index());
                assert_eq!(op, "log");
            }
            other => panic!("{other:?}"),
        }
    }
}
