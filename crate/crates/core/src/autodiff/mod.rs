//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node holding
//! its forward value and what it needs for the backward rule. Node ids grow
//! monotonically, so parents always precede children and the reverse of
//! insertion order is a valid topological order for the backward sweep.

pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod pool;
pub mod resize;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

pub use conv::ConvSpec;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::Reduction;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-supplied vector-Jacobian product: maps the output gradient to one
/// gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    MaxPool2x2 { x: NodeId, argmax: Vec<usize> },
    AvgPoolRegion { x: NodeId },
    Resize { x: NodeId },
    Concat { xs: Vec<NodeId> },
    SliceChannels { x: NodeId, start: usize },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Tensor<T>, reduction: Reduction },
    Sum(NodeId),
    WeightedSum { x: NodeId, weights: Tensor<T> },
    Custom { inputs: Vec<NodeId>, backward: BackwardFn<T> },
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Sum(a) => vec![*a],
            Op::Conv2d { x, w, b, .. } => {
                let mut p = vec![*x, *w];
                p.extend(b);
                p
            }
            Op::MaxPool2x2 { x, .. }
            | Op::AvgPoolRegion { x }
            | Op::Resize { x }
            | Op::SliceChannels { x, .. }
            | Op::WeightedSum { x, .. } => vec![*x],
            Op::Concat { xs } => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of the leaves that require them.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, `None` if it does not require gradients or the
    /// output does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Define-by-run computation tape.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    shape_only: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), shape_only: false }
    }

    /// A graph for shape inference: convolutions yield zeros of the right
    /// shape without computing anything, so values are meaningless and
    /// `backward` is refused.
    pub fn shape_only() -> Self {
        Graph { nodes: Vec::new(), shape_only: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let v = if self.shape_only {
            let bias = b.map(|b| self.shape(b));
            Tensor::zeros(conv::conv2d_output_shape(self.shape(x), self.shape(w), bias, spec)?)
        } else {
            conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?
        };
        Ok(self.push(v, Op::Conv2d { x, w, b, spec }))
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = pool::maxpool2x2_forward(self.value(x))?;
        Ok(self.push(v, Op::MaxPool2x2 { x, argmax }))
    }

    pub fn avgpool_region(&mut self, x: NodeId, bins_h: usize, bins_w: usize) -> Result<NodeId> {
        let v = pool::avgpool_region_forward(self.value(x), bins_h, bins_w)?;
        Ok(self.push(v, Op::AvgPoolRegion { x }))
    }

    pub fn bilinear_resize(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let v = resize::bilinear_forward(self.value(x), out_h, out_w)?;
        Ok(self.push(v, Op::Resize { x }))
    }

    /// Concatenate activations along the channel axis, in argument order.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(Error::Usage("concat of zero tensors".into()));
        };
        let (n, h, w, _) = self.shape(first).as_nhwc()?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xh, xw, xc) = self.shape(x).as_nhwc()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(shape_err!(
                    "cannot concatenate {} with {}",
                    self.shape(x),
                    self.shape(first)
                ));
            }
            widths.push(xc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * h * w * total);
        for p in 0..n * h * w {
            for (&x, &c) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[p * c..][..c]);
            }
        }
        let v = Tensor::from_vec(Shape::nhwc(n, h, w, total)?, out)?;
        Ok(self.push(v, Op::Concat { xs: xs.to_vec() }))
    }

    /// Channels `start..start + len` of an activation.
    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, h, w, c) = self.shape(x).as_nhwc()?;
        if len == 0 || start + len > c {
            return Err(shape_err!("channel slice {start}..{} of {c} channels", start + len));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * h * w * len);
        for p in 0..n * h * w {
            out.extend_from_slice(&src[p * c + start..][..len]);
        }
        let v = Tensor::from_vec(Shape::nhwc(n, h, w, len)?, out)?;
        Ok(self.push(v, Op::SliceChannels { x, start }))
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let ce = loss::softmax_cross_entropy_forward(self.value(logits), labels, reduction)?;
        let v = Tensor::scalar(T::from_f64(ce.loss));
        Ok(self.push(
            v,
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs: ce.probs, reduction },
        ))
    }

    /// Cached softmax probabilities of a cross-entropy node.
    pub fn probabilities(&self, loss: NodeId) -> Option<&Tensor<T>> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(T::from_f64(self.value(x).sum()));
        self.push(v, Op::Sum(x))
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Tensor<T>) -> Result<NodeId> {
        if weights.shape() != self.shape(x) {
            return Err(shape_err!("weights {} vs input {}", weights.shape(), self.shape(x)));
        }
        let total = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .fold(0.0f64, |acc, (a, b)| acc + a.as_f64() * b.as_f64());
        Ok(self.push(Tensor::scalar(T::from_f64(total)), Op::WeightedSum { x, weights }))
    }

    /// Operation with a caller-provided forward value and backward rule.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor<T>, backward: BackwardFn<T>) -> NodeId {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward })
    }

    /// Hash of every data-dependent branch taken in the forward pass (ReLU
    /// activity masks, max-pool selections). Two evaluations with equal
    /// signatures lie on the same linear piece of the network.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for v in self.nodes[a.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2x2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of a scalar node with respect to every leaf that requires
    /// them.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.shape_only {
            return Err(Error::Usage("backward through a shape-only graph".into()));
        }
        if self.value(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        let mut leaves: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                leaves[id] = Some(g);
                continue;
            }
            for (parent, pg) in self.vjp(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                if pg.shape() != self.shape(parent) {
                    return Err(shape_err!(
                        "gradient shape {} for node of shape {}",
                        pg.shape(),
                        self.shape(parent)
                    ));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale(a, f) => vec![(*a, g.scale(*f))],
            Op::Relu(a) => {
                let x = self.value(*a);
                vec![(*a, x.zip_with(g, |x, g| if x > T::zero() { g } else { T::zero() })?)]
            }
            Op::Conv2d { x, w, b, spec } => {
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), *spec, g, needs(*x), needs(*w))?;
                let mut out = Vec::with_capacity(3);
                if let Some(gx) = cg.x {
                    out.push((*x, gx));
                }
                if let Some(gw) = cg.w {
                    out.push((*w, gw));
                }
                if let Some(b) = b {
                    out.push((*b, cg.b));
                }
                out
            }
            Op::MaxPool2x2 { x, argmax } => {
                vec![(*x, pool::maxpool2x2_backward(self.shape(*x), argmax, g)?)]
            }
            Op::AvgPoolRegion { x } => vec![(*x, pool::avgpool_region_backward(self.shape(*x), g)?)],
            Op::Resize { x } => vec![(*x, resize::bilinear_backward(self.shape(*x), g)?)],
            Op::Concat { xs } => {
                let (n, h, w, total) = g.shape().as_nhwc()?;
                let mut offset = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    let c = self.shape(x).as_nhwc()?.3;
                    if needs(x) {
                        let mut part = Vec::with_capacity(n * h * w * c);
                        for p in 0..n * h * w {
                            part.extend_from_slice(&g.data()[p * total + offset..][..c]);
                        }
                        out.push((x, Tensor::from_vec(self.shape(x).clone(), part)?));
                    }
                    offset += c;
                }
                out
            }
            Op::SliceChannels { x, start } => {
                let (n, h, w, c) = self.shape(*x).as_nhwc()?;
                let len = g.shape().as_nhwc()?.3;
                let mut gx = vec![T::zero(); n * h * w * c];
                for p in 0..n * h * w {
                    gx[p * c + start..][..len].copy_from_slice(&g.data()[p * len..][..len]);
                }
                vec![(*x, Tensor::from_vec(self.shape(*x).clone(), gx)?)]
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs, reduction } => {
                let up = g.data()[0];
                vec![(*logits, loss::softmax_cross_entropy_backward(probs, labels, *reduction, up))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x).clone(), g.data()[0]))],
            Op::WeightedSum { x, weights } => vec![(*x, weights.scale(g.data()[0]))],
            Op::Custom { inputs, backward } => {
                let gs = backward(g);
                if gs.len() != inputs.len() {
                    return Err(Error::Usage(format!(
                        "custom backward returned {} gradients for {} inputs",
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs.iter().copied().zip(gs).collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(dims, v).unwrap()
    }

    #[test]
    fn add_backward_is_ones() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2], vec![1.0, 2.0]));
        let b = g.param(t(&[2], vec![3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[1], vec![3.0]));
        let b = g.add(a, a).unwrap();
        let c = g.add(b, a).unwrap();
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2], vec![1.0, 2.0]));
        let r = g.relu(a);
        assert!(matches!(g.backward(r), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[1], vec![2.0]));
        let b = g.param(t(&[1], vec![5.0]));
        let c = g.add(a, b).unwrap();
        let grads = g.backward(c).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn concat_roundtrip_and_split_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.param(t(&[1, 1, 2, 1], vec![5.0, 6.0]));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let sa = g.slice_channels(c, 0, 2).unwrap();
        let sb = g.slice_channels(c, 2, 1).unwrap();
        assert_eq!(g.value(sa).data(), g.value(a).data());
        assert_eq!(g.value(sb).data(), g.value(b).data());

        let w = t(&[1, 1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let s = g.weighted_sum(c, w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.1, 0.2, 0.4, 0.5]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.3, 0.6]);
    }

    #[test]
    fn concat_single_is_identity() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::new(&[1, 2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(c), g.value(a));
    }

    #[test]
    fn concat_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(Shape::nhwc(1, 2, 2, 1).unwrap()));
        let b = g.input(Tensor::zeros(Shape::nhwc(1, 2, 3, 1).unwrap()));
        assert!(matches!(g.concat_channels(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_only_graph_matches_real_shapes() {
        let x = t(&[1, 9, 7, 2], (0..126).map(|v| v as f64 * 0.01).collect());
        let w = t(&[3, 3, 2, 5], vec![0.1; 90]);
        let mut shapes = Vec::new();
        for mut g in [Graph::<f64>::new(), Graph::<f64>::shape_only()] {
            let (xi, wi) = (g.input(x.clone()), g.param(w.clone()));
            let y = g.conv2d(xi, wi, None, ConvSpec::new(3, 2)).unwrap();
            let p = g.maxpool2x2(y).unwrap();
            shapes.push(g.shape(p).clone());
            let s = g.sum(p);
            assert_eq!(g.backward(s).is_err(), g.shape_only);
        }
        assert_eq!(shapes[0], shapes[1]);
    }

    #[test]
    fn branch_signature_tracks_relu_pattern() {
        let sig = |x: f64| {
            let mut g = Graph::<f64>::new();
            let a = g.input(t(&[2], vec![x, 1.0]));
            g.relu(a);
            g.branch_signature()
        };
        assert_eq!(sig(0.5), sig(0.7));
        assert_ne!(sig(0.5), sig(-0.5));
    }
}
