//! Define-by-run computation graph with reverse-mode gradients.
//!
//! A [`Graph`] records one forward pass for one image. Every node owns its
//! output tensor; [`Graph::backward`] walks the nodes in reverse creation
//! order and accumulates parameter gradients.

use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::{ConvLayer, ParamSet, Real, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Input,
    Conv { input: NodeId, layer: ConvLayer },
    Relu(NodeId),
    Add(Vec<NodeId>),
    Concat(Vec<NodeId>),
    /// Probability of channel 1 under a per-pixel two-way softmax.
    SoftmaxProb(NodeId),
    /// Product of two single-channel maps.
    Mul(NodeId, NodeId),
    /// Multi-channel map minus a single-channel map broadcast over channels.
    SubBroadcast(NodeId, NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    pub fn conv(&mut self, input: NodeId, layer: ConvLayer) -> NodeId {
        let weight = &self.params.get(layer.weight).data;
        let bias = &self.params.get(layer.bias).data;
        let value = conv2d_forward(&self.nodes[input].value, &layer.shape, weight, bias);
        self.push(value, Op::Conv { input, layer }, true)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let src = &self.nodes[input].value;
        let value = Tensor {
            data: src.data.iter().map(|&v| v.max(T::zero())).collect(),
            ..*src
        };
        let g = self.nodes[input].needs_grad;
        self.push(value, Op::Relu(input), g)
    }

    pub fn conv_relu(&mut self, input: NodeId, layer: ConvLayer) -> NodeId {
        let c = self.conv(input, layer);
        self.relu(c)
    }

    pub fn add(&mut self, inputs: &[NodeId]) -> NodeId {
        let first = &self.nodes[inputs[0]].value;
        let mut value = first.clone();
        for &i in &inputs[1..] {
            let other = &self.nodes[i].value;
            assert_eq!(other.data.len(), value.data.len(), "add: shape mismatch");
            for (a, &b) in value.data.iter_mut().zip(&other.data) {
                *a += b;
            }
        }
        let g = self.grad_flag(inputs);
        self.push(value, Op::Add(inputs.to_vec()), g)
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> NodeId {
        let first = &self.nodes[inputs[0]].value;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for &i in inputs {
            let v = &self.nodes[i].value;
            assert!(v.height == h && v.width == w, "concat: spatial mismatch");
            data.extend_from_slice(&v.data);
            channels += v.channels;
        }
        let value = Tensor {
            channels,
            height: h,
            width: w,
            data,
        };
        let g = self.grad_flag(inputs);
        self.push(value, Op::Concat(inputs.to_vec()), g)
    }

    pub fn softmax_prob(&mut self, logits: NodeId) -> NodeId {
        let l = &self.nodes[logits].value;
        assert_eq!(l.channels, 2, "softmax_prob expects two channels");
        let n = l.plane_len();
        let data = (0..n)
            .map(|i| {
                // p1 = 1 / (1 + exp(l0 − l1))
                let z = l.data[i] - l.data[n + i];
                T::one() / (T::one() + z.exp())
            })
            .collect();
        let value = Tensor {
            channels: 1,
            height: l.height,
            width: l.width,
            data,
        };
        let g = self.nodes[logits].needs_grad;
        self.push(value, Op::SoftmaxProb(logits), g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(va.channels == 1 && vb.channels == 1 && va.same_spatial(vb), "mul: expects matching single-channel maps");
        let value = Tensor {
            data: va.data.iter().zip(&vb.data).map(|(&x, &y)| x * y).collect(),
            ..*va
        };
        let g = self.grad_flag(&[a, b]);
        self.push(value, Op::Mul(a, b), g)
    }

    pub fn sub_broadcast(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(vb.channels == 1 && va.same_spatial(vb), "sub_broadcast: expects a single-channel subtrahend");
        let n = va.plane_len();
        let mut value = va.clone();
        for c in 0..va.channels {
            for (o, &s) in value.data[c * n..(c + 1) * n].iter_mut().zip(&vb.data) {
                *o -= s;
            }
        }
        let g = self.grad_flag(&[a, b]);
        self.push(value, Op::SubBroadcast(a, b), g)
    }

    /// On/off state of every ReLU unit, in creation order. Two parameter
    /// settings with equal patterns lie on the same linear piece of the net.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu(_)))
            .flat_map(|n| n.value.data.iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Back-propagates the given output gradients, adding parameter gradients
    /// into `grads` (which must mirror the graph's parameter set).
    pub fn backward(&self, seeds: Vec<(NodeId, Vec<T>)>, grads: &mut ParamSet<T>) {
        let mut node_grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            assert_eq!(g.len(), self.nodes[id].value.data.len(), "seed gradient length");
            accumulate(&mut node_grads[id], g);
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = node_grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Conv { input, layer } => {
                    let src = &self.nodes[*input];
                    let weight = &self.params.get(layer.weight).data;
                    let mut gw = std::mem::take(&mut grads.get_mut(layer.weight).data);
                    let mut gb = std::mem::take(&mut grads.get_mut(layer.bias).data);
                    let mut gi = src.needs_grad.then(|| vec![T::zero(); src.value.data.len()]);
                    conv2d_backward(&src.value, &layer.shape, weight, &grad, &mut gw, &mut gb, gi.as_deref_mut());
                    grads.get_mut(layer.weight).data = gw;
                    grads.get_mut(layer.bias).data = gb;
                    if let Some(gi) = gi {
                        accumulate(&mut node_grads[*input], gi);
                    }
                }
                Op::Relu(input) => {
                    let mut g = grad;
                    for (gv, &out) in g.iter_mut().zip(&node.value.data) {
                        if out <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    accumulate(&mut node_grads[*input], g);
                }
                Op::Add(inputs) => {
                    for &i in inputs {
                        if self.nodes[i].needs_grad {
                            accumulate(&mut node_grads[i], grad.clone());
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for &i in inputs {
                        let len = self.nodes[i].value.data.len();
                        if self.nodes[i].needs_grad {
                            accumulate(&mut node_grads[i], grad[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                }
                Op::SoftmaxProb(logits) => {
                    let n = node.value.data.len();
                    let mut g = vec![T::zero(); 2 * n];
                    for i in 0..n {
                        let p = node.value.data[i];
                        let d = grad[i] * p * (T::one() - p);
                        g[i] = -d;
                        g[n + i] = d;
                    }
                    accumulate(&mut node_grads[*logits], g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value.data, &self.nodes[*b].value.data);
                    if self.nodes[*a].needs_grad {
                        let g = grad.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                        accumulate(&mut node_grads[*a], g);
                    }
                    if self.nodes[*b].needs_grad {
                        let g = grad.iter().zip(va).map(|(&g, &x)| g * x).collect();
                        accumulate(&mut node_grads[*b], g);
                    }
                }
                Op::SubBroadcast(a, b) => {
                    let n = self.nodes[*b].value.data.len();
                    if self.nodes[*b].needs_grad {
                        let mut g = vec![T::zero(); n];
                        for chunk in grad.chunks(n) {
                            for (o, &v) in g.iter_mut().zip(chunk) {
                                *o -= v;
                            }
                        }
                        accumulate(&mut node_grads[*b], g);
                    }
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut node_grads[*a], grad);
                    }
                }
            }
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}
