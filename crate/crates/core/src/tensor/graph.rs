use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative of a recorded operation.
///
/// `grad` is the gradient of the objective with respect to `output`. The
/// returned vector has one entry per input; an entry may be `None` only where
/// `needs` is false.
pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<NodeId>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only tape. Inputs of a node always precede it, so reverse insertion
/// order is a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false, None)
    }

    /// A free leaf that receives a gradient (used by gradient checks).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true, None)
    }

    /// Copies a parameter onto the tape; gradients flow back to the store on
    /// [`Gradients::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let p = store.get(id);
        let mut value = p.tensor.clone();
        value.clear_grad();
        self.push_leaf(value, p.trainable, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, inputs: Vec::new(), op: None, requires_grad, param });
        id
    }

    /// Records the result of an operation.
    pub fn push(&mut self, value: Tensor, inputs: &[NodeId], op: Box<dyn Backward>) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, inputs: inputs.to_vec(), op: Some(op), requires_grad, param: None });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Reverse sweep from one or more seeded outputs.
    pub fn backward(&self, seeds: &[(NodeId, &[f64])]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for &(id, seed) in seeds {
            let node = &self.nodes[id.0];
            if seed.len() != node.value.numel() {
                return Err(Error::dim("backward seed", node.value.shape(), &[seed.len()]));
            }
            accumulate(&mut grads[id.0], seed);
            last = last.max(id.0);
        }
        for idx in (0..=last).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                if let (Some(g), true) = (g, *need) {
                    debug_assert_eq!(g.len(), self.nodes[input.0].value.numel(), "{}", op.name());
                    accumulate(&mut grads[input.0], &g);
                }
            }
            grads[idx] = Some(grad);
        }
        let params = self.nodes.iter().map(|n| n.param).collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Gradients of every node reached by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<ParamId>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds leaf gradients into the parameter store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some(p)) = (g, p) {
                let buf = store.tensor_mut(*p).grad_mut();
                buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}
