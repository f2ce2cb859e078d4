//! Gradient tape: an append-only record of differentiable operations.
//!
//! Every operator is a method on [`Tape`]. A recording tape stores a backward
//! closure for each operation whose inputs are tracked; an inference tape
//! (see [`Tape::inference`]) records nothing, so the same model code serves
//! both training and evaluation.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{usage, Result};
use crate::tensor::{NodeRef, Tensor};

/// Maps the output gradient to one optional gradient per input. The mask says
/// which inputs actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    shape: Vec<usize>,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

pub struct Tape {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, usize>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that never records; operators just compute values.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording,
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Track `t` as a differentiable input.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let mut out = t.detach();
        if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            out.node = Some(NodeRef {
                tape: self.id,
                index: nodes.len(),
            });
            nodes.push(Node {
                inputs: Vec::new(),
                backward: None,
                shape: t.shape().to_vec(),
            });
        }
        out
    }

    /// Track `t` as a named parameter. Registering the same name twice is an error.
    pub fn param(&self, name: &str, t: &Tensor) -> Result<Tensor> {
        let out = self.leaf(t);
        if let Some(node) = out.node {
            let mut params = self.params.borrow_mut();
            if params.contains_key(name) {
                return usage(format!("parameter {name:?} registered twice"));
            }
            params.insert(name.to_string(), node.index);
        }
        Ok(out)
    }

    fn node_of(&self, t: &Tensor) -> Result<Option<usize>> {
        match t.node {
            None => Ok(None),
            Some(n) if n.tape == self.id => Ok(Some(n.index)),
            Some(_) => usage("tensor is tracked by a different tape"),
        }
    }

    /// Wrap a freshly computed value. When recording and at least one input is
    /// tracked, `backward` is stored for the reverse pass.
    pub(crate) fn record<F>(
        &self,
        shape: Vec<usize>,
        data: Vec<f32>,
        inputs: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + 'static,
    {
        let mut out = Tensor::from_parts(shape, data);
        if !self.recording {
            return Ok(out);
        }
        let ids = inputs
            .iter()
            .map(|t| self.node_of(t))
            .collect::<Result<Vec<_>>>()?;
        if ids.iter().all(Option::is_none) {
            return Ok(out);
        }
        let mut nodes = self.nodes.borrow_mut();
        out.node = Some(NodeRef {
            tape: self.id,
            index: nodes.len(),
        });
        nodes.push(Node {
            inputs: ids,
            backward: Some(Box::new(backward)),
            shape: out.shape().to_vec(),
        });
        Ok(out)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            ));
        }
        self.backward_with_seed(loss, &[1.0])
    }

    /// Reverse pass seeded with an arbitrary output cotangent.
    pub fn backward_with_seed(&self, output: &Tensor, seed: &[f32]) -> Result<Gradients> {
        if seed.len() != output.numel() {
            return usage(format!(
                "seed has {} elements, output has {}",
                seed.len(),
                output.numel()
            ));
        }
        let Some(root) = self.node_of(output)? else {
            return usage("backward on a tensor that is not connected to this tape");
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        grads[root] = Some(seed.to_vec());

        for index in (0..=root).rev() {
            let node = &nodes[index];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[index].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            for (slot, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(target), Some(ig)) = (slot, ig) else {
                    continue;
                };
                match &mut grads[*target] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(ig.iter()) {
                            *a += v;
                        }
                    }
                    empty => *empty = Some(ig),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
            params: self.params.borrow().clone(),
        })
    }
}

/// Gradients produced by one reverse pass. Gradients of leaves are kept;
/// interior gradients are released as the pass proceeds.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    fn at(&self, index: usize) -> Tensor {
        let shape = self.shapes[index].clone();
        match &self.grads[index] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => {
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            }
        }
    }

    /// Gradient with respect to a leaf; zeros when the loss does not depend on it.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let node = t.node?;
        (node.tape == self.tape).then(|| self.at(node.index))
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|&i| self.at(i))
    }

    /// Names of all registered parameters, in sorted order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}
