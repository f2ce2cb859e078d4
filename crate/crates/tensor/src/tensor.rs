use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{config, Result};

/// Handle of a recorded value inside a specific [`crate::Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NodeRef {
    pub tape: u64,
    pub index: usize,
}

/// Dense row-major `f32` array, usually laid out as (batch, channels, height, width).
///
/// Cloning is cheap: the payload is shared and never mutated in place.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return config(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn shared(&self) -> Arc<Vec<f32>> {
        Arc::clone(&self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return config(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// Same values, cut loose from any gradient tape.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Reinterpret the payload under a new shape with the same element count.
    /// Untracked: use [`crate::Tape::reshape`] inside differentiated code.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return config(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node: None,
        })
    }

    /// Stack along the leading axis. Untracked; inputs must agree on the
    /// remaining dimensions.
    pub fn concat_batch(parts: &[Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return config("concat_batch of an empty list");
        };
        if first.shape.is_empty() {
            return config("concat_batch needs tensors of rank at least 1");
        }
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::numel).sum());
        let mut lead = 0;
        for p in parts {
            if p.shape.len() != first.shape.len() || p.shape[1..] != first.shape[1..] {
                return config(format!(
                    "concat_batch: shape {:?} does not match {:?}",
                    p.shape, first.shape
                ));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self::from_parts(shape, data))
    }

    /// Batch item `i` of a rank-4 tensor as a (1, C, H, W) tensor. Untracked.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let [b, c, h, w] = self.nchw()?;
        if i >= b {
            return config(format!("batch index {i} out of range for batch {b}"));
        }
        let n = c * h * w;
        Ok(Self::from_parts(vec![1, c, h, w], self.data[i * n..(i + 1) * n].to_vec()))
    }

    /// (batch, channels, height, width) of a rank-4 tensor.
    pub fn nchw(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            other => config(format!("expected a rank-4 tensor, got shape {other:?}")),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return config(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Bitwise equality of shape and payload.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}
