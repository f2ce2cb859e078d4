use std::sync::Arc;

use crate::error::{config, Result};
use crate::{Tape, Tensor};

/// Pointwise nonlinearities used by the networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// Identity for positive inputs, `slope * x` otherwise. Slope 0 is ReLU.
    LeakyRelu(f32),
    Sigmoid,
    Tanh,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl Tape {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "add")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.record(a.shape().to_vec(), data, &[a, b], |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.to_vec()),
            ]
        })
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "sub")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.record(a.shape().to_vec(), data, &[a, b], |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape(a, b, "mul")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (ad, bd) = (a.shared(), b.shared());
        self.record(a.shape().to_vec(), data, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(bd.iter()).map(|(g, y)| g * y).collect()),
                needs[1].then(|| g.iter().zip(ad.iter()).map(|(g, x)| g * x).collect()),
            ]
        })
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, x: &Tensor, s: f32) -> Result<Tensor> {
        let data = x.data().iter().map(|v| v * s).collect();
        self.record(x.shape().to_vec(), data, &[x], move |g, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    /// Elementwise map with a caller-supplied derivative `df(x, y)` where `y = f(x)`.
    pub fn map<F, D>(&self, x: &Tensor, f: F, df: D) -> Result<Tensor>
    where
        F: Fn(f32) -> f32,
        D: Fn(f32, f32) -> f32 + 'static,
    {
        let out: Vec<f32> = x.data().iter().map(|&v| f(v)).collect();
        let xd = x.shared();
        // the closure only runs when recording
        let yd = Arc::new(if self.is_recording() { out.clone() } else { Vec::new() });
        self.record(x.shape().to_vec(), out, &[x], move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter().zip(yd.iter()))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn activation(&self, x: &Tensor, kind: Activation) -> Result<Tensor> {
        match kind {
            Activation::LeakyRelu(slope) => self.map(
                x,
                move |v| if v > 0.0 { v } else { v * slope },
                move |v, _| if v > 0.0 { 1.0 } else { slope },
            ),
            Activation::Sigmoid => self.map(x, sigmoid, |_, y| y * (1.0 - y)),
            Activation::Tanh => self.map(x, f32::tanh, |_, y| 1.0 - y * y),
        }
    }

    pub fn leaky_relu(&self, x: &Tensor, slope: f32) -> Result<Tensor> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.activation(x, Activation::Tanh)
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_scales_negatives_only() {
        let tape = Tape::inference();
        let y = tape.leaky_relu(&t(&[-1.0, 0.0, 2.0]), 0.1).unwrap();
        assert_eq!(y.data(), &[-0.1, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::inference();
        let y = tape.sigmoid(&t(&[0.0])).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        let tape = Tape::inference();
        let y = tape.sigmoid(&t(&[-200.0, 200.0])).unwrap();
        assert!(y.all_finite());
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let tape = Tape::inference();
        assert!(tape.add(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }
}
