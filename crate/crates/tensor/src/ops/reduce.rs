use crate::error::{config, Result};
use crate::{Tape, Tensor};

impl Tape {
    /// Sum of all elements as a scalar. Accumulates in `f64`, row-major.
    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        let total: f64 = x.data().iter().map(|&v| v as f64).sum();
        let n = x.numel();
        self.record(Vec::new(), vec![total as f32], &[x], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel();
        if n == 0 {
            return config("mean of an empty tensor");
        }
        let total: f64 = x.data().iter().map(|&v| v as f64).sum();
        self.record(
            Vec::new(),
            vec![(total / n as f64) as f32],
            &[x],
            move |g, _| vec![Some(vec![g[0] / n as f32; n])],
        )
    }

    /// `sum_i weights[i] * x[i]` as a scalar.
    pub fn weighted_sum(&self, x: &Tensor, weights: &[f32]) -> Result<Tensor> {
        if weights.len() != x.numel() {
            return config(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                x.numel()
            ));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(weights)
            .map(|(&v, &w)| v as f64 * w as f64)
            .sum();
        let w = weights.to_vec();
        self.record(Vec::new(), vec![total as f32], &[x], move |g, _| {
            vec![Some(w.iter().map(|w| w * g[0]).collect())]
        })
    }
}
