//! Central-difference gradient checking.
//!
//! A non-scalar output is contracted with fixed weights in f64, which turns
//! any operator into a scalar function without the rounding of an `f32` sum.
//! Returning `x` itself under [`Projection::Sum`] therefore checks `sum(x)`
//! exactly, whereas a scalar computed in `f32` carries its own rounding into
//! the difference quotient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Result};
use crate::{Tape, Tensor};

/// How a tensor-valued output is reduced to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Plain sum of every output element.
    Sum,
    /// Dot product with seeded U(-1, 1) weights.
    Random,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Input coordinates probed; all of them when the input is smaller.
    pub max_samples: usize,
    pub seed: u64,
    pub projection: Projection,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_samples: 64,
            seed: 0,
            projection: Projection::Random,
        }
    }
}

fn contract(y: &Tensor, w: &[f32]) -> f64 {
    y.data().iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Max relative error `|a - n| / max(|a|, |n|, 1e-8)` between the analytic and
/// numeric gradient of `f` at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f32) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    finite_diff_check_with(
        f,
        x,
        GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

pub fn finite_diff_check_with<F>(f: F, x: &Tensor, opts: GradCheckOptions) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return config("finite_diff_check: eps must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let tape = Tape::new();
    let xl = tape.leaf(x);
    let y = f(&tape, &xl)?;
    let weights: Vec<f32> = match opts.projection {
        _ if y.numel() == 1 => vec![1.0],
        Projection::Sum => vec![1.0; y.numel()],
        Projection::Random => (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let analytic = if y.is_tracked() {
        tape.backward_with_seed(&y, &weights)?
            .wrt(&xl)
            .unwrap_or_else(|| Tensor::zeros(x.shape()))
    } else {
        Tensor::zeros(x.shape())
    };

    let n = x.numel();
    let coords: Vec<usize> = if n <= opts.max_samples {
        (0..n).collect()
    } else {
        sample(&mut rng, n, opts.max_samples).into_vec()
    };

    let probe = Tape::inference();
    let eval = |i: usize, delta: f32| -> Result<(f64, f64)> {
        let mut v = x.to_vec();
        let orig = v[i];
        v[i] = orig + delta;
        let step = v[i] as f64 - orig as f64;
        let y = f(&probe, &Tensor::from_vec(x.shape(), v)?)?;
        Ok((contract(&y, &weights), step))
    };

    let mut worst = 0.0f64;
    for i in coords {
        let (fp, hp) = eval(i, opts.eps)?;
        let (fm, hm) = eval(i, -opts.eps)?;
        let numeric = (fp - fm) / (hp - hm);
        let a = analytic.data()[i] as f64;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
