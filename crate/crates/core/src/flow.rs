//! Encoder-decoder flow estimator.
//!
//! Three encoder blocks (two conv + leaky ReLU, then 2×2 average pooling),
//! three decoder blocks (two conv + leaky ReLU, then bilinear ×2), skip
//! connections at matching resolutions and a head `conv → leaky ReLU → conv →
//! tanh`. The result is scaled by `flow_range`, giving a backward flow in LR
//! pixels: `x_t(p)` is matched by `x_prev(p + F(p))`.

use fvsr_tensor::{Bound, ParamStore, Ratio, Tape, Tensor};
use rand::Rng;

use crate::error::{config, Result};
use crate::layers::conv;

pub const PREFIX: &str = "flow";

/// Negative slope of every activation in the estimator. With plain ReLU the
/// pooled path starves and the net never gets past predicting zero flow.
const SLOPE: f32 = 0.1;

/// Layer list as (name, out, in).
fn layers(c: usize) -> Vec<(String, usize, usize)> {
    let n = |s: &str| format!("{PREFIX}.{s}");
    vec![
        (n("enc1.0"), c, 6),
        (n("enc1.1"), c, c),
        (n("enc2.0"), c, c),
        (n("enc2.1"), c, c),
        (n("enc3.0"), c, c),
        (n("enc3.1"), c, c),
        (n("dec3.0"), c, c),
        (n("dec3.1"), c, c),
        (n("dec2.0"), c, 2 * c),
        (n("dec2.1"), c, c),
        (n("dec1.0"), c, 2 * c),
        (n("dec1.1"), c, c),
        (n("head.0"), c, 2 * c),
        (n("head.1"), 2, c),
    ]
}

/// Add the estimator's parameters to `store` under `flow.*`.
pub fn build_flow_net<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, rng: &mut R) -> Result<()> {
    if channels == 0 {
        return config("flow net needs at least one channel");
    }
    // He-uniform for leaky ReLU, so the signal survives the ten-layer path
    // through the bottleneck.
    for (name, cout, cin) in layers(channels) {
        let bound = (6.0 / ((1.0 + SLOPE * SLOPE) * (cin * 9) as f32)).sqrt();
        store.insert(format!("{name}.weight"), Tensor::rand_uniform(&[cout, cin, 3, 3], -bound, bound, rng))?;
        store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
    }
    Ok(())
}

/// Parameter count of [`build_flow_net`] at width `channels`.
pub fn flow_param_count(channels: usize) -> usize {
    layers(channels)
        .iter()
        .map(|(_, o, i)| crate::layers::conv_size(*o, *i))
        .sum()
}

fn relu_conv(t: &Tape, p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let y = conv(t, p, &format!("{PREFIX}.{name}"), x)?;
    Ok(t.leaky_relu(&y, SLOPE)?)
}

fn block(t: &Tape, p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let y = relu_conv(t, p, &format!("{name}.0"), x)?;
    relu_conv(t, p, &format!("{name}.1"), &y)
}

/// Flow (B, 2, H, W) from `x_t` to `x_prev`. H and W must be multiples of 8.
pub fn flow_forward(t: &Tape, p: &Bound, x_t: &Tensor, x_prev: &Tensor, flow_range: f32) -> Result<Tensor> {
    let [_, c, h, w] = x_t.nchw()?;
    if x_prev.shape() != x_t.shape() || c != 3 {
        return config(format!(
            "flow inputs must be matching (B, 3, H, W) frames, got {:?} and {:?}",
            x_t.shape(),
            x_prev.shape()
        ));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return config(format!("flow input {h}x{w} is not divisible by 8"));
    }
    let x = t.concat_channels(&[x_t, x_prev])?;
    let x = t.add(&x, &Tensor::full(x.shape(), -0.5))?; // centre the [0, 1] input
    let s1 = block(t, p, "enc1", &x)?;
    let s2 = block(t, p, "enc2", &t.avg_pool2(&s1)?)?;
    let s3 = block(t, p, "enc3", &t.avg_pool2(&s2)?)?;
    let up = |y: &Tensor| t.bilinear_resize(y, Ratio::int(2));
    let d = block(t, p, "dec3", &t.avg_pool2(&s3)?)?;
    let d = block(t, p, "dec2", &t.concat_channels(&[&up(&d)?, &s3])?)?;
    let d = block(t, p, "dec1", &t.concat_channels(&[&up(&d)?, &s2])?)?;
    let d = relu_conv(t, p, "head.0", &t.concat_channels(&[&up(&d)?, &s1])?)?;
    let d = conv(t, p, &format!("{PREFIX}.head.1"), &d)?;
    Ok(t.scale(&t.tanh(&d)?, flow_range)?)
}
