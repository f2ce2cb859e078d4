//! Separable resampling with align-corners-false coordinates and
//! border-clamped reads.
//!
//! Output sample `i` sits at source coordinate `(i + 0.5) / scale - 0.5`.
//! Bicubic uses the Keys kernel with `a = -0.5`; when shrinking, the kernel is
//! stretched by `1 / scale` so it also acts as the antialiasing filter.
//! Weights are normalised to sum to one, so constants are preserved.

use std::sync::Arc;

use crate::error::{config, Result};
use crate::{Tape, Tensor};

/// Exact positive rational scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub const fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }

    pub const fn int(n: usize) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(len · scale)`, half away from zero.
    pub fn apply(self, len: usize) -> usize {
        (len * self.num + self.den / 2) / self.den
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Filter {
    Bilinear,
    /// Keys cubic, `a = -0.5`, widened when downscaling.
    Bicubic,
}

/// Per-output taps of a 1-D resampling matrix, stored flat.
#[derive(Debug)]
struct AxisTaps {
    starts: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f32>,
}

impl AxisTaps {
    fn taps(&self, o: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let r = self.starts[o]..self.starts[o + 1];
        self.index[r.clone()].iter().copied().zip(self.weight[r].iter().copied())
    }
}

pub(crate) fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn axis_taps(in_len: usize, out_len: usize, scale: f64, filter: Filter) -> AxisTaps {
    let mut starts = Vec::with_capacity(out_len + 1);
    let mut index = Vec::new();
    let mut weight = Vec::new();
    let clamp = |i: isize| i.clamp(0, in_len as isize - 1) as usize;
    starts.push(0);
    for o in 0..out_len {
        let center = (o as f64 + 0.5) / scale - 0.5;
        match filter {
            Filter::Bilinear => {
                let x0 = center.floor();
                let frac = center - x0;
                let x0 = x0 as isize;
                index.push(clamp(x0));
                weight.push((1.0 - frac) as f32);
                index.push(clamp(x0 + 1));
                weight.push(frac as f32);
            }
            Filter::Bicubic => {
                let stretch = (1.0 / scale).max(1.0);
                let support = 2.0 * stretch;
                let lo = (center - support).floor() as isize + 1;
                let hi = (center + support).ceil() as isize - 1;
                let raw: Vec<(isize, f64)> = (lo..=hi)
                    .map(|j| (j, cubic((j as f64 - center) / stretch)))
                    .filter(|&(_, w)| w != 0.0)
                    .collect();
                let total: f64 = raw.iter().map(|&(_, w)| w).sum();
                for (j, w) in raw {
                    index.push(clamp(j));
                    weight.push((w / total) as f32);
                }
            }
        }
        starts.push(index.len());
    }
    AxisTaps {
        starts,
        index,
        weight,
    }
}

/// Apply `taps` along the last axis of `rows` rows of length `in_len`.
fn apply_rows(src: &[f32], rows: usize, in_len: usize, taps: &AxisTaps, out_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * out_len];
    for r in 0..rows {
        let s = &src[r * in_len..(r + 1) * in_len];
        let d = &mut out[r * out_len..(r + 1) * out_len];
        for (o, v) in d.iter_mut().enumerate() {
            *v = taps.taps(o).map(|(i, w)| w * s[i]).sum();
        }
    }
    out
}

fn apply_rows_t(g: &[f32], rows: usize, in_len: usize, taps: &AxisTaps, out_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * in_len];
    for r in 0..rows {
        let gr = &g[r * out_len..(r + 1) * out_len];
        let d = &mut out[r * in_len..(r + 1) * in_len];
        for (o, &gv) in gr.iter().enumerate() {
            for (i, w) in taps.taps(o) {
                d[i] += w * gv;
            }
        }
    }
    out
}

/// Apply `taps` along the row axis of `planes` planes of `in_len × width`.
fn apply_cols(src: &[f32], planes: usize, in_len: usize, width: usize, taps: &AxisTaps, out_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; planes * out_len * width];
    for p in 0..planes {
        let s = &src[p * in_len * width..(p + 1) * in_len * width];
        let d = &mut out[p * out_len * width..(p + 1) * out_len * width];
        for o in 0..out_len {
            let line = &mut d[o * width..(o + 1) * width];
            for (i, w) in taps.taps(o) {
                let row = &s[i * width..(i + 1) * width];
                line.iter_mut().zip(row).for_each(|(a, b)| *a += w * b);
            }
        }
    }
    out
}

fn apply_cols_t(g: &[f32], planes: usize, in_len: usize, width: usize, taps: &AxisTaps, out_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; planes * in_len * width];
    for p in 0..planes {
        let gp = &g[p * out_len * width..(p + 1) * out_len * width];
        let d = &mut out[p * in_len * width..(p + 1) * in_len * width];
        for o in 0..out_len {
            let line = &gp[o * width..(o + 1) * width];
            for (i, w) in taps.taps(o) {
                let row = &mut d[i * width..(i + 1) * width];
                row.iter_mut().zip(line).for_each(|(a, b)| *a += w * b);
            }
        }
    }
    out
}

impl Tape {
    /// Resize both spatial axes by `scale` with the given filter.
    pub fn resize(&self, x: &Tensor, scale: Ratio, filter: Filter) -> Result<Tensor> {
        if scale.num == 0 || scale.den == 0 {
            return config("resize: scale must be positive");
        }
        let [_, _, h, w] = x.nchw()?;
        let (ho, wo) = (scale.apply(h), scale.apply(w));
        self.resize_to(x, ho, wo, scale.value(), filter)
    }

    fn resize_to(&self, x: &Tensor, ho: usize, wo: usize, scale: f64, filter: Filter) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if h == 0 || w == 0 || ho == 0 || wo == 0 {
            return config(format!("resize: degenerate size {h}x{w} -> {ho}x{wo}"));
        }
        let planes = b * c;
        let tx = Arc::new(axis_taps(w, wo, scale, filter));
        let ty = Arc::new(axis_taps(h, ho, scale, filter));
        let horiz = apply_rows(x.data(), planes * h, w, &tx, wo);
        let out = apply_cols(&horiz, planes, h, wo, &ty, ho);
        self.record(vec![b, c, ho, wo], out, &[x], move |g, _| {
            let gh = apply_cols_t(g, planes, h, wo, &ty, ho);
            vec![Some(apply_rows_t(&gh, planes * h, w, &tx, wo))]
        })
    }

    pub fn bilinear_resize(&self, x: &Tensor, scale: Ratio) -> Result<Tensor> {
        self.resize(x, scale, Filter::Bilinear)
    }

    pub fn bicubic_resize(&self, x: &Tensor, scale: Ratio) -> Result<Tensor> {
        self.resize(x, scale, Filter::Bicubic)
    }
}
