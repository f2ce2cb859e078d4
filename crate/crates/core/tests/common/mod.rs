//! Helpers shared by the integration tests: brute-force metric oracles and
//! small models.
#![allow(dead_code)]

use std::collections::HashSet;

use fvsr_core::data::{degrade_sequence, synthetic_clip, FrameSequence};
use fvsr_core::foveation::GazeTrace;
use fvsr_core::metrics::{build_region_masks, Mask, Region};
use fvsr_core::{Crfp, FoveaBox, ModelConfig};
use fvsr_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PixelSet = HashSet<(usize, usize)>;

pub fn image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(&[1, c, h, w], 0.0, 1.0, rng)
}

/// `a` plus uniform noise of amplitude `amp`, clamped to [0, 1].
pub fn noisy(a: &Tensor, amp: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let d = a.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect();
    Tensor::from_vec(a.shape(), d).unwrap()
}

pub fn box_set(b: &FoveaBox) -> PixelSet {
    (b.y0..b.y0 + b.side).flat_map(|y| (b.x0..b.x0 + b.side).map(move |x| (x, y))).collect()
}

pub fn mask_set(m: &Mask) -> PixelSet {
    (0..m.height).flat_map(|y| (0..m.width).map(move |x| (x, y))).filter(|&(x, y)| m.get(x, y)).collect()
}

/// Union of three random boxes, as a mask and as a pixel set built separately.
pub fn random_mask(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (Mask, PixelSet) {
    let mut m = Mask::empty(w, h);
    let mut set = PixelSet::new();
    for _ in 0..3 {
        let side = rng.gen_range(4..=w.min(h));
        let b = FoveaBox {
            x0: rng.gen_range(0..=w - side),
            y0: rng.gen_range(0..=h - side),
            side,
        };
        m.add_box(&b);
        set.extend(box_set(&b));
    }
    (m, set)
}

fn px(t: &Tensor, c: usize, y: usize, x: usize) -> f64 {
    let [_, _, h, w] = t.nchw().unwrap();
    t.data()[(c * h + y) * w + x] as f64
}

pub fn psnr_oracle(a: &Tensor, b: &Tensor, pixels: &PixelSet) -> f64 {
    let c = a.shape()[1];
    let mut errs = Vec::new();
    for &(x, y) in pixels {
        for ch in 0..c {
            errs.push((px(a, ch, y, x) - px(b, ch, y, x)).powi(2));
        }
    }
    errs.sort_by(f64::total_cmp);
    let mse = errs.iter().sum::<f64>() / errs.len() as f64;
    -10.0 * mse.log10()
}

/// Direct 11×11 windowed SSIM with a non-separable Gaussian (σ = 1.5) at one
/// centre, averaged over channels.
pub fn ssim_at(a: &Tensor, b: &Tensor, cx: usize, cy: usize) -> f64 {
    let c = a.shape()[1];
    let mut weights = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (u, w) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(u * u + w * w) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    for ch in 0..c {
        let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (dy, row) in weights.iter().enumerate() {
            for (dx, &g) in row.iter().enumerate() {
                let g = g / total;
                let (y, x) = (cy + dy - 5, cx + dx - 5);
                let (va, vb) = (px(a, ch, y, x), px(b, ch, y, x));
                ma += g * va;
                mb += g * vb;
                saa += g * va * va;
                sbb += g * vb * vb;
                sab += g * va * vb;
            }
        }
        let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
        let (c1, c2) = (1e-4, 9e-4);
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / c as f64
}

/// Mean SSIM over the pixels of `pixels` whose window fits the image.
pub fn ssim_oracle(a: &Tensor, b: &Tensor, pixels: &PixelSet) -> Option<f64> {
    let [_, _, h, w] = a.nchw().unwrap();
    let valid: Vec<_> = pixels.iter().filter(|&&(x, y)| x >= 5 && y >= 5 && x + 5 < w && y + 5 < h).collect();
    if valid.is_empty() {
        return None;
    }
    Some(valid.iter().map(|&&(x, y)| ssim_at(a, b, x, y)).sum::<f64>() / valid.len() as f64)
}

/// Region masks of every frame compared with sets built from the boxes.
pub fn regions_match_sets(trace: &GazeTrace) -> Result<(), String> {
    let all: PixelSet = (0..trace.height).flat_map(|y| (0..trace.width).map(move |x| (x, y))).collect();
    for t in 0..trace.len() {
        let masks = build_region_masks(trace, t).map_err(|e| e.to_string())?;
        let current = box_set(&trace.boxes[t]);
        let earlier: PixelSet = trace.boxes[..t].iter().flat_map(box_set).collect();
        let past: PixelSet = earlier.difference(&current).copied().collect();
        for (region, want) in [(Region::Fovea, &current), (Region::PastFovea, &past), (Region::Whole, &all)] {
            if &mask_set(masks.get(region)) != want {
                return Err(format!("{region} mask differs at frame {t}"));
            }
        }
    }
    Ok(())
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        pass_channels: 6,
        dsv_channels: 2,
        flow_channels: 4,
        ..ModelConfig::toy()
    }
}

/// Freshly initialized model with every parameter nudged, so zero biases do
/// not mask anything.
pub fn jittered(cfg: ModelConfig, seed: u64) -> Crfp {
    let mut m = Crfp::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let names: Vec<String> = m.params.names().map(str::to_string).collect();
    for n in names {
        let p = m.params.get(&n).unwrap();
        let data = p.data().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        let p = Tensor::from_vec(p.shape(), data).unwrap();
        m.params.set(&n, p).unwrap();
    }
    m
}

/// 64×64 HR clip drifting one pixel per frame diagonally.
pub fn moving_clip(frames: usize, seed: u64) -> FrameSequence {
    degrade_sequence(synthetic_clip("c", 64, 64, frames, (1, 1), &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}
