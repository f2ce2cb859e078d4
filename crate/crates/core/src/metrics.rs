//! Region-masked PSNR and SSIM, the three evaluation regions and CSV reports.
//!
//! Images are (1, C, H, W) or (C, H, W) tensors with peak value 1. Arithmetic
//! is done in `f64`.

use std::fmt::{self, Write as _};

use fvsr_tensor::Tensor;

use crate::error::{usage, Error, Result};
use crate::foveation::{FoveaBox, GazeTrace};

pub const PSNR_CAP: f64 = 99.0;
const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Binary HR-sized pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_box(width: usize, height: usize, b: &FoveaBox) -> Self {
        let mut m = Self::empty(width, height);
        m.add_box(b);
        m
    }

    pub fn add_box(&mut self, b: &FoveaBox) {
        for y in b.y0..(b.y0 + b.side).min(self.height) {
            for x in b.x0..(b.x0 + b.side).min(self.width) {
                self.bits[y * self.width + x] = true;
            }
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// `self ∖ other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Fovea,
    PastFovea,
    Whole,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Fovea, Region::PastFovea, Region::Whole];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Fovea => "fovea",
            Region::PastFovea => "past_fovea",
            Region::Whole => "whole",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct RegionMasks {
    pub fovea: Mask,
    /// Union of all earlier boxes minus the current one.
    pub past_fovea: Mask,
    pub whole: Mask,
}

impl RegionMasks {
    pub fn get(&self, r: Region) -> &Mask {
        match r {
            Region::Fovea => &self.fovea,
            Region::PastFovea => &self.past_fovea,
            Region::Whole => &self.whole,
        }
    }
}

pub fn build_region_masks(trace: &GazeTrace, t: usize) -> Result<RegionMasks> {
    let (w, h) = (trace.width, trace.height);
    let Some(current) = trace.boxes.get(t) else {
        return usage(format!("frame {t} is beyond a trace of {} frames", trace.len()));
    };
    let fovea = Mask::from_box(w, h, current);
    let mut past = Mask::empty(w, h);
    for b in &trace.boxes[..t] {
        past.add_box(b);
    }
    Ok(RegionMasks {
        past_fovea: past.minus(&fovea),
        fovea,
        whole: Mask::full(w, h),
    })
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [1, c, h, w] | [c, h, w] => Ok((c, h, w)),
        ref s => usage(format!("expected an image tensor, got shape {s:?}")),
    }
}

fn check_pair(a: &Tensor, b: &Tensor, mask: &Mask) -> Result<(usize, usize, usize)> {
    let (c, h, w) = chw(a)?;
    if chw(b)? != (c, h, w) {
        return usage(format!("image shapes differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if (mask.width, mask.height) != (w, h) {
        return usage(format!("mask is {}x{}, images are {w}x{h}", mask.width, mask.height));
    }
    Ok((c, h, w))
}

/// `10·log10(1 / MSE)` over the masked pixels of every channel, capped at 99 dB.
pub fn masked_psnr(a: &Tensor, b: &Tensor, mask: &Mask) -> Result<f64> {
    let (c, h, w) = check_pair(a, b, mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::UndefinedRegion("PSNR over an empty mask".into()));
    }
    let (da, db) = (a.data(), b.data());
    let mut sum = 0.0f64;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let i = (ch * h + y) * w + x;
                    let d = da[i] as f64 - db[i] as f64;
                    sum += d * d;
                }
            }
        }
    }
    Ok(psnr_from_mse(sum / (n * c) as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> [f64; WIN] {
    let mut g = [0.0; WIN];
    let r = (WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Per-pixel SSIM averaged over channels. Pixels closer than 5 px to the
/// border, where the 11×11 window does not fit, hold `None`.
#[derive(Clone, Debug)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Option<f64>>,
}

impl SsimMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[y * self.width + x]
    }

    /// Number of pixels whose SSIM is defined and exceeds `threshold`.
    pub fn area_above(&self, threshold: f64) -> usize {
        self.values.iter().filter(|v| v.is_some_and(|v| v > threshold)).count()
    }
}

/// Separable "valid" Gaussian filtering of a plane; output index (y, x)
/// corresponds to centre (y + 5, x + 5).
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - WIN, w + 1 - WIN);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WIN).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim_map(a: &Tensor, b: &Tensor) -> Result<SsimMap> {
    let (c, h, w) = chw(a)?;
    if chw(b)? != (c, h, w) {
        return usage(format!("image shapes differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let mut values = vec![None; h * w];
    if h < WIN || w < WIN {
        return Ok(SsimMap { width: w, height: h, values });
    }
    let g = gaussian_window();
    let (oh, ow) = (h + 1 - WIN, w + 1 - WIN);
    let mut acc = vec![0.0f64; oh * ow];
    for ch in 0..c {
        let pa: Vec<f64> = a.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let aa = filter_valid(&prod(&pa, &pa), h, w, &g);
        let bb = filter_valid(&prod(&pb, &pb), h, w, &g);
        let ab = filter_valid(&prod(&pa, &pb), h, w, &g);
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc[i] += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    let r = WIN / 2;
    for y in 0..oh {
        for x in 0..ow {
            values[(y + r) * w + x + r] = Some(acc[y * ow + x] / c as f64);
        }
    }
    Ok(SsimMap { width: w, height: h, values })
}

/// Mean SSIM over window centres inside `mask` whose 11×11 window fits the image.
pub fn masked_ssim(a: &Tensor, b: &Tensor, mask: &Mask) -> Result<f64> {
    check_pair(a, b, mask)?;
    ssim_over(&ssim_map(a, b)?, mask)
}

pub fn ssim_over(map: &SsimMap, mask: &Mask) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..map.height {
        for x in 0..map.width {
            if let (true, Some(v)) = (mask.get(x, y), map.get(x, y)) {
                sum += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedRegion(
            "no SSIM window centre lies inside the region".into(),
        ));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub clip: String,
    pub frame: usize,
    pub region: Region,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-clip, per-region mean over frames where the region was defined.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub clip: String,
    pub region: Region,
    pub psnr: f64,
    pub ssim: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn extend(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
    }

    /// Aggregates in order of first appearance of each clip, regions in
    /// [`Region::ALL`] order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut clips: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !clips.contains(&r.clip.as_str()) {
                clips.push(&r.clip);
            }
        }
        let mut out = Vec::new();
        for clip in clips {
            for region in Region::ALL {
                let sel: Vec<_> = self.rows.iter().filter(|r| r.clip == clip && r.region == region).collect();
                if sel.is_empty() {
                    continue;
                }
                let n = sel.len() as f64;
                out.push(Aggregate {
                    clip: clip.to_string(),
                    region,
                    psnr: sel.iter().map(|r| r.psnr).sum::<f64>() / n,
                    ssim: sel.iter().map(|r| r.ssim).sum::<f64>() / n,
                    frames: sel.len(),
                });
            }
        }
        out
    }

    /// Mean of the per-clip aggregates for `region`, if any clip has it.
    pub fn mean(&self, region: Region) -> Option<(f64, f64)> {
        let a: Vec<_> = self.aggregates().into_iter().filter(|a| a.region == region).collect();
        (!a.is_empty()).then(|| {
            let n = a.len() as f64;
            (a.iter().map(|x| x.psnr).sum::<f64>() / n, a.iter().map(|x| x.ssim).sum::<f64>() / n)
        })
    }

    /// `clip,frame,region,psnr,ssim` rows followed by `mean` rows per clip and region.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip,frame,region,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.clip, r.frame, r.region, r.psnr, r.ssim);
        }
        for a in self.aggregates() {
            let _ = writeln!(s, "{},mean,{},{:.6},{:.6}", a.clip, a.region, a.psnr, a.ssim);
        }
        s
    }
}

/// Rows for every frame and every defined region of one clip.
pub fn evaluate_clip(clip: &str, outputs: &[Tensor], truth: &[Tensor], trace: &GazeTrace) -> Result<MetricReport> {
    if outputs.len() != truth.len() || outputs.len() != trace.len() {
        return usage(format!(
            "{} outputs, {} reference frames and {} trace entries",
            outputs.len(),
            truth.len(),
            trace.len()
        ));
    }
    let mut report = MetricReport::default();
    for (t, (o, g)) in outputs.iter().zip(truth).enumerate() {
        let masks = build_region_masks(trace, t)?;
        let map = ssim_map(o, g)?;
        for region in Region::ALL {
            let mask = masks.get(region);
            let psnr = match masked_psnr(o, g, mask) {
                Err(Error::UndefinedRegion(_)) => continue,
                r => r?,
            };
            let ssim = match ssim_over(&map, mask) {
                Err(Error::UndefinedRegion(_)) => continue,
                r => r?,
            };
            report.rows.push(MetricRow {
                clip: clip.to_string(),
                frame: t,
                region,
                psnr,
                ssim,
            });
        }
    }
    Ok(report)
}
