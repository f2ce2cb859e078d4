//! Clip loading, 8× bicubic degradation, training patches and image output.

use std::path::{Path, PathBuf};

use fvsr_tensor::{Ratio, Tape, Tensor, Window};
use image::{ImageReader, Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config, io_err, Error, Result};
use crate::foveation::FoveaBox;

pub const SCALE: usize = 8;

/// Frames of one clip as (1, 3, H, W) tensors in [0, 1].
#[derive(Clone, Debug)]
pub struct FrameSequence {
    pub id: String,
    pub hr: Vec<Tensor>,
    /// Bicubic ×1/8 of `hr`; empty until [`degrade_sequence`].
    pub lr: Vec<Tensor>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// (height, width) of the HR frames.
    pub fn hr_dims(&self) -> (usize, usize) {
        let s = self.hr[0].shape();
        (s[2], s[3])
    }
}

fn decode(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(image_to_tensor(&img))
}

pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data).expect("sizes agree")
}

/// 8-bit quantization with round-half-away-from-zero after clamping to [0, 1].
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    let (c, h, w) = match *s {
        [1, c, h, w] | [c, h, w] => (c, h, w),
        _ => return config(format!("cannot write a tensor of shape {s:?} as an image")),
    };
    if c != 3 {
        return config(format!("images need 3 channels, got {c}"));
    }
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| (d[(ch * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([at(0), at(1), at(2)])
    }))
}

/// Files of `dir` in lexicographic order, hidden entries skipped.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Every image in `dir`, in filename order. All frames must share dimensions.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no frames", dir.display())));
    }
    let mut hr = Vec::with_capacity(files.len());
    for f in &files {
        let t = decode(f)?;
        if let Some(first) = hr.first() {
            let first: &Tensor = first;
            if first.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "{}: frame is {:?}, earlier frames are {:?}",
                    f.display(),
                    t.shape(),
                    first.shape()
                )));
            }
        }
        hr.push(t);
    }
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(FrameSequence { id, hr, lr: Vec::new() })
}

/// Clips under `root`: each sub-directory is one clip, in name order. A
/// directory holding frames directly is a single clip.
pub fn load_clips(root: &Path) -> Result<Vec<FrameSequence>> {
    if !root.is_dir() {
        return config(format!("dataset directory {} does not exist", root.display()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Ok(vec![load_sequence(root)?]);
    }
    dirs.iter().map(|d| load_sequence(d)).collect()
}

/// Bicubic ×1/8 of one HR frame.
pub fn degrade_frame(hr: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = hr.nchw()?;
    if h % SCALE != 0 || w % SCALE != 0 {
        return config(format!("HR frame {w}x{h} is not divisible by {SCALE}"));
    }
    Ok(Tape::inference().bicubic_resize(hr, Ratio::new(1, SCALE))?)
}

pub fn degrade_sequence(mut seq: FrameSequence) -> Result<FrameSequence> {
    seq.lr = seq.hr.iter().map(degrade_frame).collect::<Result<_>>()?;
    Ok(seq)
}

/// HR crop of `frame` at `b`.
pub fn crop_box(frame: &Tensor, b: &FoveaBox) -> Result<Tensor> {
    Ok(Tape::inference().crop_windows(
        frame,
        &[Window {
            y0: b.y0,
            x0: b.x0,
        }],
        b.side,
    )?)
}

/// Consecutive frames cut from one clip at a shared random patch position.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub hr: Vec<Tensor>,
    pub lr: Vec<Tensor>,
    pub fovea: Vec<Tensor>,
    /// Fovea boxes in patch coordinates.
    pub boxes: Vec<FoveaBox>,
}

/// `window` frames starting at `t`, a `patch`-sized HR crop shared across
/// them, and an independent uniformly placed `fovea`-sized box per frame.
pub fn sample_training_patch(
    seq: &FrameSequence,
    t: usize,
    window: usize,
    patch: usize,
    fovea: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    if t + window > seq.len() || window == 0 {
        return config(format!("frames {t}..{} exceed a clip of {}", t + window, seq.len()));
    }
    let (h, w) = seq.hr_dims();
    if patch > h || patch > w || !patch.is_multiple_of(SCALE) {
        return config(format!("{patch}px patches do not fit {w}x{h} frames"));
    }
    if fovea == 0 || fovea > patch {
        return config(format!("fovea side {fovea} does not fit a {patch}px patch"));
    }
    let y0 = rng.gen_range(0..=h - patch);
    let x0 = rng.gen_range(0..=w - patch);
    let tape = Tape::inference();
    let mut s = TrainingSample {
        hr: Vec::with_capacity(window),
        lr: Vec::with_capacity(window),
        fovea: Vec::with_capacity(window),
        boxes: Vec::with_capacity(window),
    };
    for frame in &seq.hr[t..t + window] {
        let hr = tape.crop(frame, y0, x0, patch, patch)?;
        let b = FoveaBox {
            x0: rng.gen_range(0..=patch - fovea),
            y0: rng.gen_range(0..=patch - fovea),
            side: fovea,
        };
        s.fovea.push(crop_box(&hr, &b)?);
        s.lr.push(degrade_frame(&hr)?);
        s.hr.push(hr);
        s.boxes.push(b);
    }
    Ok(s)
}

pub fn write_frame(frame: &Tensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    tensor_to_image(frame)?
        .save(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}

pub fn write_report(report: &crate::metrics::MetricReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv()).map_err(io_err(path))
}

/// Random multi-scale texture clip of `frames` frames. The texture moves by
/// `shift` whole HR pixels per frame; `(0, 0)` gives a static clip.
pub fn synthetic_clip(id: &str, width: usize, height: usize, frames: usize, shift: (i32, i32), rng: &mut ChaCha8Rng) -> FrameSequence {
    let margin = frames * (shift.0.unsigned_abs().max(shift.1.unsigned_abs()) as usize);
    let (cw, ch) = (width + 2 * margin, height + 2 * margin);
    let canvas = texture(cw, ch, rng);
    let hr = (0..frames)
        .map(|f| {
            let ox = (margin as i64 + shift.0 as i64 * f as i64) as usize;
            let oy = (margin as i64 + shift.1 as i64 * f as i64) as usize;
            let mut data = Vec::with_capacity(3 * width * height);
            for c in 0..3 {
                for y in 0..height {
                    let row = (c * ch + oy + y) * cw + ox;
                    data.extend_from_slice(&canvas[row..row + width]);
                }
            }
            Tensor::from_vec(&[1, 3, height, width], data).expect("sizes agree")
        })
        .collect();
    FrameSequence {
        id: id.to_string(),
        hr,
        lr: Vec::new(),
    }
}

/// Per-pixel noise over value noise at cell sizes 4..32, quantized to 8 bits
/// so clips survive a PNG round trip unchanged. The per-pixel layer is
/// invisible after 8× degradation; only the fovea can supply it.
fn texture(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * w * h];
    let octaves = [(1usize, 0.35f32), (4, 0.2), (8, 0.2), (16, 0.15), (32, 0.1)];
    for c in 0..3 {
        for &(cell, amp) in &octaves {
            let gw = w / cell + 2;
            let gh = h / cell + 2;
            let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for y in 0..h {
                let fy = y as f32 / cell as f32;
                let (iy, ty) = (fy as usize, fy.fract());
                for x in 0..w {
                    let fx = x as f32 / cell as f32;
                    let (ix, tx) = (fx as usize, fx.fract());
                    let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                    let v = (1.0 - ty) * ((1.0 - tx) * g(iy, ix) + tx * g(iy, ix + 1))
                        + ty * ((1.0 - tx) * g(iy + 1, ix) + tx * g(iy + 1, ix + 1));
                    out[(c * h + y) * w + x] += amp * v;
                }
            }
        }
    }
    for v in &mut out {
        *v = ((0.5 + 0.5 * *v).clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}

/// Write every HR frame of `seq` as `dir/{index:08}.png`.
pub fn write_sequence(seq: &FrameSequence, dir: &Path) -> Result<()> {
    for (i, f) in seq.hr.iter().enumerate() {
        write_frame(f, &dir.join(format!("{i:08}.png")))?;
    }
    Ok(())
}
