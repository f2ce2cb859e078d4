//! Gaze sampling and fovea-box geometry. All coordinates are HR pixels.

use std::fmt::Write as _;
use std::path::Path;

use fvsr_tensor::Window;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config, io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Square fovea region: columns `x0..x0+side`, rows `y0..y0+side`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FoveaBox {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

impl FoveaBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x0 + self.side).contains(&x) && (self.y0..self.y0 + self.side).contains(&y)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 + self.side <= width && self.y0 + self.side <= height
    }

    pub fn window(&self) -> Window {
        Window {
            y0: self.y0,
            x0: self.x0,
        }
    }
}

/// `mu` plus independent N(0, σ²) jitter per axis, rounded to whole pixels.
///
/// Normal deviates come from `rand_distr::Normal` (ziggurat) driven by the
/// caller's ChaCha8 stream.
pub fn sample_gaze(mu: Point, sigma: f64, rng: &mut ChaCha8Rng) -> Point {
    if sigma == 0.0 {
        return Point {
            x: mu.x.round(),
            y: mu.y.round(),
        };
    }
    let n = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let dx = n.sample(rng);
    let dy = n.sample(rng);
    Point {
        x: (mu.x + dx).round(),
        y: (mu.y + dy).round(),
    }
}

/// Box of `side` centred on `p`, moved the least distance needed to fit a
/// `width × height` frame.
pub fn clamp_crop(width: usize, height: usize, p: Point, side: usize) -> Result<FoveaBox> {
    if side == 0 || side > width || side > height {
        return config(format!("fovea side {side} does not fit a {width}x{height} frame"));
    }
    let place = |c: f64, extent: usize| -> usize {
        let lo = (c - side as f64 / 2.0).round();
        lo.clamp(0.0, (extent - side) as f64) as usize
    };
    Ok(FoveaBox {
        x0: place(p.x, width),
        y0: place(p.y, height),
        side,
    })
}

/// Realized fovea boxes of a clip, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeTrace {
    pub width: usize,
    pub height: usize,
    /// Intended centres; empty for purely geometric trajectories.
    pub centers: Vec<Point>,
    pub sigma: f64,
    pub seed: u64,
    pub boxes: Vec<FoveaBox>,
}

impl GazeTrace {
    fn geometric(width: usize, height: usize, boxes: Vec<FoveaBox>) -> Self {
        Self {
            width,
            height,
            centers: Vec::new(),
            sigma: 0.0,
            seed: 0,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// One line per frame: `frame_index x0 y0 side`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, b) in self.boxes.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", b.x0, b.y0, b.side);
        }
        s
    }

    /// Parse a trace file for a `width × height` frame; every box must fit.
    pub fn from_text(text: &str, width: usize, height: usize) -> Result<Self> {
        let mut boxes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Usage(format!("trace line {}: expected four integers", n + 1)))?;
            let &[idx, x0, y0, side] = f.as_slice() else {
                return Err(Error::Usage(format!("trace line {}: expected four integers", n + 1)));
            };
            if idx != boxes.len() {
                return Err(Error::Usage(format!(
                    "trace line {}: frame index {idx}, expected {}",
                    n + 1,
                    boxes.len()
                )));
            }
            let b = FoveaBox { x0, y0, side };
            if side == 0 || !b.fits(width, height) {
                return Err(Error::Usage(format!(
                    "trace line {}: box {b:?} leaves the {width}x{height} frame",
                    n + 1
                )));
            }
            boxes.push(b);
        }
        Ok(Self::geometric(width, height, boxes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path, width: usize, height: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text, width, height)
    }
}

/// Non-overlapping left-to-right, top-to-bottom sweep wrapping after the last
/// cell. Rows use a ceil count with the last row clamped to the bottom edge;
/// columns use a floor count at stride `side`.
pub fn raster_trajectory(width: usize, height: usize, side: usize, n_frames: usize) -> Result<GazeTrace> {
    clamp_crop(width, height, Point { x: 0.0, y: 0.0 }, side)?;
    let cols = width / side;
    let rows = height.div_ceil(side);
    let cells = cols * rows;
    let boxes = (0..n_frames)
        .map(|i| {
            let k = i % cells;
            FoveaBox {
                x0: (k % cols) * side,
                y0: ((k / cols) * side).min(height - side),
                side,
            }
        })
        .collect();
    Ok(GazeTrace::geometric(width, height, boxes))
}

/// Equally spaced boxes from the leftmost to the rightmost valid position,
/// all with origin row `y0` (clamped).
pub fn horizontal_trajectory(width: usize, height: usize, side: usize, n_frames: usize, y0: usize) -> Result<GazeTrace> {
    clamp_crop(width, height, Point { x: 0.0, y: 0.0 }, side)?;
    let y0 = y0.min(height - side);
    let span = (width - side) as f64;
    let boxes = (0..n_frames)
        .map(|k| {
            let x0 = if n_frames == 1 {
                0
            } else {
                (k as f64 * span / (n_frames - 1) as f64).round() as usize
            };
            FoveaBox { x0, y0, side }
        })
        .collect();
    Ok(GazeTrace::geometric(width, height, boxes))
}

/// Fixed intended centre with per-frame Gaussian jitter, replayable from `seed`.
pub fn tracker_trajectory(
    width: usize,
    height: usize,
    side: usize,
    n_frames: usize,
    mu: Point,
    sigma: f64,
    seed: u64,
) -> Result<GazeTrace> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return config(format!("tracker sigma must be finite and non-negative, got {sigma}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = (0..n_frames)
        .map(|_| clamp_crop(width, height, sample_gaze(mu, sigma, &mut rng), side))
        .collect::<Result<_>>()?;
    Ok(GazeTrace {
        width,
        height,
        centers: vec![mu; n_frames],
        sigma,
        seed,
        boxes,
    })
}
