//! Run configuration and its line-oriented text format.
//!
//! ```text
//! # comments start with '#'
//! run.preset = toy
//! model.dsv_channels = 8
//! train.iterations = 500
//! ```
//!
//! `run.preset` picks the defaults every other key overrides. Unknown or
//! repeated keys are rejected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{config, Error, Result};

/// Channel plan and hyperparameters of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Spatial upscaling factor; only 8 is supported.
    pub scale: usize,
    /// Number of feature aggregators, the last one working at HR.
    pub aggregators: usize,
    pub base_channels: usize,
    pub hr_channels: usize,
    /// Residual-block outputs forwarded to the next stage.
    pub pass_channels: usize,
    /// Residual-block outputs kept as per-aggregator state.
    pub dsv_channels: usize,
    /// Deformable offsets are `tanh(·) × offset_range` pixels.
    pub offset_range: f32,
    /// Side of the centred HR square outside of which the inner
    /// aggregators skip the deformable branch.
    pub fast_region: Option<usize>,
    pub flow_channels: usize,
    /// Flow is `tanh(·) × flow_range` LR pixels.
    pub flow_range: f32,
    pub leaky_slope: f32,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            scale: 8,
            aggregators: 4,
            base_channels: 32,
            hr_channels: 4,
            pass_channels: 24,
            dsv_channels: 8,
            offset_range: 10.0,
            fast_region: None,
            flow_channels: 112,
            flow_range: 10.0,
            leaky_slope: 0.1,
        }
    }

    /// Narrow variant that trains in minutes on one CPU core.
    pub fn toy() -> Self {
        Self {
            base_channels: 16,
            pass_channels: 12,
            dsv_channels: 4,
            offset_range: 2.0,
            flow_channels: 16,
            ..Self::full()
        }
    }

    /// Same configuration with a different pass/state split of the base width.
    pub fn with_dsv_split(&self, pass: usize, dsv: usize) -> Self {
        Self {
            pass_channels: pass,
            dsv_channels: dsv,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 8 {
            return config(format!("model.scale must be 8, got {}", self.scale));
        }
        if self.aggregators < 2 {
            return config("model.aggregators must be at least 2");
        }
        if self.base_channels == 0 || self.hr_channels == 0 || self.flow_channels == 0 {
            return config("channel widths must be positive");
        }
        if self.pass_channels == 0 || self.pass_channels + self.dsv_channels != self.base_channels {
            return config(format!(
                "model.pass_channels ({}) + model.dsv_channels ({}) must equal model.base_channels ({}) with a nonzero pass share",
                self.pass_channels, self.dsv_channels, self.base_channels
            ));
        }
        if !(self.offset_range > 0.0 && self.flow_range > 0.0) {
            return config("offset and flow ranges must be positive");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return config("model.leaky_slope must lie in [0, 1)");
        }
        if let Some(side) = self.fast_region {
            if side == 0 || side % 4 != 0 {
                return config("model.fast_region must be a positive multiple of 4");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_model: f32,
    pub lr_flow: f32,
    pub batch_size: usize,
    pub iterations: usize,
    /// Frames per truncated-backpropagation window.
    pub unroll: usize,
    pub charbonnier_eps: f32,
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f32,
    /// HR training patch side.
    pub patch_size: usize,
    pub fovea_size: usize,
    pub flow_pretrain_iterations: usize,
    pub flow_pretrain_lr: f32,
    /// Largest synthetic displacement used in flow pretraining, LR pixels.
    pub flow_max_shift: f32,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            lr_model: 1e-4,
            lr_flow: 2.5e-5,
            batch_size: 8,
            iterations: 300_000,
            unroll: 10,
            charbonnier_eps: 1e-3,
            seed: 0,
            checkpoint_every: 5_000,
            clip_norm: 10.0,
            patch_size: 256,
            fovea_size: 128,
            flow_pretrain_iterations: 2_000,
            flow_pretrain_lr: 1e-3,
            flow_max_shift: 4.0,
        }
    }

    pub fn toy() -> Self {
        Self {
            lr_model: 2e-3,
            lr_flow: 5e-4,
            batch_size: 1,
            iterations: 1_000,
            seed: 1,
            checkpoint_every: 0,
            patch_size: 64,
            fovea_size: 32,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_model > 0.0 && self.lr_flow > 0.0) {
            return config("learning rates must be positive");
        }
        if self.lr_flow >= self.lr_model {
            return config(format!(
                "train.lr_flow ({}) must be smaller than train.lr_model ({})",
                self.lr_flow, self.lr_model
            ));
        }
        if self.batch_size == 0 || self.unroll == 0 {
            return config("train.batch_size and train.unroll must be positive");
        }
        if self.charbonnier_eps.is_nan() || self.charbonnier_eps <= 0.0 {
            return config("train.charbonnier_eps must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return config("train.clip_norm must be positive");
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(64) {
            return config("train.patch_size must be a positive multiple of 64");
        }
        if self.fovea_size == 0 || self.fovea_size > self.patch_size {
            return config("train.fovea_size must be positive and fit in the patch");
        }
        Ok(())
    }
}

/// Gaze trajectory used during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Raster,
    Horizontal,
    /// Fixed gaze target with Gaussian tracker noise.
    Tracker,
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(Self::Raster),
            "horizontal" => Ok(Self::Horizontal),
            "tracker" => Ok(Self::Tracker),
            other => config(format!("unknown trace kind {other:?} (raster, horizontal, tracker)")),
        }
    }
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raster => "raster",
            Self::Horizontal => "horizontal",
            Self::Tracker => "tracker",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub fovea_size: usize,
    pub trace: TraceKind,
    /// Tracker noise in HR pixels; only meaningful with [`TraceKind::Tracker`].
    pub sigma: Option<f32>,
    pub seed: u64,
    pub write_frames: bool,
}

impl EvalConfig {
    pub fn full() -> Self {
        Self {
            fovea_size: 96,
            trace: TraceKind::Horizontal,
            sigma: None,
            seed: 0,
            write_frames: false,
        }
    }

    pub fn toy() -> Self {
        Self {
            fovea_size: 16,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fovea_size == 0 {
            return config("eval.fovea_size must be positive");
        }
        match (self.trace, self.sigma) {
            (TraceKind::Tracker, Some(s)) if s >= 0.0 && s.is_finite() => Ok(()),
            (TraceKind::Tracker, Some(s)) => config(format!("eval.sigma must be finite and non-negative, got {s}")),
            (TraceKind::Tracker, None) => Err(Error::Usage("the tracker trace needs a sigma".into())),
            (kind, Some(_)) => Err(Error::Usage(format!(
                "sigma only applies to the tracker trace, not {}",
                kind.as_str()
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Full,
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "toy" => Ok(Self::Toy),
            other => config(format!("unknown preset {other:?} (full, toy)")),
        }
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Toy => "toy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Directory of training clips (one sub-directory per clip).
    pub train_dir: Option<PathBuf>,
    /// Directory of evaluation clips.
    pub eval_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, train, eval) = match preset {
            Preset::Full => (ModelConfig::full(), TrainConfig::full(), EvalConfig::full()),
            Preset::Toy => (ModelConfig::toy(), TrainConfig::toy(), EvalConfig::toy()),
        };
        Self {
            preset,
            model,
            train,
            eval,
            train_dir: None,
            eval_dir: None,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Parse the text format. Errors name the offending line and key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config(format!("line {}: expected `section.key = value`", n + 1));
            };
            entries.push((n + 1, key.trim().to_string(), value.trim().to_string()));
        }

        let mut seen = BTreeSet::new();
        for (n, key, _) in &entries {
            if !seen.insert(key.clone()) {
                return config(format!("line {n}: key {key} given twice"));
            }
        }
        let preset = match entries.iter().find(|(_, k, _)| k == "run.preset") {
            Some((_, _, v)) => v.parse()?,
            None => Preset::Full,
        };
        let mut cfg = Self::preset(preset);
        for (n, key, value) in &entries {
            if key == "run.preset" {
                continue;
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {n}: {key}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Assign one key. Used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("expected true or false, got {v:?}")),
            }
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        let (m, t, e) = (&mut self.model, &mut self.train, &mut self.eval);
        match key {
            "model.scale" => m.scale = num(value)?,
            "model.aggregators" => m.aggregators = num(value)?,
            "model.base_channels" => m.base_channels = num(value)?,
            "model.hr_channels" => m.hr_channels = num(value)?,
            "model.pass_channels" => m.pass_channels = num(value)?,
            "model.dsv_channels" => m.dsv_channels = num(value)?,
            "model.offset_range" => m.offset_range = num(value)?,
            "model.fast_region" => {
                m.fast_region = match num::<usize>(value)? {
                    0 => None,
                    s => Some(s),
                }
            }
            "model.flow_channels" => m.flow_channels = num(value)?,
            "model.flow_range" => m.flow_range = num(value)?,
            "model.leaky_slope" => m.leaky_slope = num(value)?,
            "train.lr_model" => t.lr_model = num(value)?,
            "train.lr_flow" => t.lr_flow = num(value)?,
            "train.batch_size" => t.batch_size = num(value)?,
            "train.iterations" => t.iterations = num(value)?,
            "train.unroll" => t.unroll = num(value)?,
            "train.charbonnier_eps" => t.charbonnier_eps = num(value)?,
            "train.seed" => t.seed = num(value)?,
            "train.checkpoint_every" => t.checkpoint_every = num(value)?,
            "train.clip_norm" => t.clip_norm = num(value)?,
            "train.patch_size" => t.patch_size = num(value)?,
            "train.fovea_size" => t.fovea_size = num(value)?,
            "train.flow_pretrain_iterations" => t.flow_pretrain_iterations = num(value)?,
            "train.flow_pretrain_lr" => t.flow_pretrain_lr = num(value)?,
            "train.flow_max_shift" => t.flow_max_shift = num(value)?,
            "eval.fovea_size" => e.fovea_size = num(value)?,
            "eval.trace" => e.trace = value.parse().map_err(|err: Error| err.to_string())?,
            "eval.sigma" => e.sigma = if value.is_empty() { None } else { Some(num(value)?) },
            "eval.seed" => e.seed = num(value)?,
            "eval.write_frames" => e.write_frames = flag(value)?,
            "data.train_dir" => self.train_dir = path(value),
            "data.eval_dir" => self.eval_dir = path(value),
            "output.dir" => self.output_dir = path(value),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Fully resolved configuration in the text format; parses back to `self`.
    pub fn to_text(&self) -> String {
        let (m, t, e) = (&self.model, &self.train, &self.eval);
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("run.preset", self.preset.as_str().into());
        kv("model.scale", m.scale.to_string());
        kv("model.aggregators", m.aggregators.to_string());
        kv("model.base_channels", m.base_channels.to_string());
        kv("model.hr_channels", m.hr_channels.to_string());
        kv("model.pass_channels", m.pass_channels.to_string());
        kv("model.dsv_channels", m.dsv_channels.to_string());
        kv("model.offset_range", m.offset_range.to_string());
        kv("model.fast_region", m.fast_region.unwrap_or(0).to_string());
        kv("model.flow_channels", m.flow_channels.to_string());
        kv("model.flow_range", m.flow_range.to_string());
        kv("model.leaky_slope", m.leaky_slope.to_string());
        kv("train.lr_model", t.lr_model.to_string());
        kv("train.lr_flow", t.lr_flow.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.iterations", t.iterations.to_string());
        kv("train.unroll", t.unroll.to_string());
        kv("train.charbonnier_eps", t.charbonnier_eps.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.checkpoint_every", t.checkpoint_every.to_string());
        kv("train.clip_norm", t.clip_norm.to_string());
        kv("train.patch_size", t.patch_size.to_string());
        kv("train.fovea_size", t.fovea_size.to_string());
        kv("train.flow_pretrain_iterations", t.flow_pretrain_iterations.to_string());
        kv("train.flow_pretrain_lr", t.flow_pretrain_lr.to_string());
        kv("train.flow_max_shift", t.flow_max_shift.to_string());
        kv("eval.fovea_size", e.fovea_size.to_string());
        kv("eval.trace", e.trace.as_str().into());
        kv("eval.sigma", e.sigma.map(|s| s.to_string()).unwrap_or_default());
        kv("eval.seed", e.seed.to_string());
        kv("eval.write_frames", e.write_frames.to_string());
        kv("data.train_dir", p(&self.train_dir));
        kv("data.eval_dir", p(&self.eval_dir));
        kv("output.dir", p(&self.output_dir));
        s
    }
}

/// Model section only, as stored in checkpoint headers.
pub fn model_header(m: &ModelConfig) -> String {
    let mut cfg = RunConfig::preset(Preset::Full);
    cfg.model = m.clone();
    cfg.to_text()
        .lines()
        .filter(|l| l.starts_with("model."))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Inverse of [`model_header`].
pub fn parse_model_header(text: &str) -> Result<ModelConfig> {
    let mut cfg = RunConfig::preset(Preset::Full);
    for line in text.lines().filter(|l| l.starts_with("model.")) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("malformed header line {line:?}")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| Error::Config(format!("checkpoint header {}: {e}", k.trim())))?;
    }
    Ok(cfg.model)
}
