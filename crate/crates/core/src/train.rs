//! Charbonnier training with Adam, truncated unrolls, synthetic flow
//! pretraining and resumable checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fvsr_tensor::{Bound, Checkpoint, Gradients, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{model_header, parse_model_header, ModelConfig, TrainConfig};
use crate::data::{self, FrameSequence};
use crate::error::{config, io_err, usage, Error, Result};
use crate::flow;
use crate::model::Crfp;

/// `mean(sqrt((x̂ − x)² + ε²))`.
pub fn charbonnier_loss(t: &Tape, x_hat: &Tensor, x: &Tensor, eps: f32) -> Result<Tensor> {
    if eps.is_nan() || eps <= 0.0 {
        return config("Charbonnier epsilon must be positive");
    }
    let d = t.sub(x_hat, x)?;
    let e2 = eps * eps;
    let r = t.map(&d, move |v| (v * v + e2).sqrt(), move |v, y| v / y)?;
    Ok(t.mean(&r)?)
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// Update every parameter in `params` for which `lr` returns a rate;
    /// each of them must have a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: impl Fn(&str) -> Option<f32>,
    ) -> Result<()> {
        let names: Vec<String> = params.names().filter(|n| lr(n).is_some()).map(String::from).collect();
        for n in &names {
            if !grads.contains_key(n) {
                return usage(format!("no gradient for parameter {n}"));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for n in names {
            let rate = lr(&n).expect("filtered above");
            let g = grads[&n].data();
            let p = params.get(&n)?;
            let len = p.numel();
            let m = self.m.entry(n.clone()).or_insert_with(|| vec![0.0; len]);
            let v = self.v.entry(n.clone()).or_insert_with(|| vec![0.0; len]);
            let mut new = p.to_vec();
            for i in 0..len {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                new[i] -= rate * mh / (vh.sqrt() + self.eps);
            }
            let shape = p.shape().to_vec();
            params.set(&n, Tensor::from_vec(&shape, new)?)?;
        }
        Ok(())
    }

    fn save_into(&self, ck: &mut Checkpoint) -> Result<()> {
        for (n, m) in &self.m {
            ck.tensors.insert(format!("adam.m.{n}"), Tensor::from_vec(&[m.len()], m.clone())?);
        }
        for (n, v) in &self.v {
            ck.tensors.insert(format!("adam.v.{n}"), Tensor::from_vec(&[v.len()], v.clone())?);
        }
        Ok(())
    }
}

/// Gradients of every registered parameter, by name.
pub fn collect_grads(g: &Gradients) -> BTreeMap<String, Tensor> {
    g.param_names()
        .map(|n| (n.to_string(), g.param(n).expect("name comes from the same map")))
        .collect()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f32) -> Result<f32> {
    let sq: f64 = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum();
    let norm = sq.sqrt() as f32;
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = Tensor::from_vec(g.shape(), g.data().iter().map(|v| v * s).collect())?;
        }
    }
    Ok(norm)
}

/// Cosine annealing from 1 at iteration 0 towards 0 at `total`.
pub fn cosine_factor(iteration: usize, total: usize) -> f32 {
    if total == 0 {
        return 1.0;
    }
    let x = (iteration.min(total) as f64 / total as f64) * std::f64::consts::PI;
    (0.5 * (1.0 + x.cos())) as f32
}

/// Learning-rate rule: `flow.*` at `lr_flow`, everything else at `lr_model`,
/// both scaled by `factor`.
pub fn group_lr(cfg: &TrainConfig, factor: f32) -> impl Fn(&str) -> Option<f32> + '_ {
    move |name| {
        Some(factor * if name.starts_with("flow.") {
            cfg.lr_flow
        } else {
            cfg.lr_model
        })
    }
}

/// Model, optimizer and progress of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Crfp,
    pub adam: Adam,
    pub iteration: usize,
    pub losses: Vec<(usize, f32)>,
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

/// Unrolled loss over `frames` consecutive (LR, fovea, HR) batches, starting
/// from a zero state. Returns the frame-averaged loss tensor.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_loss(
    model: &Crfp,
    t: &Tape,
    p: &Bound,
    lr: &[Tensor],
    fovea: &[Tensor],
    hr: &[Tensor],
    boxes: &[Vec<crate::FoveaBox>],
    eps: f32,
) -> Result<Tensor> {
    let mut state = model.reset_state(&lr[0])?;
    let mut total: Option<Tensor> = None;
    for f in 0..lr.len() {
        let (x_hat, next) = model.step(t, p, &state, &lr[f], &fovea[f], &boxes[f])?;
        let l = charbonnier_loss(t, &x_hat, &hr[f], eps)?;
        total = Some(match total {
            None => l,
            Some(acc) => t.add(&acc, &l)?,
        });
        state = next;
    }
    let total = total.ok_or_else(|| Error::Usage("empty unroll".into()))?;
    Ok(t.scale(&total, 1.0 / lr.len() as f32)?)
}

impl Trainer {
    pub fn new(model: Crfp) -> Self {
        Self {
            model,
            adam: Adam::default(),
            iteration: 0,
            losses: Vec::new(),
        }
    }

    /// One optimization step on a batch drawn from `clips`. Randomness depends
    /// only on `(seed, iteration)`, so a resumed run continues identically.
    pub fn train_step(&mut self, cfg: &TrainConfig, clips: &[FrameSequence]) -> Result<f32> {
        if clips.is_empty() {
            return usage("no training clips");
        }
        let mut rng = iteration_rng(cfg.seed, self.iteration);
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let clip = &clips[rng.gen_range(0..clips.len())];
            if clip.len() < cfg.unroll {
                return config(format!("clip {} has {} frames, the unroll needs {}", clip.id, clip.len(), cfg.unroll));
            }
            let t0 = rng.gen_range(0..=clip.len() - cfg.unroll);
            samples.push(data::sample_training_patch(clip, t0, cfg.unroll, cfg.patch_size, cfg.fovea_size, &mut rng)?);
        }
        let stack = |pick: &dyn Fn(&data::TrainingSample) -> &Tensor| Tensor::concat_batch(&samples.iter().map(|s| pick(s).clone()).collect::<Vec<_>>());
        let mut lr = Vec::with_capacity(cfg.unroll);
        let mut hr = Vec::with_capacity(cfg.unroll);
        let mut fov = Vec::with_capacity(cfg.unroll);
        let mut boxes = Vec::with_capacity(cfg.unroll);
        for f in 0..cfg.unroll {
            lr.push(stack(&|s| &s.lr[f])?);
            hr.push(stack(&|s| &s.hr[f])?);
            fov.push(stack(&|s| &s.fovea[f])?);
            boxes.push(samples.iter().map(|s| s.boxes[f]).collect());
        }

        let tape = Tape::new();
        let p = self.model.params.bind(&tape)?;
        let loss = unrolled_loss(&self.model, &tape, &p, &lr, &fov, &hr, &boxes, cfg.charbonnier_eps)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { iteration: self.iteration });
        }
        let mut grads = collect_grads(&tape.backward(&loss)?);
        drop(p);
        drop(tape);
        clip_global_norm(&mut grads, cfg.clip_norm)?;
        let factor = cosine_factor(self.iteration, cfg.iterations);
        self.adam.step(&mut self.model.params, &grads, group_lr(cfg, factor))?;
        self.losses.push((self.iteration, value));
        self.iteration += 1;
        Ok(value)
    }

    /// Train until `cfg.iterations`, writing checkpoints every
    /// `checkpoint_every` iterations and at the end when `out` is given.
    pub fn train_loop(&mut self, cfg: &TrainConfig, clips: &[FrameSequence], out: Option<&Path>, mut log: impl FnMut(usize, f32)) -> Result<()> {
        while self.iteration < cfg.iterations {
            let loss = self.train_step(cfg, clips)?;
            log(self.iteration - 1, loss);
            if let Some(dir) = out {
                if cfg.checkpoint_every > 0 && self.iteration.is_multiple_of(cfg.checkpoint_every) && self.iteration < cfg.iterations {
                    self.save(&dir.join(format!("checkpoint_{:07}.ckpt", self.iteration)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(&dir.join("final.ckpt"))?;
            let path = dir.join("loss.csv");
            std::fs::write(&path, self.loss_csv()).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// `iteration,loss` lines.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &self.losses {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint {
            header: format!(
                "{}state.iteration = {}\nstate.adam_step = {}\n",
                model_header(&self.model.config),
                self.iteration,
                self.adam.step
            ),
            tensors: BTreeMap::new(),
        };
        for (n, t) in self.model.params.iter() {
            ck.tensors.insert(n.to_string(), t.clone());
        }
        self.adam.save_into(&mut ck)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Ok(ck.save(path)?)
    }

    /// Resume from a checkpoint. With `expected`, the stored model
    /// configuration must match it exactly.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        if !path.is_file() {
            return config(format!("checkpoint {} does not exist", path.display()));
        }
        let ck = Checkpoint::load(path)?;
        let cfg = parse_model_header(&ck.header)?;
        if let Some(exp) = expected {
            if *exp != cfg {
                return config(format!(
                    "checkpoint {} was written for a different model configuration:\n{}",
                    path.display(),
                    model_header(&cfg)
                ));
            }
        }
        let header_value = |key: &str| -> Result<u64> {
            ck.header
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.trim().strip_prefix('=')))
                .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("bad {key} in checkpoint header"))))
                .unwrap_or(Ok(0))
        };
        let iteration = header_value("state.iteration")? as usize;
        let mut params = ParamStore::new();
        let mut adam = Adam {
            step: header_value("state.adam_step")?,
            ..Adam::default()
        };
        for (n, t) in ck.tensors {
            if let Some(k) = n.strip_prefix("adam.m.") {
                adam.m.insert(k.to_string(), t.to_vec());
            } else if let Some(k) = n.strip_prefix("adam.v.") {
                adam.v.insert(k.to_string(), t.to_vec());
            } else {
                params.insert(n, t)?;
            }
        }
        Ok(Self {
            model: Crfp::from_params(cfg, params)?,
            adam,
            iteration,
            losses: Vec::new(),
        })
    }
}

/// Synthetic translation pairs at LR resolution: `x_t(p) = x_prev(p + d)`
/// for a constant sub-pixel `d` with `|d| ≤ max_shift`. The texture is an
/// HR texture degraded ×1/8, so it has the statistics of real LR input.
/// Returns `(x_t, x_prev, d)`.
pub fn translation_pair(size: usize, max_shift: f32, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor, [f32; 2])> {
    let margin = max_shift.ceil() as usize + 2;
    let big = size + 2 * margin;
    let hr = data::synthetic_clip("flow", big * data::SCALE, big * data::SCALE, 1, (0, 0), rng).hr.remove(0);
    let canvas = data::degrade_frame(&hr)?;
    let (r, a) = (max_shift * rng.gen::<f32>().sqrt(), rng.gen_range(0.0..std::f32::consts::TAU));
    // quarter-pixel shifts keep the targets exactly representable
    let q = |v: f32| (v * 4.0).round() / 4.0;
    let mut d = [q(r * a.cos()), q(r * a.sin())];
    if (d[0] * d[0] + d[1] * d[1]).sqrt() > max_shift {
        d = [0.0, 0.0];
    }
    let t = Tape::inference();
    let mut flow = vec![d[0]; big * big];
    flow.extend(std::iter::repeat_n(d[1], big * big));
    let flow = Tensor::from_vec(&[1, 2, big, big], flow)?;
    let moved = t.warp_bilinear(&canvas, &flow)?;
    let x_t = t.crop(&moved, margin, margin, size, size)?;
    let x_prev = t.crop(&canvas, margin, margin, size, size)?;
    Ok((x_t, x_prev, d))
}

/// Mean endpoint error between `flow` (B, 2, H, W) and per-item constants.
fn epe_loss(t: &Tape, flow: &Tensor, targets: &[[f32; 2]]) -> Result<Tensor> {
    let [b, _, h, w] = flow.nchw()?;
    let mut data = Vec::with_capacity(b * 2 * h * w);
    for d in targets {
        data.extend(std::iter::repeat_n(d[0], h * w));
        data.extend(std::iter::repeat_n(d[1], h * w));
    }
    let target = Tensor::from_vec(&[b, 2, h, w], data)?;
    let diff = t.sub(flow, &target)?;
    let sq = t.mul(&diff, &diff)?;
    let (dx, dy) = (t.slice_channels(&sq, 0, 1)?, t.slice_channels(&sq, 1, 1)?);
    let r = t.map(&t.add(&dx, &dy)?, |v| (v + 1e-8).sqrt(), |_, y| 0.5 / y)?;
    Ok(t.mean(&r)?)
}

/// LR side of the synthetic pairs used by [`pretrain_flow`] in the pipeline.
pub const FLOW_PRETRAIN_SIZE: usize = 32;

/// Pretrain the flow estimator on synthetic translations (a fifth of them
/// zero) with an endpoint-error loss. Only `flow.*` is updated.
pub fn pretrain_flow(model: &mut Crfp, cfg: &TrainConfig, size: usize, mut log: impl FnMut(usize, f32)) -> Result<()> {
    let mut adam = Adam::default();
    let batch = 4;
    for it in 0..cfg.flow_pretrain_iterations {
        let mut rng = iteration_rng(cfg.seed ^ 0xF10F, it);
        let mut xs = Vec::new();
        let mut ps = Vec::new();
        let mut ds = Vec::new();
        for k in 0..batch {
            let shift = if k == 0 && it % 5 == 0 { 0.0 } else { cfg.flow_max_shift };
            let (a, b, d) = translation_pair(size, shift, &mut rng)?;
            xs.push(a);
            ps.push(b);
            ds.push(d);
        }
        let tape = Tape::new();
        let p = model.params.bind(&tape)?;
        let f = flow::flow_forward(&tape, &p, &Tensor::concat_batch(&xs)?, &Tensor::concat_batch(&ps)?, model.config.flow_range)?;
        let loss = epe_loss(&tape, &f, &ds)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        let mut grads: BTreeMap<_, _> = collect_grads(&tape.backward(&loss)?)
            .into_iter()
            .filter(|(n, _)| n.starts_with("flow."))
            .collect();
        clip_global_norm(&mut grads, cfg.clip_norm)?;
        let lr = cfg.flow_pretrain_lr;
        adam.step(&mut model.params, &grads, |n| n.starts_with("flow.").then_some(lr))?;
        log(it, value);
    }
    Ok(())
}

/// Mean endpoint error on held-out translations and mean flow magnitude on
/// identical frame pairs, over `n` pairs of side `size`.
pub fn flow_quality(model: &Crfp, size: usize, max_shift: f32, n: usize, seed: u64) -> Result<(f64, f64)> {
    let t = Tape::inference();
    let p = model.params.bind(&t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut epe, mut selfmag) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (a, b, d) = translation_pair(size, max_shift, &mut rng)?;
        let f = flow::flow_forward(&t, &p, &a, &b, model.config.flow_range)?;
        epe += mean_epe(&f, d);
        let f0 = flow::flow_forward(&t, &p, &b, &b, model.config.flow_range)?;
        selfmag += mean_epe(&f0, [0.0, 0.0]);
    }
    Ok((epe / n as f64, selfmag / n as f64))
}

fn mean_epe(f: &Tensor, d: [f32; 2]) -> f64 {
    let hw = f.numel() / 2;
    let v = f.data();
    (0..hw)
        .map(|i| {
            let ex = (v[i] - d[0]) as f64;
            let ey = (v[hw + i] - d[1]) as f64;
            (ex * ex + ey * ey).sqrt()
        })
        .sum::<f64>()
        / hw as f64
}
