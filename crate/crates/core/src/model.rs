//! The recurrent CRFP network.
//!
//! Per frame: an LR encoder lifts the frame to 2× LR features; the first
//! `L − 1` feature aggregators refine them using the previous frame's
//! fovea-fused feedback (down-sampled by a tied unshuffle + conv block), the
//! feedback warped by the estimated flow, and a per-aggregator state; the last
//! aggregator runs at HR after ×4 pixel-shuffle up-sampling; the output block
//! fuses the encoded fovea and renders a residual over the bilinear ×8 frame.

use fvsr_tensor::{Bound, ParamStore, Ratio, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{config, usage, Result};
use crate::flow;
use crate::foveation::FoveaBox;
use crate::layers::{conv, conv_leaky, conv_size, init3};

/// Per-clip temporal state.
#[derive(Clone, Debug)]
pub struct RecurrentState {
    /// Fovea-fused feature of the previous frame, (B, hr, H, W).
    pub feedback: Tensor,
    /// State vector of every aggregator; zero channels when disabled.
    pub dsv: Vec<Tensor>,
    /// Previous LR frame, (B, 3, h, w).
    pub prev_lr: Tensor,
    /// Fovea boxes used so far, one list per frame.
    pub boxes: Vec<Vec<FoveaBox>>,
}

impl RecurrentState {
    /// Same values with every tensor cut loose from its tape.
    pub fn detach(&self) -> Self {
        Self {
            feedback: self.feedback.detach(),
            dsv: self.dsv.iter().map(Tensor::detach).collect(),
            prev_lr: self.prev_lr.detach(),
            boxes: self.boxes.clone(),
        }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        std::iter::once(&self.feedback)
            .chain(&self.dsv)
            .chain(std::iter::once(&self.prev_lr))
            .map(|t| t.shape().to_vec())
            .collect()
    }
}

/// Outputs of one feature aggregator.
pub struct FaOutput {
    pub h: Tensor,
    pub d: Tensor,
    /// `None` when the configuration has no state channels.
    pub dsv: Option<Tensor>,
}

/// Inputs of one feature aggregator, all at its working resolution.
pub struct FaInputs<'a> {
    pub h: &'a Tensor,
    pub feedback: &'a Tensor,
    pub warped: &'a Tensor,
    /// Flow already scaled to this resolution's pixels.
    pub flow: &'a Tensor,
    pub d_prev: &'a Tensor,
    pub dsv: Option<&'a Tensor>,
}

#[derive(Clone, Debug)]
pub struct Crfp {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const P: &str = "crfp";

impl Crfp {
    /// Fresh model with fan-in uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, cout, cin) in crfp_layers(&config) {
            init3(&mut params, &name, cout, cin, &mut rng)?;
        }
        flow::build_flow_net(&mut params, config.flow_channels, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Model with the given parameters; every expected tensor must be present
    /// with the expected shape and nothing else.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(cfg.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| crate::Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != t.shape() {
                return config(format!(
                    "parameter {name} has shape {:?}, the configuration needs {:?}",
                    got.shape(),
                    t.shape()
                ));
            }
        }
        if params.len() != reference.params.len() {
            let extra = params.names().find(|n| !reference.params.contains(n)).unwrap_or("?");
            return config(format!("checkpoint has unexpected parameter {extra}"));
        }
        Ok(Self { config: cfg, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Parameters excluding the input slices that read the state vectors.
    pub fn forward_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| !n.contains(".c_in_dsv."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Zero state for a clip whose first LR frame is `first_lr`.
    pub fn reset_state(&self, first_lr: &Tensor) -> Result<RecurrentState> {
        let [b, c, h, w] = first_lr.nchw()?;
        if c != 3 {
            return config(format!("LR frames need 3 channels, got {c}"));
        }
        let cfg = &self.config;
        let (hh, ww) = (h * cfg.scale, w * cfg.scale);
        let dsv = (0..cfg.aggregators)
            .map(|l| {
                if l + 1 < cfg.aggregators {
                    Tensor::zeros(&[b, cfg.dsv_channels, 2 * h, 2 * w])
                } else {
                    Tensor::zeros(&[b, cfg.dsv_channels, hh, ww])
                }
            })
            .collect();
        Ok(RecurrentState {
            feedback: Tensor::zeros(&[b, cfg.hr_channels, hh, ww]),
            dsv,
            prev_lr: first_lr.detach(),
            boxes: Vec::new(),
        })
    }

    /// `h⁰`: LR encoder then conv + pixel shuffle ×2.
    pub fn encode_lr(&self, t: &Tape, p: &Bound, x_lr: &Tensor) -> Result<Tensor> {
        let s = self.config.leaky_slope;
        let y = conv_leaky(t, p, "crfp.enc_lr.0", x_lr, s)?;
        let y = conv_leaky(t, p, "crfp.enc_lr.1", &y, s)?;
        let y = conv(t, p, "crfp.up2", &y)?;
        Ok(t.leaky_relu(&t.pixel_shuffle_up(&y, 2)?, s)?)
    }

    /// Fovea features from the HR crop and the matching crop of the bilinear
    /// ×8 LR frame.
    pub fn encode_fovea(&self, t: &Tape, p: &Bound, x_fov: &Tensor, x_up: &Tensor, boxes: &[FoveaBox]) -> Result<Tensor> {
        let [_, _, hh, ww] = x_up.nchw()?;
        let side = check_boxes(boxes, x_fov, ww, hh)?;
        let windows: Vec<_> = boxes.iter().map(FoveaBox::window).collect();
        let lr_crop = t.crop_windows(x_up, &windows, side)?;
        let s = self.config.leaky_slope;
        let y = conv_leaky(t, p, "crfp.enc_fv.0", &t.concat_channels(&[x_fov, &lr_crop])?, s)?;
        conv_leaky(t, p, "crfp.enc_fv.1", &y, s)
    }

    /// Tied ×4 down-sampler: pixel unshuffle then conv.
    fn down4(&self, t: &Tape, p: &Bound, x: &Tensor) -> Result<Tensor> {
        conv_leaky(t, p, "crfp.down4", &t.pixel_unshuffle_down(x, 4)?, self.config.leaky_slope)
    }

    fn up4(&self, t: &Tape, p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
        let y = conv(t, p, name, x)?;
        Ok(t.leaky_relu(&t.pixel_shuffle_up(&y, 4)?, self.config.leaky_slope)?)
    }

    /// Feature aggregator `l`. The last one works at HR with `hr_channels`.
    pub fn feature_aggregate(&self, t: &Tape, p: &Bound, l: usize, x: FaInputs<'_>) -> Result<FaOutput> {
        let cfg = &self.config;
        let s = cfg.leaky_slope;
        let shape = x.h.nchw()?;
        let [_, _, hgt, wid] = shape;
        for (what, v) in [
            ("feedback", x.feedback),
            ("warped", x.warped),
            ("flow", x.flow),
            ("d_prev", x.d_prev),
        ]
        .into_iter()
        .chain(x.dsv.map(|z| ("dsv", z)))
        {
            let [b, _, h2, w2] = v.nchw()?;
            if (b, h2, w2) != (shape[0], hgt, wid) {
                return config(format!(
                    "aggregator {l}: {what} is {:?}, features are {:?}",
                    v.shape(),
                    x.h.shape()
                ));
            }
        }
        if x.dsv.is_some() != (cfg.dsv_channels > 0) {
            return config(format!("aggregator {l}: state vector presence does not match the configuration"));
        }
        let n = |s: &str| format!("{P}.fa{l}.{s}");
        let pass = self.pass_width(l);

        let mut c_in = conv(t, p, &n("c_in"), &t.concat_channels(&[x.warped, x.h, x.flow])?)?;
        if let Some(z) = x.dsv {
            let zw = t.warp_bilinear(z, x.flow)?;
            c_in = t.add(&c_in, &conv(t, p, &n("c_in_dsv"), &zw)?)?;
        }
        let c_in = t.leaky_relu(&c_in, s)?;
        let d = conv_leaky(t, p, &n("c_fa"), &t.concat_channels(&[&c_in, x.d_prev])?, s)?;
        let mask = t.sigmoid(&conv(t, p, &n("c_mask"), &d)?)?;
        let offsets = t.scale(&t.tanh(&conv(t, p, &n("c_offset"), &d)?)?, cfg.offset_range)?;

        let w = p.get(&n("dcn.weight"))?;
        let b = p.get(&n("dcn.bias"))?;
        let h_dot = match self.fast_window(l, hgt, wid) {
            None => t.leaky_relu(&t.dcn_lite(x.feedback, &offsets, &mask, w, b)?, s)?,
            Some((y0, x0, sh, sw)) => {
                let fb = t.crop(x.feedback, y0, x0, sh, sw)?;
                let off = t.crop(&offsets, y0, x0, sh, sw)?;
                let m = t.crop(&mask, y0, x0, sh, sw)?;
                let y = t.leaky_relu(&t.dcn_lite(&fb, &off, &m, w, b)?, s)?;
                t.pad_into(&y, y0, x0, hgt, wid)?
            }
        };

        let head = conv_leaky(t, p, &n("res_head"), &t.concat_channels(&[&h_dot, x.warped, x.h])?, s)?;
        let r = conv_leaky(t, p, &n("res_a"), &head, s)?;
        let r = t.add(&head, &conv(t, p, &n("res_b"), &r)?)?;
        let (pass_part, dsv) = if cfg.dsv_channels > 0 {
            (t.slice_channels(&r, 0, pass)?, Some(t.slice_channels(&r, pass, cfg.dsv_channels)?))
        } else {
            (r, None)
        };
        let h = conv_leaky(t, p, &n("c_next"), &pass_part, s)?;
        Ok(FaOutput { h, d, dsv })
    }

    /// Fovea fusion and rendering. Returns `(x_hat, feedback)`.
    pub fn output_block(
        &self,
        t: &Tape,
        p: &Bound,
        h_last: &Tensor,
        h_fovea: &Tensor,
        boxes: &[FoveaBox],
        x_up: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let [_, _, hh, ww] = h_last.nchw()?;
        check_boxes(boxes, h_fovea, ww, hh)?;
        let windows: Vec<_> = boxes.iter().map(FoveaBox::window).collect();
        let plane = t.paste_windows(h_fovea, &windows, hh, ww)?;
        let feedback = conv_leaky(t, p, "crfp.c_fb", &t.concat_channels(&[h_last, &plane])?, self.config.leaky_slope)?;
        let residual = conv(t, p, "crfp.c_out", &feedback)?;
        Ok((t.add(&residual, x_up)?, feedback))
    }

    /// Flow from `x_lr` to `prev`, reflect-padded to a multiple of 8 and cropped back.
    pub fn estimate_flow(&self, t: &Tape, p: &Bound, x_lr: &Tensor, prev: &Tensor) -> Result<Tensor> {
        let [_, _, h, w] = x_lr.nchw()?;
        let (ph, pw) = (h.next_multiple_of(8) - h, w.next_multiple_of(8) - w);
        if ph == 0 && pw == 0 {
            return flow::flow_forward(t, p, x_lr, prev, self.config.flow_range);
        }
        let a = t.pad_reflect(x_lr, ph, pw)?;
        let b = t.pad_reflect(prev, ph, pw)?;
        let f = flow::flow_forward(t, p, &a, &b, self.config.flow_range)?;
        Ok(t.crop(&f, 0, 0, h, w)?)
    }

    /// One recurrent step. `x_fov` holds the HR crops at `boxes` (one per batch item).
    pub fn step(
        &self,
        t: &Tape,
        p: &Bound,
        state: &RecurrentState,
        x_lr: &Tensor,
        x_fov: &Tensor,
        boxes: &[FoveaBox],
    ) -> Result<(Tensor, RecurrentState)> {
        let cfg = &self.config;
        let [b, c, h, w] = x_lr.nchw()?;
        if c != 3 || state.prev_lr.shape() != x_lr.shape() {
            return config(format!(
                "LR frame {:?} does not match the state's {:?}",
                x_lr.shape(),
                state.prev_lr.shape()
            ));
        }
        let (hh, ww) = (h * cfg.scale, w * cfg.scale);
        if state.feedback.shape() != [b, cfg.hr_channels, hh, ww] || state.dsv.len() != cfg.aggregators {
            return config("recurrent state does not match the configuration");
        }
        let last = cfg.aggregators - 1;

        let flow = self.estimate_flow(t, p, x_lr, &state.prev_lr)?;
        let flow_2x = t.scale(&t.bilinear_resize(&flow, Ratio::int(2))?, 2.0)?;
        let flow_hr = t.scale(&t.bilinear_resize(&flow, Ratio::int(8))?, 8.0)?;
        let warped = t.warp_bilinear(&state.feedback, &flow_hr)?;
        let feedback_ds = self.down4(t, p, &state.feedback)?;
        let warped_ds = self.down4(t, p, &warped)?;

        let mut hcur = self.encode_lr(t, p, x_lr)?;
        // the DCN propagation feature starts from zero on every frame
        let mut d = Tensor::zeros(&[b, cfg.base_channels, 2 * h, 2 * w]);
        let dsv_on = cfg.dsv_channels > 0;
        let mut dsv_next = Vec::with_capacity(cfg.aggregators);
        for l in 0..last {
            let out = self.feature_aggregate(
                t,
                p,
                l,
                FaInputs {
                    h: &hcur,
                    feedback: &feedback_ds,
                    warped: &warped_ds,
                    flow: &flow_2x,
                    d_prev: &d,
                    dsv: dsv_on.then_some(&state.dsv[l]),
                },
            )?;
            hcur = out.h;
            d = out.d;
            dsv_next.push(out.dsv.unwrap_or_else(|| state.dsv[l].clone()));
        }
        let h_up = self.up4(t, p, "crfp.up4_h", &hcur)?;
        let d_up = self.up4(t, p, "crfp.up4_d", &d)?;
        let out = self.feature_aggregate(
            t,
            p,
            last,
            FaInputs {
                h: &h_up,
                feedback: &state.feedback,
                warped: &warped,
                flow: &flow_hr,
                d_prev: &d_up,
                dsv: dsv_on.then_some(&state.dsv[last]),
            },
        )?;
        dsv_next.push(out.dsv.unwrap_or_else(|| state.dsv[last].clone()));

        let x_up = t.bilinear_resize(x_lr, Ratio::int(cfg.scale))?;
        let h_fv = self.encode_fovea(t, p, x_fov, &x_up, boxes)?;
        let (x_hat, feedback) = self.output_block(t, p, &out.h, &h_fv, boxes, &x_up)?;

        let mut history = state.boxes.clone();
        history.push(boxes.to_vec());
        Ok((
            x_hat,
            RecurrentState {
                feedback,
                dsv: dsv_next,
                prev_lr: x_lr.clone(),
                boxes: history,
            },
        ))
    }

    /// Pass-through width of aggregator `l`'s residual block.
    fn pass_width(&self, l: usize) -> usize {
        if l + 1 == self.config.aggregators {
            self.config.hr_channels
        } else {
            self.config.pass_channels
        }
    }

    /// Centred DCN window `(y0, x0, h, w)` in CRFP-Fast mode, at the working
    /// resolution of aggregator `l`.
    fn fast_window(&self, l: usize, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
        let side = self.config.fast_region?;
        let side = if l + 1 == self.config.aggregators { side } else { side / 4 };
        let (sh, sw) = (side.min(h), side.min(w));
        if sh == h && sw == w {
            return None;
        }
        Some(((h - sh) / 2, (w - sw) / 2, sh, sw))
    }
}

/// Check the batch of boxes against the fovea tensor and the HR frame; returns the side.
fn check_boxes(boxes: &[FoveaBox], fovea: &Tensor, width: usize, height: usize) -> Result<usize> {
    let [b, _, fh, fw] = fovea.nchw()?;
    if boxes.len() != b {
        return usage(format!("{} fovea boxes for a batch of {b}", boxes.len()));
    }
    for bx in boxes {
        if bx.side != fh || bx.side != fw {
            return usage(format!("fovea box side {} does not match crop {fh}x{fw}", bx.side));
        }
        if !bx.fits(width, height) {
            return usage(format!("fovea box {bx:?} leaves the {width}x{height} frame"));
        }
    }
    Ok(fh)
}

/// Every CRFP convolution as (name, out, in).
fn crfp_layers(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (c, hr, dsv) = (cfg.base_channels, cfg.hr_channels, cfg.dsv_channels);
    let mut v = vec![
        (format!("{P}.enc_lr.0"), c, 3),
        (format!("{P}.enc_lr.1"), c, c),
        (format!("{P}.up2"), 4 * c, c),
        (format!("{P}.down4"), c, 16 * hr),
        (format!("{P}.up4_h"), 16 * hr, c),
        (format!("{P}.up4_d"), 16 * hr, c),
        (format!("{P}.enc_fv.0"), c, 6),
        (format!("{P}.enc_fv.1"), hr, c),
        (format!("{P}.c_fb"), hr, 2 * hr),
        (format!("{P}.c_out"), 3, hr),
    ];
    for l in 0..cfg.aggregators {
        let (w, pass) = if l + 1 == cfg.aggregators { (hr, hr) } else { (c, cfg.pass_channels) };
        let res = pass + dsv;
        let n = |s: &str| format!("{P}.fa{l}.{s}");
        v.push((n("c_in"), w, 2 * w + 2));
        if dsv > 0 {
            v.push((n("c_in_dsv"), w, dsv));
        }
        v.extend([
            (n("c_fa"), w, 2 * w),
            (n("c_mask"), 1, w),
            (n("c_offset"), 2, w),
            (n("dcn"), w, w),
            (n("res_head"), res, 3 * w),
            (n("res_a"), res, res),
            (n("res_b"), res, res),
            (n("c_next"), w, pass),
        ]);
    }
    v
}

/// Parameter count of a configuration without building it.
pub fn param_count_for(cfg: &ModelConfig) -> usize {
    crfp_layers(cfg).iter().map(|(_, o, i)| conv_size(*o, *i)).sum::<usize>() + flow::flow_param_count(cfg.flow_channels)
}
