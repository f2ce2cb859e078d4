//! Causal evaluation over clips, the bicubic baseline and tracker-noise runs.

use fvsr_tensor::{Ratio, Tape, Tensor};

use crate::config::{EvalConfig, TraceKind};
use crate::data::{crop_box, FrameSequence, SCALE};
use crate::error::{config, usage, Result};
use crate::foveation::{self, GazeTrace, Point};
use crate::metrics::{evaluate_clip, MetricReport};
use crate::model::Crfp;

/// Gaze trace of `kind` for a clip of `n` frames at `width × height` HR.
/// Horizontal sweeps run through the middle row; the tracker aims at the centre.
pub fn build_trace(kind: TraceKind, width: usize, height: usize, n: usize, eval: &EvalConfig) -> Result<GazeTrace> {
    let side = eval.fovea_size;
    match kind {
        TraceKind::Raster => foveation::raster_trajectory(width, height, side, n),
        TraceKind::Horizontal => {
            let y0 = height.saturating_sub(side) / 2;
            foveation::horizontal_trajectory(width, height, side, n, y0)
        }
        TraceKind::Tracker => {
            let Some(sigma) = eval.sigma else {
                return usage("the tracker trace needs a sigma");
            };
            let mu = Point {
                x: width as f64 / 2.0,
                y: height as f64 / 2.0,
            };
            foveation::tracker_trajectory(width, height, side, n, mu, sigma as f64, eval.seed)
        }
    }
}

fn check_clip(seq: &FrameSequence, trace: &GazeTrace) -> Result<()> {
    if seq.lr.len() != seq.hr.len() {
        return config(format!("clip {} has not been degraded", seq.id));
    }
    if trace.len() != seq.len() {
        return usage(format!("trace has {} entries, clip {} has {} frames", trace.len(), seq.id, seq.len()));
    }
    let (h, w) = seq.hr_dims();
    if (trace.width, trace.height) != (w, h) {
        return usage(format!(
            "trace is for {}x{} frames, clip {} is {w}x{h}",
            trace.width, trace.height, seq.id
        ));
    }
    Ok(())
}

/// Run the model causally over a clip; frame `t` only sees frames `..=t`.
pub fn run_clip(model: &Crfp, seq: &FrameSequence, trace: &GazeTrace) -> Result<Vec<Tensor>> {
    check_clip(seq, trace)?;
    let t = Tape::inference();
    let p = model.params.bind(&t)?;
    let mut state = model.reset_state(&seq.lr[0])?;
    let mut out = Vec::with_capacity(seq.len());
    for (f, b) in trace.boxes.iter().enumerate() {
        let fov = crop_box(&seq.hr[f], b)?;
        let (x_hat, next) = model.step(&t, &p, &state, &seq.lr[f], &fov, &[*b])?;
        out.push(x_hat);
        state = next;
    }
    Ok(out)
}

/// Bicubic ×8 of every LR frame, without any fovea.
pub fn bicubic_outputs(seq: &FrameSequence) -> Result<Vec<Tensor>> {
    let t = Tape::inference();
    seq.lr
        .iter()
        .map(|x| Ok(t.bicubic_resize(x, Ratio::int(SCALE))?))
        .collect()
}

/// Evaluation mode: the learned model or the learning-free baseline.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Model(&'a Crfp),
    Bicubic,
}

/// Outputs and metric rows for one clip.
pub fn eval_clip(method: Method<'_>, seq: &FrameSequence, trace: &GazeTrace) -> Result<(Vec<Tensor>, MetricReport)> {
    check_clip(seq, trace)?;
    let outputs = match method {
        Method::Model(m) => run_clip(m, seq, trace)?,
        Method::Bicubic => bicubic_outputs(seq)?,
    };
    let report = evaluate_clip(&seq.id, &outputs, &seq.hr, trace)?;
    Ok((outputs, report))
}

/// Evaluate every clip with `kind` traces, up to `jobs` clips at a time.
/// Rows keep clip order whatever the parallelism.
pub fn run_eval(method: Method<'_>, clips: &[FrameSequence], kind: TraceKind, eval: &EvalConfig, jobs: usize) -> Result<(MetricReport, Vec<GazeTrace>)> {
    let work = |seq: &FrameSequence| -> Result<(MetricReport, GazeTrace)> {
        let (h, w) = seq.hr_dims();
        let trace = build_trace(kind, w, h, seq.len(), eval)?;
        let (_, rep) = eval_clip(method, seq, &trace)?;
        Ok((rep, trace))
    };
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<(MetricReport, GazeTrace)>>> = (0..clips.len()).map(|_| None).collect();
    for (chunk_clips, chunk_out) in clips.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_clips.iter().map(|c| s.spawn(|| work(c))).collect();
            for (h, slot) in handles.into_iter().zip(chunk_out.iter_mut()) {
                *slot = Some(h.join().expect("evaluation thread panicked"));
            }
        });
    }
    let mut report = MetricReport::default();
    let mut traces = Vec::new();
    for r in results {
        let (rep, tr) = r.expect("every slot is filled")?;
        report.extend(rep);
        traces.push(tr);
    }
    Ok((report, traces))
}

/// Fixed gaze at the clip centre with Gaussian tracker noise `sigma` (HR px).
pub fn simulate_tracker(model: &Crfp, seq: &FrameSequence, sigma: f64, fovea: usize, seed: u64) -> Result<(Vec<Tensor>, MetricReport, GazeTrace)> {
    let (h, w) = seq.hr_dims();
    let mu = Point {
        x: w as f64 / 2.0,
        y: h as f64 / 2.0,
    };
    let trace = foveation::tracker_trajectory(w, h, fovea, seq.len(), mu, sigma, seed)?;
    let (out, rep) = eval_clip(Method::Model(model), seq, &trace)?;
    Ok((out, rep, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{degrade_sequence, synthetic_clip};
    use crate::metrics::Region;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip() -> FrameSequence {
        degrade_sequence(synthetic_clip("s", 64, 64, 4, (0, 0), &mut ChaCha8Rng::seed_from_u64(1))).unwrap()
    }

    #[test]
    fn horizontal_report_has_past_rows_from_frame_one() {
        let ev = EvalConfig::toy();
        let (rep, _) = run_eval(Method::Bicubic, &[clip()], TraceKind::Horizontal, &ev, 1).unwrap();
        for f in 1..4 {
            assert!(rep.rows.iter().any(|r| r.frame == f && r.region == Region::PastFovea));
        }
    }

    #[test]
    fn tracker_without_sigma_is_usage_error() {
        let ev = EvalConfig::toy();
        assert!(matches!(build_trace(TraceKind::Tracker, 64, 64, 3, &ev), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn parallel_eval_matches_serial() {
        let clips = vec![clip(), clip(), clip()];
        let ev = EvalConfig::toy();
        let model = Crfp::new(ModelConfig { base_channels: 8, pass_channels: 6, dsv_channels: 2, flow_channels: 4, ..ModelConfig::toy() }, 0).unwrap();
        let (a, _) = run_eval(Method::Model(&model), &clips, TraceKind::Raster, &ev, 1).unwrap();
        let (b, _) = run_eval(Method::Model(&model), &clips, TraceKind::Raster, &ev, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sigma_keeps_the_box_fixed() {
        let model = Crfp::new(ModelConfig { base_channels: 8, pass_channels: 6, dsv_channels: 2, flow_channels: 4, ..ModelConfig::toy() }, 0).unwrap();
        let (out, _, tr) = simulate_tracker(&model, &clip(), 0.0, 16, 3).unwrap();
        assert_eq!(out.len(), 4);
        assert!(tr.boxes.iter().all(|b| *b == tr.boxes[0]));
    }
}
