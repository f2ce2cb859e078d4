//! `fvsr`: train, evaluate and run the foveated super-resolution model.
//!
//! Exit status is 0 on success, 1 when a run fails and 2 for usage or
//! configuration errors (including a missing dataset).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvsr_core::data::{self, FrameSequence};
use fvsr_core::eval::{self, Method};
use fvsr_core::metrics::{MetricReport, Region};
use fvsr_core::train::{self, Trainer};
use fvsr_core::{Crfp, Error, GazeTrace, Preset, Result, RunConfig, TraceKind};

/// Default root for outputs when neither `--output` nor `output.dir` is given.
const OUTPUT_ROOT_ENV: &str = "FVSR_OUTPUT_ROOT";

/// SSIM level used for the retained-detail area in `simulate`.
const AREA_SSIM: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "fvsr", version, about = "Foveated video super-resolution")]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; defaults to `output.dir`, then `$FVSR_OUTPUT_ROOT/<command>`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Clips evaluated concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Override one configuration key (`section.key=value`); repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on `data.train_dir`; writes checkpoints and loss.csv.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on `data.eval_dir`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trace: Option<TraceKind>,
        /// Tracker noise in HR pixels; only valid with `--trace tracker`.
        #[arg(long)]
        sigma: Option<f32>,
    },
    /// Bicubic ×8 upsampling through the same metric path.
    Baseline {
        #[arg(long)]
        trace: Option<TraceKind>,
        #[arg(long)]
        sigma: Option<f32>,
    },
    /// Reconstruct one clip along a recorded gaze trace.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of HR frames; the LR stream is derived from it.
        #[arg(long)]
        clip: PathBuf,
        /// Lines of `frame x0 y0 side`.
        #[arg(long)]
        trace_file: PathBuf,
    },
    /// Fixed central gaze with Gaussian tracker noise on `data.eval_dir`.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sigma: f32,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Baseline { .. } => "baseline",
            Command::Infer { .. } => "infer",
            Command::Simulate { .. } => "simulate",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fvsr: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Eval { trace, sigma, .. } | Command::Baseline { trace, sigma } => {
            if let Some(kind) = trace {
                cfg.eval.trace = *kind;
                if *kind != TraceKind::Tracker && sigma.is_none() {
                    cfg.eval.sigma = None;
                }
            }
            if sigma.is_some() {
                cfg.eval.sigma = *sigma;
            }
        }
        Command::Simulate { sigma, .. } => {
            cfg.eval.trace = TraceKind::Tracker;
            cfg.eval.sigma = Some(*sigma);
        }
        _ => {}
    }
    cfg.validate()?;

    let out = output_dir(&cli, &cfg);
    cfg.output_dir = Some(out.clone());
    create_dir(&out)?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;

    match &cli.command {
        Command::Train { resume } => cmd_train(&cfg, resume.as_deref(), &out),
        Command::Eval { checkpoint, .. } => {
            let model = load_model(checkpoint, &cfg)?;
            cmd_evaluate(Method::Model(&model), &cfg, cli.jobs, &out, "")
        }
        Command::Baseline { .. } => cmd_evaluate(Method::Bicubic, &cfg, cli.jobs, &out, "bicubic_"),
        Command::Infer {
            checkpoint,
            clip,
            trace_file,
        } => cmd_infer(&cfg, checkpoint, clip, trace_file, &out),
        Command::Simulate { checkpoint, sigma } => cmd_simulate(&cfg, checkpoint, *sigma, &out),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::preset(Preset::Full),
    };
    for o in &cli.overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(Error::Usage(format!("--set expects KEY=VALUE, got {o:?}")));
        };
        let key = key.trim();
        cfg.set(key, value.trim())
            .map_err(|e| Error::Config(format!("--set {key}: {e}")))?;
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cli.output.clone().or_else(|| cfg.output_dir.clone()) {
        return p;
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(cli.command.name())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn dataset(dir: &Option<PathBuf>, key: &str) -> Result<Vec<FrameSequence>> {
    let Some(dir) = dir else {
        return Err(Error::Config(format!("{key} is not set")));
    };
    data::load_clips(dir)?.into_iter().map(data::degrade_sequence).collect()
}

fn load_model(checkpoint: &Path, cfg: &RunConfig) -> Result<Crfp> {
    require_file(checkpoint, "checkpoint")?;
    Ok(Trainer::load(checkpoint, Some(&cfg.model))?.model)
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &Path) -> Result<()> {
    let Some(dir) = &cfg.train_dir else {
        return Err(Error::Config("data.train_dir is not set".into()));
    };
    let clips = data::load_clips(dir)?;
    let every = (cfg.train.iterations / 20).max(1);
    let mut trainer = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            Trainer::load(path, Some(&cfg.model))?
        }
        None => {
            let mut model = Crfp::new(cfg.model.clone(), cfg.train.seed)?;
            let n = cfg.train.flow_pretrain_iterations;
            train::pretrain_flow(&mut model, &cfg.train, train::FLOW_PRETRAIN_SIZE, |i, l| {
                if (i + 1) % (n / 10).max(1) == 0 {
                    eprintln!("flow pretraining {}/{n}: endpoint error {l:.4}", i + 1);
                }
            })?;
            Trainer::new(model)
        }
    };
    eprintln!("training {} parameters on {} clip(s)", trainer.model.param_count(), clips.len());
    trainer.train_loop(&cfg.train, &clips, Some(out), |i, l| {
        if (i + 1) % every == 0 {
            eprintln!("iteration {}/{}: loss {l:.5}", i + 1, cfg.train.iterations);
        }
    })?;
    println!("wrote {}", out.join("final.ckpt").display());
    Ok(())
}

fn trace_label(cfg: &RunConfig) -> String {
    match cfg.eval.sigma {
        Some(s) => format!("{}_sigma{s}", cfg.eval.trace.as_str()),
        None => cfg.eval.trace.as_str().to_string(),
    }
}

fn print_summary(label: &str, report: &MetricReport) {
    for region in Region::ALL {
        if let Some((psnr, ssim)) = report.mean(region) {
            println!("{label} {region}: PSNR {psnr:.3} dB, SSIM {ssim:.4}");
        }
    }
}

fn write_traces(traces: &[GazeTrace], clips: &[FrameSequence], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (tr, clip) in traces.iter().zip(clips) {
        tr.save(&dir.join(format!("{}.txt", clip.id)))?;
    }
    Ok(())
}

fn write_frames(frames: &[fvsr_core::Tensor], dir: &Path) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        data::write_frame(f, &dir.join(format!("{i:08}.png")))?;
    }
    Ok(())
}

fn cmd_evaluate(method: Method<'_>, cfg: &RunConfig, jobs: usize, out: &Path, prefix: &str) -> Result<()> {
    let clips = dataset(&cfg.eval_dir, "data.eval_dir")?;
    let label = format!("{prefix}{}", trace_label(cfg));
    let (report, traces) = if cfg.eval.write_frames {
        let mut report = MetricReport::default();
        let mut traces = Vec::new();
        for clip in &clips {
            let (h, w) = clip.hr_dims();
            let trace = eval::build_trace(cfg.eval.trace, w, h, clip.len(), &cfg.eval)?;
            let (frames, rep) = eval::eval_clip(method, clip, &trace)?;
            write_frames(&frames, &out.join("frames").join(&label).join(&clip.id))?;
            report.extend(rep);
            traces.push(trace);
        }
        (report, traces)
    } else {
        eval::run_eval(method, &clips, cfg.eval.trace, &cfg.eval, jobs)?
    };
    write_traces(&traces, &clips, &out.join("traces").join(&label))?;
    data::write_report(&report, &out.join(format!("report_{label}.csv")))?;
    print_summary(&label, &report);
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, clip: &Path, trace_file: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint, cfg)?;
    if !clip.is_dir() {
        return Err(Error::Config(format!("clip directory {} does not exist", clip.display())));
    }
    require_file(trace_file, "trace file")?;
    let seq = data::degrade_sequence(data::load_sequence(clip)?)?;
    let (h, w) = seq.hr_dims();
    let trace = GazeTrace::load(trace_file, w, h)?;
    let frames = eval::run_clip(&model, &seq, &trace)?;
    write_frames(&frames, &out.join("frames"))?;
    println!("wrote {} frames to {}", frames.len(), out.join("frames").display());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, checkpoint: &Path, sigma: f32, out: &Path) -> Result<()> {
    let model = load_model(checkpoint, cfg)?;
    let clips = dataset(&cfg.eval_dir, "data.eval_dir")?;
    let label = trace_label(cfg);
    let mut report = MetricReport::default();
    let mut traces = Vec::new();
    let mut area = String::from("clip,frame,area\n");
    for clip in &clips {
        let (frames, rep, trace) = eval::simulate_tracker(&model, clip, sigma as f64, cfg.eval.fovea_size, cfg.eval.seed)?;
        for (i, (f, g)) in frames.iter().zip(&clip.hr).enumerate() {
            let n = fvsr_core::metrics::ssim_map(f, g)?.area_above(AREA_SSIM);
            let _ = writeln!(area, "{},{i},{n}", clip.id);
        }
        if cfg.eval.write_frames {
            write_frames(&frames, &out.join("frames").join(&label).join(&clip.id))?;
        }
        report.extend(rep);
        traces.push(trace);
    }
    write_traces(&traces, &clips, &out.join("traces").join(&label))?;
    data::write_report(&report, &out.join(format!("report_{label}.csv")))?;
    write_file(&out.join(format!("ssim_area_{label}.csv")), &area)?;
    print_summary(&label, &report);
    Ok(())
}
