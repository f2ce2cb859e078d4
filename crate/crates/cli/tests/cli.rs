use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fvsr_core::data::{synthetic_clip, write_sequence};
use fvsr_core::foveation::horizontal_trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn fvsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvsr"))
        .args(args)
        .env_remove("FVSR_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy workspace: one 64×64 10-frame clip under `data/` and a config file.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let clip = synthetic_clip("clip0", 64, 64, 10, (1, 0), &mut ChaCha8Rng::seed_from_u64(3));
        write_sequence(&clip, &dir.path().join("data").join("clip0")).unwrap();
        let cfg = format!(
            "run.preset = toy\n# two steps keep the smoke run fast\ntrain.iterations = 2\ntrain.flow_pretrain_iterations = 2\ndata.train_dir = {d}\ndata.eval_dir = {d}\n",
            d = dir.path().join("data").display()
        );
        std::fs::write(dir.path().join("toy.cfg"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self) -> PathBuf {
        self.path("toy.cfg")
    }

    fn train(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        let o = fvsr(&["train", "--config", s(&self.config()), "--output", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut m = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                m.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    m
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere");
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, format!("run.preset = toy\ndata.train_dir = {}\n", missing.display())).unwrap();
    let o = fvsr(&["train", "--config", s(&cfg), "--output", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "run.preset = toy\ntrain.learning_rate = 0.1\n").unwrap();
    let o = fvsr(&["baseline", "--config", s(&cfg), "--output", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.learning_rate"), "{}", stderr(&o));
}

#[test]
fn sigma_without_tracker_is_a_usage_error() {
    let f = Fixture::new();
    let o = fvsr(&[
        "eval",
        "--config",
        s(&f.config()),
        "--checkpoint",
        s(&f.path("none.ckpt")),
        "--trace",
        "raster",
        "--sigma",
        "10",
        "--output",
        s(&f.path("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(fvsr(&["eval", "--trace", "spiral", "--checkpoint", "x"]).status.code(), Some(2));
    assert_eq!(fvsr(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn baseline_accepts_the_tracker_preset_and_reports_every_region() {
    let f = Fixture::new();
    let before = snapshot(&f.path("data"));
    let out = f.path("base");
    let o = fvsr(&["baseline", "--config", s(&f.config()), "--trace", "tracker", "--sigma", "100", "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report_bicubic_tracker_sigma100.csv").is_file());

    let o = fvsr(&["baseline", "--config", s(&f.config()), "--trace", "horizontal", "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report_bicubic_horizontal.csv")).unwrap();
    assert!(csv.starts_with("clip,frame,region,psnr,ssim\n"));
    for region in ["fovea", "past_fovea", "whole"] {
        assert!(csv.contains(&format!("clip0,mean,{region},")), "{region} missing:\n{csv}");
    }
    assert_eq!(snapshot(&f.path("data")), before, "dataset was modified");
}

#[test]
fn toy_training_is_reproducible_and_feeds_every_command() {
    let f = Fixture::new();
    let before = snapshot(&f.path("data"));
    let a = f.train("run_a");
    let b = f.train("run_b");
    for name in ["final.ckpt", "loss.csv"] {
        assert!(a.join(name).is_file(), "{name} missing");
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let loss = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    let resolved = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(resolved.contains("train.iterations = 2"));
    assert!(resolved.contains("run.preset = toy"));
    let ckpt = a.join("final.ckpt");

    let out = f.path("eval");
    let o = fvsr(&[
        "eval",
        "--config",
        s(&f.config()),
        "--checkpoint",
        s(&ckpt),
        "--trace",
        "tracker",
        "--sigma",
        "100",
        "--jobs",
        "2",
        "--output",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report_tracker_sigma100.csv").is_file());
    assert!(out.join("traces/tracker_sigma100/clip0.txt").is_file());

    let out = f.path("sim");
    let o = fvsr(&["simulate", "--config", s(&f.config()), "--checkpoint", s(&ckpt), "--sigma", "10", "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let area = std::fs::read_to_string(out.join("ssim_area_tracker_sigma10.csv")).unwrap();
    assert_eq!(area.lines().count(), 11);

    let trace = horizontal_trajectory(64, 64, 16, 10, 24).unwrap();
    let trace_file = f.path("trace.txt");
    trace.save(&trace_file).unwrap();
    let infer = |out: &str| {
        let out = f.path(out);
        let o = fvsr(&[
            "infer",
            "--config",
            s(&f.config()),
            "--checkpoint",
            s(&ckpt),
            "--clip",
            s(&f.path("data/clip0")),
            "--trace-file",
            s(&trace_file),
            "--output",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        snapshot(&out.join("frames"))
            .into_iter()
            .map(|(p, b)| (p.file_name().unwrap().to_owned(), b))
            .collect::<BTreeMap<_, _>>()
    };
    let first = infer("infer_a");
    assert_eq!(first.len(), 10);
    assert_eq!(first, infer("infer_b"), "replay is not byte-identical");

    let short = f.path("short.txt");
    horizontal_trajectory(64, 64, 16, 4, 24).unwrap().save(&short).unwrap();
    let o = fvsr(&[
        "infer",
        "--config",
        s(&f.config()),
        "--checkpoint",
        s(&ckpt),
        "--clip",
        s(&f.path("data/clip0")),
        "--trace-file",
        s(&short),
        "--output",
        s(&f.path("infer_c")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    assert_eq!(snapshot(&f.path("data")), before, "dataset was modified");
}

#[test]
fn checkpoint_for_another_model_is_rejected() {
    let f = Fixture::new();
    let ckpt = f.train("run").join("final.ckpt");
    let o = fvsr(&[
        "eval",
        "--config",
        s(&f.config()),
        "--set",
        "model.base_channels=8",
        "--checkpoint",
        s(&ckpt),
        "--output",
        s(&f.path("eval")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn infer_maps_160x90_inputs_to_1280x720_outputs() {
    let f = Fixture::new();
    let ckpt = f.train("run").join("final.ckpt");
    let clip = synthetic_clip("wide", 1280, 720, 2, (0, 0), &mut ChaCha8Rng::seed_from_u64(9));
    write_sequence(&clip, &f.path("wide")).unwrap();
    let trace_file = f.path("wide.txt");
    horizontal_trajectory(1280, 720, 16, 2, 352).unwrap().save(&trace_file).unwrap();
    let out = f.path("infer");
    let o = fvsr(&[
        "infer",
        "--config",
        s(&f.config()),
        "--checkpoint",
        s(&ckpt),
        "--clip",
        s(&f.path("wide")),
        "--trace-file",
        s(&trace_file),
        "--output",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..2 {
        let img = image::open(out.join(format!("frames/{i:08}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (1280, 720));
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let f = Fixture::new();
    let root = f.path("root");
    let o = Command::new(env!("CARGO_BIN_EXE_fvsr"))
        .args(["baseline", "--config", s(&f.config())])
        .env("FVSR_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("baseline/config.txt").is_file());
}
