use fvsr_core::data::{degrade_sequence, synthetic_clip, FrameSequence};
use fvsr_core::flow::flow_param_count;
use fvsr_core::model::param_count_for;
use fvsr_core::train::{charbonnier_loss, flow_quality, pretrain_flow, Trainer};
use fvsr_core::{Crfp, ModelConfig, TrainConfig};
use fvsr_tensor::{finite_diff_check_with, GradCheckOptions, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(cout: usize, cin: usize) -> usize {
    cout * cin * 9 + cout
}

/// Parameter count of the channel plan written out layer by layer.
fn hand_count(c: usize, hr: usize, pass: usize, dsv: usize, flow: usize) -> usize {
    let top = conv(c, 3) + conv(c, c) + conv(4 * c, c) // LR encoder and ×2 shuffle
        + conv(c, 16 * hr) // tied ×4 down-shuffle
        + 2 * conv(16 * hr, c) // ×4 up-shuffles for h and D
        + conv(c, 6) + conv(hr, c) // fovea encoder
        + conv(hr, 2 * hr) + conv(3, hr); // C_fb, C_out
    let fa = |w: usize, pass: usize| {
        let res = pass + dsv;
        conv(w, 2 * w + 2) + if dsv > 0 { conv(w, dsv) } else { 0 }
            + conv(w, 2 * w) + conv(1, w) + conv(2, w) + conv(w, w)
            + conv(res, 3 * w) + 2 * conv(res, res) + conv(w, pass)
    };
    top + 3 * fa(c, pass) + fa(hr, hr) + flow_param_count(flow)
}

fn toy_cfg() -> TrainConfig {
    TrainConfig {
        iterations: 4,
        unroll: 3,
        batch_size: 2,
        ..TrainConfig::toy()
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        pass_channels: 6,
        dsv_channels: 2,
        flow_channels: 4,
        ..ModelConfig::toy()
    }
}

fn clips() -> Vec<FrameSequence> {
    (0..2)
        .map(|i| degrade_sequence(synthetic_clip(&format!("c{i}"), 64, 64, 5, (1, 0), &mut ChaCha8Rng::seed_from_u64(i))).unwrap())
        .collect()
}

#[test]
fn full_channel_plan_matches_the_hand_count() {
    let cfg = ModelConfig::full();
    let n = param_count_for(&cfg);
    assert_eq!(n, hand_count(32, 4, 24, 8, 112));
    assert_eq!(n, 2_123_377);
    assert!((1_500_000..=3_000_000).contains(&n));
    assert_eq!(param_count_for(&cfg.with_dsv_split(32, 0)), hand_count(32, 4, 32, 0, 112));
    assert_eq!(param_count_for(&ModelConfig::toy()), hand_count(16, 4, 12, 4, 16));
}

#[test]
fn charbonnier_gradient_matches_finite_differences() {
    for seed in [1u64, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // dyadic values keep the probed differences exact in f32
        let mk = |rng: &mut ChaCha8Rng| {
            let d = (0..2 * 3 * 4 * 4).map(|_| rng.gen_range(-8..=8) as f32 / 16.0).collect();
            Tensor::from_vec(&[2, 3, 4, 4], d).unwrap()
        };
        let x = mk(&mut rng);
        let target = mk(&mut rng);
        let opts = GradCheckOptions {
            eps: 1.0 / 1024.0,
            max_samples: 96,
            seed,
            ..Default::default()
        };
        let err = finite_diff_check_with(|t, xh| Ok(charbonnier_loss(t, xh, &target, 1e-3).unwrap()), &x, opts).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = clips();
    let run = || {
        let mut tr = Trainer::new(Crfp::new(small(), 4).unwrap());
        tr.train_loop(&toy_cfg(), &data, None, |_, _| {}).unwrap();
        tr
    };
    let (a, b) = (run(), run());
    assert_eq!(a.loss_csv(), b.loss_csv());
    for (n, p) in a.model.params.iter() {
        assert!(p.bit_eq(b.model.params.get(n).unwrap()), "{n}");
    }
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_run() {
    let data = clips();
    let cfg = toy_cfg();
    let dir = tempfile::tempdir().unwrap();

    let mut straight = Trainer::new(Crfp::new(small(), 5).unwrap());
    straight.train_loop(&cfg, &data, None, |_, _| {}).unwrap();

    let mut first = Trainer::new(Crfp::new(small(), 5).unwrap());
    for _ in 0..2 {
        first.train_step(&cfg, &data).unwrap();
    }
    let path = dir.path().join("half.ckpt");
    first.save(&path).unwrap();
    let mut resumed = Trainer::load(&path, Some(&small())).unwrap();
    assert_eq!(resumed.iteration, 2);
    resumed.train_loop(&cfg, &data, None, |_, _| {}).unwrap();

    for ((i, a), (j, b)) in straight.losses.iter().skip(2).zip(&resumed.losses) {
        assert_eq!(i, j);
        assert!((a - b).abs() <= 1e-6, "iteration {i}: {a} vs {b}");
    }
    for (n, p) in straight.model.params.iter() {
        assert!(p.max_abs_diff(resumed.model.params.get(n).unwrap()).unwrap() <= 1e-6, "{n}");
    }
}

#[test]
fn checkpoint_rejects_a_different_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Trainer::new(Crfp::new(small(), 1).unwrap()).save(&path).unwrap();
    let other = ModelConfig { offset_range: 3.0, ..small() };
    assert!(Trainer::load(&path, Some(&other)).is_err());
    assert_eq!(Trainer::load(&path, None).unwrap().model.config, small());
}

#[test]
fn flow_pretraining_learns_translations() {
    // the full preset's schedule on the toy-width estimator
    let mut model = Crfp::new(ModelConfig::toy(), 1).unwrap();
    let cfg = TrainConfig {
        seed: 0,
        ..TrainConfig::full()
    };
    let (before, _) = flow_quality(&model, 32, 4.0, 20, 99).unwrap();
    pretrain_flow(&mut model, &cfg, 32, |_, _| {}).unwrap();
    let (after, self_mag) = flow_quality(&model, 32, 4.0, 20, 99).unwrap();
    assert!(after < 1.0 && after < before, "held-out EPE {before} -> {after}");
    assert!(self_mag < 0.5, "flow on identical frames {self_mag}");
}

#[test]
fn pretraining_touches_only_the_flow_group() {
    let mut model = Crfp::new(small(), 3).unwrap();
    let before = model.params.clone();
    let cfg = TrainConfig {
        flow_pretrain_iterations: 2,
        ..TrainConfig::toy()
    };
    pretrain_flow(&mut model, &cfg, 16, |_, _| {}).unwrap();
    let mut flow_moved = false;
    for (n, p) in model.params.iter() {
        let same = p.bit_eq(before.get(n).unwrap());
        if n.starts_with("flow.") {
            flow_moved |= !same;
        } else {
            assert!(same, "{n} changed");
        }
    }
    assert!(flow_moved);
}
