use fvsr_core::data::{sample_training_patch, synthetic_clip};
use fvsr_core::foveation::{clamp_crop, horizontal_trajectory, raster_trajectory, tracker_trajectory, GazeTrace};
use fvsr_core::{Point, Preset, RunConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clamped_boxes_stay_inside(w in 1usize..400, h in 1usize..400, side_frac in 0.01f64..1.0,
                                 x in -1e4f64..1e4, y in -1e4f64..1e4) {
        let side = ((w.min(h) as f64 * side_frac) as usize).max(1);
        let b = clamp_crop(w, h, Point { x, y }, side).unwrap();
        prop_assert!(b.fits(w, h));
        prop_assert_eq!(b.side, side);
    }

    #[test]
    fn clamping_moves_in_frame_boxes_by_less_than_a_pixel(w in 32usize..300, h in 32usize..300, seed in any::<u64>()) {
        let side = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand::Rng::gen_range(&mut rng, 8.0..(w - 8) as f64);
        let y = rand::Rng::gen_range(&mut rng, 8.0..(h - 8) as f64);
        let b = clamp_crop(w, h, Point { x, y }, side).unwrap();
        prop_assert!((b.x0 as f64 + 8.0 - x).abs() <= 0.5 + 1e-9);
        prop_assert!((b.y0 as f64 + 8.0 - y).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn every_trajectory_fits_the_frame(w in 16usize..200, h in 16usize..200, side in 1usize..16,
                                       n in 1usize..40, sigma in 0.0f64..300.0, seed in any::<u64>()) {
        let mu = Point { x: w as f64 / 2.0, y: h as f64 / 2.0 };
        for tr in [
            raster_trajectory(w, h, side, n).unwrap(),
            horizontal_trajectory(w, h, side, n, h / 2).unwrap(),
            tracker_trajectory(w, h, side, n, mu, sigma, seed).unwrap(),
        ] {
            prop_assert_eq!(tr.len(), n);
            prop_assert!(tr.boxes.iter().all(|b| b.fits(w, h) && b.side == side));
            let back = GazeTrace::from_text(&tr.to_text(), w, h).unwrap();
            prop_assert_eq!(back.boxes, tr.boxes);
        }
    }

    #[test]
    fn raster_cells_within_a_sweep_are_distinct(w in 16usize..200, h in 16usize..200, side in 4usize..16) {
        let cells = (w / side) * h.div_ceil(side);
        let tr = raster_trajectory(w, h, side, cells).unwrap();
        let mut seen = std::collections::HashSet::new();
        prop_assert!(tr.boxes.iter().all(|b| seen.insert((b.x0, b.y0))));
    }

    #[test]
    fn tracker_traces_replay_from_their_seed(sigma in 0.0f64..200.0, seed in any::<u64>()) {
        let mu = Point { x: 80.0, y: 45.0 };
        let a = tracker_trajectory(160, 90, 12, 25, mu, sigma, seed).unwrap();
        let b = tracker_trajectory(160, 90, 12, 25, mu, sigma, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_patches_are_consistent(seed in any::<u64>(), fovea in 1usize..64, t in 0usize..3) {
        let clip = synthetic_clip("p", 128, 96, 6, (1, -1), &mut ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let s = sample_training_patch(&clip, t, 3, 64, fovea, &mut rng).unwrap();
        prop_assert_eq!(s.hr.len(), 3);
        for f in 0..3 {
            prop_assert_eq!(s.hr[f].shape(), &[1, 3, 64, 64]);
            prop_assert_eq!(s.lr[f].shape(), &[1, 3, 8, 8]);
            prop_assert_eq!(s.fovea[f].shape(), &[1, 3, fovea, fovea]);
            let b = s.boxes[f];
            prop_assert!(b.fits(64, 64));
            // the fovea crop is exactly the HR patch under the box
            for c in 0..3 {
                for y in 0..fovea {
                    for x in 0..fovea {
                        let want = s.hr[f].data()[(c * 64 + b.y0 + y) * 64 + b.x0 + x];
                        prop_assert_eq!(s.fovea[f].data()[(c * fovea + y) * fovea + x], want);
                    }
                }
            }
        }
    }

    #[test]
    fn config_text_round_trips(lr in 1e-6f32..1e-2, seed in any::<u64>(), sigma in prop::option::of(0.0f32..200.0)) {
        let mut cfg = RunConfig::preset(Preset::Toy);
        cfg.train.lr_model = lr;
        cfg.train.lr_flow = lr / 4.0;
        cfg.train.seed = seed;
        cfg.eval.sigma = sigma;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn unknown_and_duplicate_keys_are_rejected() {
    let err = RunConfig::parse("run.preset = toy\nmodel.depth = 3\n").unwrap_err().to_string();
    assert!(err.contains("model.depth") && err.contains("line 2"), "{err}");
    let err = RunConfig::parse("train.seed = 1\ntrain.seed = 2\n").unwrap_err().to_string();
    assert!(err.contains("train.seed"), "{err}");
    assert!(RunConfig::parse("train.seed 1\n").is_err());
}
