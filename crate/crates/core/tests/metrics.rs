//! Masked PSNR/SSIM and region masks against independent brute-force versions.

mod common;

use common::{image, noisy, psnr_oracle, random_mask, regions_match_sets, ssim_oracle};
use fvsr_core::foveation::{horizontal_trajectory, raster_trajectory, tracker_trajectory, GazeTrace};
use fvsr_core::metrics::{masked_psnr, masked_ssim, Mask};
use fvsr_core::Point;
use fvsr_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn masked_psnr_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let a = image(3, 24, 32, &mut rng);
        let amp = rng.gen_range(0.01..0.5);
        let b = noisy(&a, amp, &mut rng);
        let (mask, set) = random_mask(32, 24, &mut rng);
        let got = masked_psnr(&a, &b, &mask).unwrap();
        let want = psnr_oracle(&a, &b, &set);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn masked_ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let a = image(3, 26, 30, &mut rng);
        let amp = rng.gen_range(0.01..0.5);
        let b = noisy(&a, amp, &mut rng);
        let (mask, set) = random_mask(30, 26, &mut rng);
        match ssim_oracle(&a, &b, &set) {
            Some(want) => {
                let got = masked_ssim(&a, &b, &mask).unwrap();
                assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            }
            None => assert!(masked_ssim(&a, &b, &mask).is_err()),
        }
    }
}

fn check_regions(trace: &GazeTrace) {
    regions_match_sets(trace).unwrap();
}

#[test]
fn region_masks_match_set_arithmetic_on_a_20x20_trace() {
    check_regions(&raster_trajectory(20, 20, 6, 12).unwrap());
    check_regions(&horizontal_trajectory(20, 20, 8, 6, 5).unwrap());
    check_regions(&tracker_trajectory(20, 20, 5, 15, Point { x: 10.0, y: 10.0 }, 4.0, 3).unwrap());
}

fn img_strategy() -> impl Strategy<Value = (Tensor, Tensor)> {
    (any::<u64>(), 0.001f32..0.5).prop_map(|(seed, amp)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = image(3, 16, 16, &mut rng);
        let b = noisy(&a, amp, &mut rng);
        (a, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric((a, b) in img_strategy()) {
        let m = Mask::full(16, 16);
        prop_assert_eq!(masked_psnr(&a, &b, &m).unwrap(), masked_psnr(&b, &a, &m).unwrap());
        prop_assert!((masked_ssim(&a, &b, &m).unwrap() - masked_ssim(&b, &a, &m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_images_score_the_caps((a, _) in img_strategy()) {
        let m = Mask::full(16, 16);
        prop_assert_eq!(masked_psnr(&a, &a, &m).unwrap(), 99.0);
        prop_assert!((masked_ssim(&a, &a, &m).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_falls_as_the_error_grows((a, b) in img_strategy(), k in 1.1f32..4.0) {
        // scaling the error by k costs exactly 20·log10(k) dB
        let far: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| x + k * (y - x)).collect();
        let far = Tensor::from_vec(a.shape(), far).unwrap();
        let m = Mask::full(16, 16);
        let (near_db, far_db) = (masked_psnr(&a, &b, &m).unwrap(), masked_psnr(&a, &far, &m).unwrap());
        prop_assume!(near_db < 99.0);
        prop_assert!(far_db < near_db);
        prop_assert!((near_db - far_db - 20.0 * (k as f64).log10()).abs() < 1e-3);
    }
}
