use fvsr_tensor::{Checkpoint, Tape, Tensor, Window};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffle_pair_round_trips(r in prop::sample::select(vec![2usize, 4]), b in 1usize..3, c in 1usize..4,
                                hb in 1usize..4, wb in 1usize..4, seed in any::<u64>()) {
        let tape = Tape::inference();
        let x = tensor([b, c, hb * r, wb * r], seed);
        let down = tape.pixel_unshuffle_down(&x, r).unwrap();
        prop_assert_eq!(down.shape(), &[b, c * r * r, hb, wb]);
        prop_assert!(tape.pixel_shuffle_up(&down, r).unwrap().bit_eq(&x));
        let y = tensor([b, c * r * r, hb, wb], seed ^ 1);
        let up = tape.pixel_shuffle_up(&y, r).unwrap();
        prop_assert!(tape.pixel_unshuffle_down(&up, r).unwrap().bit_eq(&y));
    }

    #[test]
    fn zero_flow_warp_is_identity(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let tape = Tape::inference();
        let x = tensor([1, c, h, w], seed);
        let y = tape.warp_bilinear(&x, &Tensor::zeros(&[1, 2, h, w])).unwrap();
        prop_assert!(y.bit_eq(&x));
    }

    #[test]
    fn concat_then_slice_recovers_parts(c1 in 1usize..4, c2 in 1usize..4, seed in any::<u64>()) {
        let tape = Tape::inference();
        let a = tensor([2, c1, 3, 5], seed);
        let b = tensor([2, c2, 3, 5], seed ^ 7);
        let cat = tape.concat_channels(&[&a, &b]).unwrap();
        prop_assert!(tape.slice_channels(&cat, 0, c1).unwrap().bit_eq(&a));
        prop_assert!(tape.slice_channels(&cat, c1, c2).unwrap().bit_eq(&b));
    }

    #[test]
    fn paste_then_crop_recovers_window(y0 in 0usize..5, x0 in 0usize..5, seed in any::<u64>()) {
        let tape = Tape::inference();
        let patch = tensor([1, 2, 3, 3], seed);
        let win = [Window { y0, x0 }];
        let canvas = tape.paste_windows(&patch, &win, 8, 8).unwrap();
        prop_assert!(tape.crop_windows(&canvas, &win, 3).unwrap().bit_eq(&patch));
    }

    #[test]
    fn forward_passes_are_deterministic(seed in any::<u64>()) {
        let x = tensor([1, 2, 6, 6], seed);
        let w = tensor([3, 2, 3, 3], seed ^ 3);
        let off = tensor([1, 2, 6, 6], seed ^ 5);
        let m = tensor([1, 1, 6, 6], seed ^ 9);
        let b = Tensor::zeros(&[3]);
        let run = || {
            let t = Tape::inference();
            let h = t.conv2d(&x, &w, Some(&b), 1, 1).unwrap();
            let h = t.warp_bilinear(&h, &off).unwrap();
            t.dcn_lite(&x, &off, &m, &w, &b).unwrap().to_vec().into_iter().chain(h.to_vec()).collect::<Vec<_>>()
        };
        let (a, bb) = (run(), run());
        prop_assert!(a.iter().zip(&bb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(any::<f32>(), 1..40)) {
        let mut ck = Checkpoint::default();
        let n = values.len();
        ck.tensors.insert("p".into(), Tensor::from_vec(&[n], values).unwrap());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        prop_assert!(back.tensors["p"].bit_eq(&ck.tensors["p"]));
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut ck = Checkpoint {
        header: "seed = 3".into(),
        ..Default::default()
    };
    ck.tensors.insert("w".into(), tensor([2, 1, 3, 3], 1));
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.header, "seed = 3");
    assert!(back.tensors["w"].bit_eq(&ck.tensors["w"]));
}
