use flowforge::convkit::Tensor4;
use flowforge::datakit::{decode_pnm, encode_pnm, Checkpoint};
use flowforge::flows::{dequantize, quantize, ConvKind, FlowModel, ModelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_kind() -> impl Strategy<Value = ConvKind> {
    prop_oneof![
        Just(ConvKind::W1x1),
        Just(ConvKind::Plu),
        (1usize..4).prop_map(|k| ConvKind::Qr { reflections: Some(k) }),
        prop_oneof![Just(1usize), Just(3)].prop_map(|kernel| ConvKind::Emerging { kernel }),
        prop_oneof![Just(1usize), Just(3)].prop_map(|kernel| ConvKind::Periodic { kernel }),
    ]
}

fn model_spec() -> impl Strategy<Value = ModelSpec> {
    (1usize..3, 1usize..3, 1usize..4, conv_kind(), 1usize..4, any::<u64>()).prop_map(
        |(levels, depth, half, conv, channels, seed)| {
            let side = half << levels;
            ModelSpec { levels, depth, coupling_width: 4, conv, channels, height: side, width: side, seed }
        },
    )
}

fn pixels(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(n, c, h, w, |_, _, _, _| f64::from(rng.random_range(0u8..=255)))
}

fn initialized(spec: ModelSpec) -> (FlowModel, Tensor4) {
    let mut model = FlowModel::new(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Tensor4::from_fn(3, spec.channels, spec.height, spec.width, |_, _, _, _| rng.random::<f64>());
    model.initialize(&x).unwrap();
    (model, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_inverse_recovers_input(spec in model_spec()) {
        let (model, x) = initialized(spec);
        let pass = model.forward(&x).unwrap();
        let back = model.inverse(&pass.z, &pass.latents).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-8, "{spec:?}: {}", back.max_abs_diff(&x));
    }

    #[test]
    fn checkpoint_bytes_round_trip(spec in model_spec()) {
        let (model, x) = initialized(spec);
        let bytes = Checkpoint::from_model(&model, 7, None).to_bytes().unwrap();
        let restored = Checkpoint::from_bytes(&bytes).unwrap().to_model().unwrap();
        for id in model.store().ids() {
            let a: Vec<u64> = model.store().get(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = restored.store().get(id).data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        let lp = model.log_prob(&x).unwrap();
        let lq = restored.log_prob(&x).unwrap();
        prop_assert_eq!(lp, lq);
    }

    #[test]
    fn truncated_checkpoint_is_an_error(spec in model_spec(), cut in 0.0f64..1.0) {
        let (model, _) = initialized(spec);
        let bytes = Checkpoint::from_model(&model, 0, None).to_bytes().unwrap();
        let end = (cut * bytes.len() as f64) as usize;
        prop_assert!(Checkpoint::from_bytes(&bytes[..end]).is_err());
    }

    #[test]
    fn quantize_undoes_dequantize(seed in any::<u64>(), c in 1usize..4, side in 1usize..6) {
        let x = pixels(2, c, side, side, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let u = Tensor4::from_fn(2, c, side, side, |_, _, _, _| rng.random::<f64>());
        prop_assert_eq!(quantize(&dequantize(&x, &u).unwrap()), x);
    }

    #[test]
    fn pnm_round_trip(seed in any::<u64>(), gray in any::<bool>(), h in 1usize..9, w in 1usize..9) {
        let c = if gray { 1 } else { 3 };
        let img = pixels(1, c, h, w, seed);
        let bytes = encode_pnm(&img, 0).unwrap();
        prop_assert_eq!(decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn pnm_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_pnm(&bytes);
    }

    #[test]
    fn pnm_decoder_rejects_oversized_headers(w in 1usize..100_000, h in 1usize..100_000) {
        let bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        prop_assert!(decode_pnm(&bytes).is_err());
    }
}
