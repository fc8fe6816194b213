use netadapt_core::autograd::Graph;
use netadapt_core::backbone::{Backbone, BackboneConfig, FrozenParameterSet};
use netadapt_core::encoder::{EncoderParams, InputSpec, ModalityKind, MultimodalEncoder};
use netadapt_core::params::{Adam, AdamConfig, ParamStore};
use netadapt_core::tensor::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(layers: usize, heads: usize) -> BackboneConfig {
    BackboneConfig {
        num_layers: layers,
        model_dim: 8 * heads,
        num_heads: heads,
        max_context: 32,
        adapter_rank: 2,
        ..BackboneConfig::default()
    }
}

fn build(cfg: &BackboneConfig, seed: u64) -> (Backbone, ParamStore, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frozen = FrozenParameterSet::random(cfg, &mut rng);
    let mut store = ParamStore::new();
    let bb = Backbone::new(cfg.clone(), frozen, &mut store, &mut rng).unwrap();
    (bb, store, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frozen_checksum_survives_training(seed in 0u64..1000, steps in 1usize..6, len in 1usize..12) {
        let cfg = config(2, 2);
        let (bb, mut store, mut rng) = build(&cfg, seed);
        let before = bb.frozen().checksum();
        let mut adam = Adam::new(&store, AdamConfig { lr: 0.05, ..AdamConfig::default() });
        let x = Matrix::randn(len, cfg.model_dim, 1.0, &mut rng);
        let target = Matrix::randn(len, cfg.model_dim, 1.0, &mut rng);
        for _ in 0..steps {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let mut s = bb.session();
            let y = s.extend(&mut g, &store, xv, &vec![true; len]).unwrap();
            let t = g.constant(target.clone());
            let loss = g.mse(y, t);
            let grads = g.backward(loss).param_grads();
            adam.step(&mut store, &grads);
        }
        prop_assert_eq!(bb.frozen().checksum(), before);
        prop_assert!(bb.verify_frozen().is_ok());
    }

    #[test]
    fn fresh_adapters_are_transparent(seed in 0u64..1000, len in 1usize..32, layers in 1usize..4) {
        let cfg = config(layers, 2);
        let (mut bb, store, mut rng) = build(&cfg, seed);
        let x = Matrix::randn(len, cfg.model_dim, 1.0, &mut rng);
        let valid = vec![true; len];
        let with = bb.forward(&store, &x, &valid).unwrap();
        bb.set_adapters_enabled(false);
        let without = bb.forward(&store, &x, &valid).unwrap();
        prop_assert_eq!(with.data, without.data);
    }

    #[test]
    fn later_tokens_do_not_reach_earlier_outputs(seed in 0u64..1000, len in 2usize..20, cut in 0usize..19) {
        let t = cut % (len - 1);
        let cfg = config(2, 2);
        let (bb, store, mut rng) = build(&cfg, seed);
        let x = Matrix::randn(len, cfg.model_dim, 1.0, &mut rng);
        let valid = vec![true; len];
        let base = bb.forward(&store, &x, &valid).unwrap();
        let mut y = x.clone();
        for v in &mut y.data[(t + 1) * cfg.model_dim..] {
            *v += 3.0;
        }
        let moved = bb.forward(&store, &y, &valid).unwrap();
        let d = cfg.model_dim;
        prop_assert_eq!(&base.data[..(t + 1) * d], &moved.data[..(t + 1) * d]);
        prop_assert_ne!(&base.data[(t + 1) * d..], &moved.data[(t + 1) * d..]);
    }

    #[test]
    fn projections_close_to_model_width(
        seed in 0u64..1000,
        dim in prop::sample::select(vec![8usize, 16, 24]),
        series in prop::collection::vec(-50.0f64..50.0, 1..12),
        scalar in -1e3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let specs = [
            InputSpec::new("series", ModalityKind::TimeSeries, EncoderParams::default()),
            InputSpec::new("level", ModalityKind::Scalar, EncoderParams::default()),
        ];
        let enc = MultimodalEncoder::new(&specs, dim, &mut store, &mut rng).unwrap();
        let f = enc.encode_timeseries(&store, "series", &series).unwrap();
        let a = enc.project(&store, "series", &f).unwrap();
        let b = enc.project(&store, "series", &enc.encode_timeseries(&store, "series", &series).unwrap()).unwrap();
        prop_assert_eq!(a.values().len(), dim);
        prop_assert_eq!(a.values(), b.values());
        prop_assert!(a.values().iter().all(|v| v.is_finite()));
        let s = enc.encode_scalar(&store, "level", scalar).unwrap();
        let e = enc.project(&store, "level", &s).unwrap();
        prop_assert_eq!(e.values().len(), dim);
    }
}
