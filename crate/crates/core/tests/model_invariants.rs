mod common;

use common::*;
use proptest::prelude::*;
use sparse_dan::model::{concat_compare, softmax};
use sparse_dan::{Input, ModelConfig, Pooling};

fn pooling_strategy() -> impl Strategy<Value = Pooling> {
    prop_oneof![
        Just(Pooling::Mean),
        Just(Pooling::Max),
        Just(Pooling::Sum),
        Just(Pooling::Attentive)
    ]
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalizes(z in prop::collection::vec(-800.0f64..800.0, 1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn predictions_are_distributions(
        pooling in pooling_strategy(),
        ids in prop::collection::vec(0u32..16, 0..20),
        seed in 0u64..1000,
    ) {
        let m = toy_model(toy_config(pooling, false, vec![6]), 16, seed);
        let p = m.predict_proba(Input::Single(&ids)).unwrap();
        prop_assert_eq!(p.len(), 3);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance(
        pooling in pooling_strategy(),
        ids in prop::collection::vec(0u32..16, 1..20),
        shuffle_seed in any::<u64>(),
        seed in 0u64..1000,
    ) {
        use rand::seq::SliceRandom;
        let m = toy_model(toy_config(pooling, false, vec![6]), 16, seed);
        let mut perm = ids.clone();
        perm.shuffle(&mut rng(shuffle_seed));
        let a = m.pool(&ids).unwrap().output;
        let b = m.pool(&perm).unwrap().output;
        prop_assert!(close(&a, &b, 1e-12));
        let pa = m.predict_proba(Input::Single(&ids)).unwrap();
        let pb = m.predict_proba(Input::Single(&perm)).unwrap();
        prop_assert!(close(&pa, &pb, 1e-12));
    }

    #[test]
    fn sum_is_k_times_mean(ids in prop::collection::vec(0u32..16, 1..20), seed in 0u64..1000) {
        let mean = toy_model(toy_config(Pooling::Mean, false, vec![4]), 16, seed);
        let mut cfg = mean.config().clone();
        cfg.pooling = Pooling::Sum;
        let sum = sparse_dan::DanModel::from_parts(
            cfg,
            mean.vocab_arc().clone(),
            mean.embedding.clone(),
            mean.layers.clone(),
            None,
        ).unwrap();
        let k = ids.len() as f64;
        let hm: Vec<f64> = mean.pool(&ids).unwrap().output.iter().map(|x| x * k).collect();
        prop_assert!(close(&sum.pool(&ids).unwrap().output, &hm, 1e-12));
    }

    #[test]
    fn attentive_with_zero_v_is_mean(ids in prop::collection::vec(0u32..16, 1..20), seed in 0u64..1000) {
        let mut att = toy_model(toy_config(Pooling::Attentive, false, vec![4]), 16, seed);
        att.attention.as_mut().unwrap().v.iter_mut().for_each(|x| *x = 0.0);
        let mean = sparse_dan::DanModel::from_parts(
            ModelConfig { pooling: Pooling::Mean, ..att.config().clone() },
            att.vocab_arc().clone(),
            att.embedding.clone(),
            att.layers.clone(),
            None,
        ).unwrap();
        prop_assert!(close(&att.pool(&ids).unwrap().output, &mean.pool(&ids).unwrap().output, 1e-12));
        let w = att.pool(&ids).unwrap().attention;
        prop_assert!(w.iter().all(|a| (a - 1.0 / ids.len() as f64).abs() < 1e-12));
    }

    #[test]
    fn max_pool_bounds(ids in prop::collection::vec(0u32..16, 1..20), seed in 0u64..1000) {
        let m = toy_model(toy_config(Pooling::Max, false, vec![4]), 16, seed);
        let h = m.pool(&ids).unwrap().output;
        for (d, hd) in h.iter().enumerate() {
            let best = ids.iter().map(|&i| m.row(i)[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(*hd, best);
        }
    }

    #[test]
    fn pair_block_symmetry(
        pooling in pooling_strategy(),
        left in prop::collection::vec(0u32..16, 0..10),
        right in prop::collection::vec(0u32..16, 0..10),
        seed in 0u64..1000,
    ) {
        let m = toy_model(toy_config(pooling, true, vec![4]), 16, seed);
        let ab = m.forward(Input::Pair(&left, &right)).unwrap().pooled;
        let ba = m.forward(Input::Pair(&right, &left)).unwrap().pooled;
        let de = m.embed_dim();
        prop_assert_eq!(ab.len(), 4 * de);
        prop_assert_eq!(&ab[..de], &ba[de..2 * de]);
        prop_assert_eq!(&ab[de..2 * de], &ba[..de]);
        prop_assert_eq!(&ab[2 * de..], &ba[2 * de..]);
        let h1 = m.pool(&left).unwrap().output;
        let h2 = m.pool(&right).unwrap().output;
        prop_assert_eq!(ab, concat_compare(&h1, &h2));
    }

    #[test]
    fn f32_copy_tracks_f64(pooling in pooling_strategy(), ids in prop::collection::vec(0u32..16, 0..12), seed in 0u64..100) {
        let m = toy_model(toy_config(pooling, false, vec![5, 3]), 16, seed);
        let p64 = m.predict_proba(Input::Single(&ids)).unwrap();
        let p32 = m.cast::<f32>().predict_proba(Input::Single(&ids)).unwrap();
        for (a, b) in p64.iter().zip(&p32) {
            prop_assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}

#[test]
fn empty_input_pools_to_zero() {
    for pooling in [Pooling::Mean, Pooling::Max, Pooling::Sum, Pooling::Attentive] {
        let m = toy_model(toy_config(pooling, false, vec![4]), 8, 1);
        assert!(m.pool(&[]).unwrap().output.iter().all(|x| *x == 0.0));
    }
}

#[test]
fn deeper_heads_have_expected_shapes() {
    let m = toy_model(toy_config(Pooling::Mean, false, vec![7, 5, 3]), 8, 1);
    let t = m.forward(Input::Single(&[1, 2])).unwrap();
    assert_eq!(t.pre_activations.iter().map(Vec::len).collect::<Vec<_>>(), vec![7, 5, 3, 3]);
    assert_eq!(t.activations.len(), 3);
    assert!(t.activations.iter().flatten().all(|x| *x >= 0.0));
    assert_eq!(m.dense_param_names(), ["w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"]);
}

#[test]
fn out_of_range_id_is_structural_error() {
    let m = toy_model(toy_config(Pooling::Mean, false, vec![4]), 8, 1);
    assert!(matches!(m.pool(&[8]), Err(sparse_dan::Error::Structural(_))));
}

#[test]
fn param_count_closed_form() {
    let cfg = ModelConfig {
        embed_dim: 1000,
        hidden: vec![1000],
        n_classes: 2,
        ..ModelConfig::default()
    };
    let p = cfg.param_count(1_000_000);
    assert_eq!(p.sparse, 1_000_000_000);
    assert_eq!(p.dense, 1000 * 1000 + 1000 + 1000 * 2 + 2);
    assert_eq!(p.total, p.sparse + p.dense);
    let pair = ModelConfig { pair_mode: true, ..cfg.clone() };
    assert_eq!(pair.param_count(10).dense, 4000 * 1000 + 1000 + 1000 * 2 + 2);
    let att = ModelConfig { pooling: Pooling::Attentive, attention_dim: 64, ..cfg };
    assert_eq!(att.param_count(10).dense, p.dense + 2 * 1000 * 64 + 64);
    let m = toy_model(toy_config(Pooling::Attentive, true, vec![5]), 9, 0);
    let counted: usize = m.embedding.len() + m.dense_params().iter().map(|d| d.len()).sum::<usize>();
    assert_eq!(m.param_count().total, counted as u64);
}
