mod common;

use common::*;
use rand::Rng;
use sparse_dan::optim::{backward, AdamConfig, Batch, LossMode, TrainState};
use sparse_dan::{Example, Pooling};

#[test]
fn all_rows_touched_matches_dense_adam_for_100_steps() {
    let cfg = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    for pooling in [Pooling::Mean, Pooling::Attentive] {
        let worst = adam_trajectory_deviation(pooling, 100, cfg);
        assert!(worst <= 1e-6, "{pooling:?}: max deviation {worst:e}");
    }
}

#[test]
fn single_and_five_steps_match() {
    for steps in [1, 5] {
        let worst = adam_trajectory_deviation(Pooling::Max, steps, AdamConfig::default());
        assert!(worst <= 1e-6, "{steps} steps: {worst:e}");
    }
}

#[test]
fn untouched_rows_are_bit_frozen() {
    let mut model = toy_model(toy_config(Pooling::Sum, false, vec![4]), 40, 2);
    let start = model.clone();
    let mut state = TrainState::new(&model, AdamConfig::default());
    let mut r = rng(3);
    let mut ever = std::collections::BTreeSet::new();
    for step in 0..50 {
        let mut ex = random_examples(&model, 3, LossMode::Ft, step);
        for e in &mut ex {
            if let Example::Single(s) = e {
                s.ids = (0..r.gen_range(1..4)).map(|_| r.gen_range(0..20)).collect();
            }
        }
        let before = model.clone();
        let batch = Batch::new(ex.iter().collect(), LossMode::Ft, 3).unwrap();
        let g = backward(&model, &batch, 1.0, false).unwrap().gradients;
        state.step(&mut model, &g);
        for id in 0..40u32 {
            if g.embedding.contains_key(&id) {
                ever.insert(id);
            } else {
                let same = model.row(id).iter().zip(before.row(id)).all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "row {id} moved at step {step} without a gradient");
            }
        }
    }
    for id in 20..40u32 {
        assert!(!ever.contains(&id));
        assert!(model.row(id).iter().zip(start.row(id)).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(state.row_moments(id).is_none());
    }
    assert_eq!(state.touched_rows(), ever.len());
}

#[test]
fn row_step_counts_only_touches() {
    let mut model = toy_model(toy_config(Pooling::Mean, false, vec![3]), 5, 4);
    let mut state = TrainState::new(&model, AdamConfig::default());
    for step in 0..7u64 {
        let mut ex = random_examples(&model, 1, LossMode::Ft, step);
        if let Example::Single(s) = &mut ex[0] {
            s.ids = if step % 2 == 0 { vec![0, 1] } else { vec![0] };
        }
        let batch = Batch::new(ex.iter().collect(), LossMode::Ft, 3).unwrap();
        let g = backward(&model, &batch, 1.0, false).unwrap().gradients;
        state.step(&mut model, &g);
    }
    assert_eq!(state.global_step, 7);
    assert_eq!(state.row_moments(0).unwrap().step, 7);
    assert_eq!(state.row_moments(1).unwrap().step, 4);
}

#[test]
fn row_touched_on_steps_1_and_5_matches_two_step_dense_run() {
    let mut model = toy_model(toy_config(Pooling::Mean, false, vec![3]), 6, 8);
    let start = model.row(3).to_vec();
    let cfg = AdamConfig {
        lr: 5e-2,
        ..AdamConfig::default()
    };
    let mut state = TrainState::new(&model, cfg);
    let mut seen = Vec::new();
    for step in 1..=7u64 {
        let mut ex = random_examples(&model, 2, LossMode::Ft, step);
        for e in &mut ex {
            if let Example::Single(s) = e {
                s.ids = if step == 1 || step == 5 { vec![0, 3, 3] } else { vec![0, 1] };
            }
        }
        let batch = Batch::new(ex.iter().collect(), LossMode::Ft, 3).unwrap();
        let g = backward(&model, &batch, 1.0, false).unwrap().gradients;
        if let Some(row) = g.embedding.get(&3) {
            seen.push(row.clone());
        }
        state.step(&mut model, &g);
    }
    assert_eq!(seen.len(), 2);
    let mut reference = start.clone();
    let mut dense = DenseAdam::new(cfg, reference.len());
    for g in &seen {
        dense.step(&mut reference, g);
    }
    assert_ne!(reference, start);
    assert!(max_abs_diff(model.row(3), &reference) < 1e-12);
    assert_eq!(state.row_moments(3).unwrap().step, 2);
}
