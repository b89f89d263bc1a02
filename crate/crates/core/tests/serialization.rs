mod common;

use std::sync::Arc;
use std::time::Instant;

use common::*;
use sparse_dan::model::model_file_width;
use sparse_dan::{DanModel, Error, FrequencySource, Input, ModelConfig, NgramVocab, Pooling};

/// FNV-1a, written out again so forged files get a valid trailer.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn reseal(bytes: &mut Vec<u8>) {
    let n = bytes.len() - 8;
    let sum = fnv1a(&bytes[..n]);
    bytes[n..].copy_from_slice(&sum.to_le_bytes());
}

fn synthetic_vocab(n: usize) -> NgramVocab {
    let entries = (0..n).map(|i| (format!("g{i}"), (n - i) as u64)).collect();
    NgramVocab::from_ranked(entries, (1, 1), FrequencySource::CorpusAndTrain).unwrap()
}

#[test]
fn every_architecture_round_trips() {
    for pooling in [Pooling::Mean, Pooling::Max, Pooling::Sum, Pooling::Attentive] {
        for pair in [false, true] {
            for hidden in [vec![], vec![5], vec![6, 4]] {
                let m = toy_model(toy_config(pooling, pair, hidden), 11, 5);
                let back = DanModel::<f64>::from_bytes(&m.to_bytes()).unwrap();
                assert_eq!(back, m);
                let m32 = m.cast::<f32>();
                assert_eq!(DanModel::<f32>::from_bytes(&m32.to_bytes()).unwrap(), m32);
            }
        }
    }
}

#[test]
fn files_and_widths() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_model(toy_config(Pooling::Mean, false, vec![3]), 6, 1);
    let p64 = dir.path().join("m64.bin");
    let p32 = dir.path().join("m32.bin");
    m.save(&p64).unwrap();
    m.cast::<f32>().save(&p32).unwrap();
    assert_eq!(model_file_width(&p64).unwrap(), 8);
    assert_eq!(model_file_width(&p32).unwrap(), 4);
    assert!(matches!(DanModel::<f32>::load(&p64), Err(Error::Integrity { offset: 12, .. })));
    assert_eq!(DanModel::<f64>::load(&p64).unwrap(), m);
}

#[test]
fn corruption_is_detected() {
    let m = toy_model(toy_config(Pooling::Attentive, false, vec![3]), 6, 1);
    let bytes = m.to_bytes();
    for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(DanModel::<f64>::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(matches!(DanModel::<f64>::from_bytes(&flipped), Err(Error::Integrity { .. })));

    let mut version = bytes.clone();
    version[8] = 9;
    reseal(&mut version);
    assert!(matches!(
        DanModel::<f64>::from_bytes(&version),
        Err(Error::Version { found: 9, expected: 1 })
    ));

    let vocab_bytes = m.vocab().to_bytes();
    assert!(matches!(DanModel::<f64>::from_bytes(&vocab_bytes), Err(Error::BadMagic { .. })));
    assert!(matches!(NgramVocab::from_bytes(&bytes), Err(Error::BadMagic { .. })));
}

#[test]
fn forged_fields_report_their_offset() {
    let m = toy_model(toy_config(Pooling::Mean, false, vec![3]), 6, 1);
    let mut bytes = m.to_bytes();
    // magic, version, width, n_classes, embed_dim, n_hidden, one width
    let pooling_at = 8 + 4 + 1 + 4 + 4 + 4 + 4;
    bytes[pooling_at] = 77;
    reseal(&mut bytes);
    match DanModel::<f64>::from_bytes(&bytes) {
        Err(Error::Integrity { offset, .. }) => assert_eq!(offset, pooling_at),
        other => panic!("expected integrity error, got {:?}", other.err()),
    }

    let mut short = m.to_bytes();
    let body_end = short.len() - 8;
    short.remove(body_end - 1);
    reseal(&mut short);
    match DanModel::<f64>::from_bytes(&short) {
        Err(Error::Integrity { offset, .. }) => assert!(offset < body_end),
        other => panic!("expected integrity error, got {:?}", other.err()),
    }
}

#[test]
fn million_entry_vocab_round_trip() {
    let v = synthetic_vocab(1_000_000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bin");
    v.save(&path).unwrap();
    let t = Instant::now();
    let back = NgramVocab::load(&path).unwrap();
    eprintln!("1M-entry vocab load: {:?}", t.elapsed());
    assert_eq!(back, v);
}

#[test]
fn million_row_model_round_trip() {
    let vocab = Arc::new(synthetic_vocab(1_000_000));
    let cfg = ModelConfig {
        embed_dim: 16,
        hidden: vec![8],
        ..ModelConfig::default()
    };
    let m = DanModel::<f64>::new(vocab, cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    let t = Instant::now();
    let back = DanModel::<f64>::load(&path).unwrap();
    eprintln!("1M x 16 model load: {:?}", t.elapsed());
    assert!(back == m);
    let ids = [0, 999_999, 123_456];
    assert_eq!(
        back.predict_proba(Input::Single(&ids)).unwrap(),
        m.predict_proba(Input::Single(&ids)).unwrap()
    );
}
