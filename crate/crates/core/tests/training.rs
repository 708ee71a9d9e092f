use proptest::prelude::*;
use ttv_core::corpus::toy::toy_dataset;
use ttv_core::corpus::FragmentDataset;
use ttv_core::latent::attribute_vector;
use ttv_core::spiral::SpiralConfig;
use ttv_core::vae::train::{split_indices, LEDGER_HEADER};
use ttv_core::vae::{ledger_csv, train, ModelConfig, StopReason};
use ttv_core::Error;

fn data(n: usize) -> FragmentDataset {
    toy_dataset(n, 3, &SpiralConfig::default()).unwrap()
}

fn short() -> ModelConfig {
    ModelConfig { max_epochs: 2, split: [0.7, 0.2, 0.1], ..ModelConfig::tiny() }
}

#[test]
fn training_is_reproducible() {
    let d = data(12);
    let a = train(&d, &short()).unwrap();
    let b = train(&d, &short()).unwrap();
    assert_eq!(ledger_csv(&a.ledger), ledger_csv(&b.ledger));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.splits, b.splits);
    assert_eq!(a.stop, StopReason::MaxEpochs);

    let other = train(&d, &ModelConfig { rng_seed: 1, ..short() }).unwrap();
    assert_ne!(other.checkpoint.id(), a.checkpoint.id());
}

#[test]
fn ledger_has_one_row_per_split_and_epoch() {
    let out = train(&data(12), &short()).unwrap();
    let csv = ledger_csv(&out.ledger);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LEDGER_HEADER));
    let splits: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(splits, ["train", "validation", "train", "validation", "test"]);
    assert!(out.ledger.iter().all(|r| r.loss.total.is_finite()));
    assert!(out.checkpoint.schedule.trained);
    assert_eq!(out.checkpoint.schedule.epochs_run, out.checkpoint.schedule.best_epoch);
}

#[test]
fn too_few_fragments_is_invalid_input() {
    let err = train(&data(9), &short()).err().unwrap();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    assert!(err.is_invalid_input());
}

#[test]
fn bad_config_is_invalid_input() {
    let d = data(12);
    for cfg in [
        ModelConfig { batch_size: 0, ..short() },
        ModelConfig { split: [0.5, 0.5, 0.5], ..short() },
        ModelConfig { grad_clip: Some(0.0), ..short() },
        ModelConfig { latent_dim: 0, ..short() },
    ] {
        assert!(train(&d, &cfg).err().unwrap().is_invalid_input());
    }
}

#[test]
fn patience_stops_early() {
    // Weights barely move while the KL weight keeps rising, so validation
    // loss never beats the first epoch.
    let cfg = ModelConfig { learning_rate: 1e-300, max_epochs: 10, early_stop_patience: 2, ..short() };
    let out = train(&data(12), &cfg).unwrap();
    assert_eq!(out.stop, StopReason::Patience);
    assert_eq!(out.checkpoint.schedule.best_epoch, 1);
    assert_eq!(out.ledger.iter().filter(|r| r.split == "train").count(), 3);
}

#[test]
fn attribute_vector_is_antisymmetric() {
    let d = data(12);
    let params = train(&d, &short()).unwrap().checkpoint.params;
    let ab = attribute_vector("x", &params, &d, &[0, 1, 2], &[5, 7]).unwrap();
    let ba = attribute_vector("x", &params, &d, &[5, 7], &[0, 1, 2]).unwrap();
    assert!(ab.values.iter().zip(&ba.values).all(|(a, b)| (a + b).abs() < 1e-12));
    let aa = attribute_vector("x", &params, &d, &[3, 4], &[4, 3]).unwrap();
    assert!(aa.values.iter().all(|v| v.abs() < 1e-12));
    assert!(matches!(attribute_vector("x", &params, &d, &[0, 99], &[1]), Err(Error::MissingId(99))));
    assert!(attribute_vector("x", &params, &d, &[], &[1]).is_err());
}

proptest! {
    #[test]
    fn splits_partition_the_corpus(n in 10usize..400, seed in 0u64..50, v in 0.0f64..0.3, t in 0.0f64..0.3) {
        let [train, val, test] = split_indices(n, [1.0 - v - t, v, t], seed);
        prop_assert_eq!(val.len(), (n as f64 * v).floor() as usize);
        prop_assert_eq!(test.len(), (n as f64 * t).floor() as usize);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, [1.0 - v - t, v, t], seed)[0].clone(), train);
    }
}
