mod common;

use common::small_dataset;
use tagcausal::backbone::BackboneKind;
use tagcausal::estimator::{Strategy, UploaderPool};
use tagcausal::synth::{generate, GenConfig};
use tagcausal::train::{backdoor_adjust_train, burn_in, fit, init_model, StopReason, TrainConfig};

fn cfg(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.embed_dim = 8;
    c.negatives_per_positive = 10;
    c.batch_size = Some(128);
    c.seed = seed;
    c.optimizer.learning_rate = 1e-2;
    c
}

#[test]
fn burn_in_lowers_the_loss_on_most_seeds() {
    let mut decreasing = 0;
    for seed in 0..5 {
        let ds = generate(&GenConfig::small(60, 40, 2.0, seed)).unwrap();
        let c = cfg(seed);
        let pool = UploaderPool::from_dataset(&ds).unwrap();
        let (model, _, mut store) = init_model(&ds, &c).unwrap();
        let logs = burn_in(&model, &mut store, &ds, &pool, &c).unwrap();
        assert_eq!(logs.len(), 5);
        if logs[4].mean_loss < logs[0].mean_loss {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 3, "{decreasing}/5");
}

#[test]
fn empty_loops_leave_parameters_alone() {
    let ds = small_dataset(0);
    for backbone in [BackboneKind::Nfm, BackboneKind::Lightgcn] {
        let mut c = cfg(1);
        c.backbone = backbone;
        c.n_warm = 0;
        c.max_epochs = Some(0);
        let pool = UploaderPool::from_dataset(&ds).unwrap();
        let (model, _, mut store) = init_model(&ds, &c).unwrap();
        let init = store.tensors().to_vec();
        assert!(burn_in(&model, &mut store, &ds, &pool, &c).unwrap().is_empty());
        assert_eq!(store.tensors(), init.as_slice());

        c.n_warm = 2;
        burn_in(&model, &mut store, &ds, &pool, &c).unwrap();
        let warmed = store.tensors().to_vec();
        assert_ne!(warmed, init);
        let out = backdoor_adjust_train(&model, &mut store, &ds, None, &pool, &c).unwrap();
        assert!(out.logs.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.best, warmed);
        assert_eq!(store.tensors(), warmed.as_slice());
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let ds = small_dataset(2);
    for strategy in Strategy::ALL {
        let mut c = cfg(3);
        c.strategy = strategy;
        c.n_warm = 2;
        c.max_epochs = Some(2);
        let a = fit(&ds, None, &c).unwrap();
        let b = fit(&ds, None, &c).unwrap();
        assert_eq!(a.best.tensors(), b.best.tensors());
        assert_eq!(serde_json::to_string(&a.manifest).unwrap(), serde_json::to_string(&b.manifest).unwrap());
    }
}

#[test]
fn long_single_sample_run_stays_finite() {
    let ds = generate(&GenConfig::small(40, 30, 4.0, 5)).unwrap();
    let mut c = TrainConfig::default();
    c.embed_dim = 8;
    c.max_epochs = Some(200);
    c.negatives_per_positive = 10;
    let out = fit(&ds, None, &c).unwrap();
    assert_eq!(c.batch_size(), 1024);
    assert_eq!(out.manifest.stop_reason, StopReason::MaxEpochs);
    assert_eq!(out.manifest.epochs.len(), 205);
    assert!(out.manifest.epochs.iter().all(|e| e.mean_loss.is_finite()));
}

#[test]
fn early_stopping_keeps_the_best_snapshot() {
    let ds = generate(&GenConfig::small(80, 40, 2.0, 6)).unwrap();
    let sp = tagcausal::synth::intervened_split(&ds, &tagcausal::synth::InterventionSpec::new(3, 0)).unwrap();
    let mut c = cfg(0);
    c.max_epochs = Some(30);
    c.patience = 3;
    let out = fit(&sp.train, Some(&sp.valid), &c).unwrap();
    let adjust: Vec<f64> = out.manifest.epochs[5..].iter().map(|e| e.valid_ndcg10.unwrap()).collect();
    if out.manifest.stop_reason == StopReason::EarlyStop {
        assert_eq!(adjust.len(), out.manifest.best_epoch + 3);
    }
    if out.manifest.best_epoch > 0 {
        let best = adjust[out.manifest.best_epoch - 1];
        assert_eq!(Some(best), out.manifest.best_valid_ndcg10);
        assert!(adjust.iter().all(|&v| v <= best));
    }
}
