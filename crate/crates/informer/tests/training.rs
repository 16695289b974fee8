mod common;

use common::sinusoid_dataset;
use stratlab_informer::{evaluate, predict_series, train, Dataset, InformerConfig, InformerModel, InputSpec, LossKind};

fn tiny(loss: LossKind) -> InformerConfig {
    InformerConfig {
        past_window: 8,
        d_model: 32,
        d_ff: 32,
        n_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        dropout: 0.05,
        loss,
        batch_size: 16,
        learning_rate: 1e-3,
        max_epochs: 5,
        patience: 100,
        validate_every: 5,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn training_lowers_loss_on_sinusoid() {
    let ds = sinusoid_dataset(300, 20, 0.001, 1);
    let cfg = tiny(LossKind::Rmse);
    let rows = ds.sample_rows(0..200, cfg.past_window);
    let untrained = InformerModel::<f64>::new(cfg.clone(), InputSpec { n_real: 3, cardinalities: vec![24, 7] }).unwrap();
    let before = evaluate(&untrained, &ds, &rows).unwrap();
    let (model, log) = train(&cfg, &ds, 0..200, 200..300).unwrap();
    let after = evaluate(&model, &ds, &rows).unwrap();
    assert!(after < before, "{after} vs {before}");
    assert_eq!(log.epochs_run, 5);
    assert!(log.points.len() > 2);
    assert!(log.best_val_loss < log.points[0].val_loss);
}

#[test]
fn patience_one_with_frozen_weights_stops_at_first_check() {
    let ds = sinusoid_dataset(200, 20, 0.001, 2);
    let cfg = InformerConfig {
        learning_rate: 0.0,
        patience: 1,
        ..tiny(LossKind::Gmadl)
    };
    let (_, log) = train(&cfg, &ds, 0..150, 150..200).unwrap();
    assert!(log.stopped_early);
    // baseline plus exactly one check
    assert_eq!(log.points.len(), 2);
    assert_eq!(log.steps, cfg.validate_every);
    assert!(!log.points[1].improved);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let ds = sinusoid_dataset(200, 20, 0.002, 3);
    let cfg = InformerConfig {
        max_epochs: 2,
        ..tiny(LossKind::Quantile)
    };
    let (m1, l1) = train(&cfg, &ds, 0..150, 150..200).unwrap();
    let (m2, l2) = train(&cfg, &ds, 0..150, 150..200).unwrap();
    assert_eq!(serde_json::to_string(&l1).unwrap(), serde_json::to_string(&l2).unwrap());
    assert_eq!(m1.params.tensors(), m2.params.tensors());
    let other = InformerConfig { seed: 4, ..cfg };
    let (_, l3) = train(&other, &ds, 0..150, 150..200).unwrap();
    assert_ne!(serde_json::to_string(&l1).unwrap(), serde_json::to_string(&l3).unwrap());
}

#[test]
fn missing_samples_is_an_error() {
    let ds = sinusoid_dataset(50, 20, 0.0, 4);
    assert!(train(&tiny(LossKind::Rmse), &ds, 0..5, 5..50).is_err());
}

fn fresh(loss: LossKind, ds: &Dataset) -> InformerModel<f64> {
    let cfg = InformerConfig {
        dropout: 0.0,
        ..tiny(loss)
    };
    InformerModel::new(cfg, InputSpec { n_real: ds.n_real(), cardinalities: ds.cardinalities().to_vec() }).unwrap()
}

#[test]
fn prediction_alignment_and_sorted_quantiles() {
    let ds = sinusoid_dataset(100, 20, 0.001, 5);
    let model = fresh(LossKind::Quantile, &ds);
    let f = predict_series(&model, &ds, 10..60).unwrap();
    assert_eq!(f.len(), 50 - 8);
    assert_eq!(f.rows[0], 18);
    assert_eq!(f.open_time[0], ds.open_time()[18]);
    for v in &f.values {
        assert_eq!(v.len(), 13);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }
    assert!(f.quantiles().is_ok());
    assert!(predict_series(&model, &ds, 10..18).is_err());

    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("open_time,q0.01,q0.02"));
    assert_eq!(text.lines().count(), f.len() + 1);
}

#[test]
fn forecasts_are_causal() {
    let ds = sinusoid_dataset(80, 20, 0.001, 6);
    let model = fresh(LossKind::Gmadl, &ds);
    let base = predict_series(&model, &ds, 0..80).unwrap();
    for t in [20usize, 41, 70] {
        // corrupt row t: forecasts for rows <= t must not move
        let mut real = ds.real().to_vec();
        let mut target = ds.target().to_vec();
        real[t * 3] += 5.0;
        real[t * 3 + 1] -= 3.0;
        target[t] += 1.0;
        let edited = Dataset::new(
            3,
            real,
            ds.categories().to_vec(),
            vec![24, 7],
            target,
            ds.open_time().to_vec(),
            0,
        )
        .unwrap();
        let f = predict_series(&model, &edited, 0..80).unwrap();
        for (i, &row) in f.rows.iter().enumerate() {
            if row <= t {
                assert_eq!(f.values[i], base.values[i], "row {row} changed after editing {t}");
            }
        }
        let after = f.rows.iter().position(|&r| r == t + 1).unwrap();
        assert_ne!(f.values[after], base.values[after]);
    }
}

#[test]
fn shifting_periodic_data_shifts_forecasts() {
    let period = 24 * 7;
    let ds = sinusoid_dataset(3 * period, period, 0.0, 7);
    let model = fresh(LossKind::Rmse, &ds);
    let a = predict_series(&model, &ds, 0..period + 40).unwrap();
    let b = predict_series(&model, &ds, period..2 * period + 40).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x[0] - y[0]).abs() < 1e-9);
    }
}
