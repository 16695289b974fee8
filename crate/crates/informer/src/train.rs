use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stratlab_autodiff::{Adam, AdamConfig, Graph, ParamStore};

use crate::config::InformerConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{loss, loss_value};
use crate::model::{InformerModel, InputSpec};

/// Rows per inference batch.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub epoch: usize,
    /// Optimiser steps taken before this check.
    pub step: usize,
    /// Mean minibatch loss since the previous check (NaN at step 0).
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub points: Vec<ValidationPoint>,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub stopped_early: bool,
    pub train_samples: usize,
    pub val_samples: usize,
    pub parameters: usize,
}

/// Row-major predictions for `rows`, in inference mode.
pub fn predict_rows(model: &InformerModel<f64>, ds: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * model.config.output_dim());
    for chunk in rows.chunks(EVAL_BATCH) {
        let batch = ds.batch(chunk, model.config.past_window)?;
        out.extend(model.predict_batch(&batch)?);
    }
    Ok(out)
}

/// Configured loss of `model` over the target rows.
pub fn evaluate(model: &InformerModel<f64>, ds: &Dataset, rows: &[usize]) -> Result<f64> {
    let pred = predict_rows(model, ds, rows)?;
    let y: Vec<f64> = rows.iter().map(|&t| ds.target()[t]).collect();
    loss_value(&model.config, &pred, &y)
}

/// Minibatch Adam with seeded shuffling, periodic validation and early
/// stopping. Returns the parameters with the lowest validation loss; the
/// untrained model counts as the first checkpoint.
pub fn train(
    config: &InformerConfig,
    ds: &Dataset,
    train_range: Range<usize>,
    val_range: Range<usize>,
) -> Result<(InformerModel<f64>, TrainLog)> {
    config.validate()?;
    let n = config.past_window;
    let mut train_rows = ds.sample_rows(train_range, n);
    let val_rows = ds.sample_rows(val_range, n);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Data(format!(
            "{} training and {} validation samples for past window {n}",
            train_rows.len(),
            val_rows.len()
        )));
    }
    let input = InputSpec {
        n_real: ds.n_real(),
        cardinalities: ds.cardinalities().to_vec(),
    };
    let mut model = InformerModel::<f64>::new(config.clone(), input)?;
    let mut opt = Adam::new(AdamConfig::with_lr(config.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let batches_per_epoch = train_rows.len().div_ceil(config.batch_size);
    let cadence = config.validate_every.min(batches_per_epoch);
    log::info!(
        "training {} parameters on {} samples ({} validation), {} batches per epoch, validating every {}",
        model.num_parameters(),
        train_rows.len(),
        val_rows.len(),
        batches_per_epoch,
        cadence
    );

    let initial = evaluate(&model, ds, &val_rows)?;
    if !initial.is_finite() {
        return Err(Error::Diverged(format!("initial validation loss is {initial}")));
    }
    let mut best: ParamStore<f64> = model.params.clone();
    let mut log = TrainLog {
        points: vec![ValidationPoint {
            epoch: 0,
            step: 0,
            train_loss: f64::NAN,
            val_loss: initial,
            improved: true,
        }],
        best_val_loss: initial,
        best_step: 0,
        epochs_run: 0,
        steps: 0,
        stopped_early: false,
        train_samples: train_rows.len(),
        val_samples: val_rows.len(),
        parameters: model.num_parameters(),
    };
    let mut stale = 0;
    let mut running = (0.0, 0usize);

    'epochs: for epoch in 1..=config.max_epochs {
        train_rows.shuffle(&mut rng);
        log.epochs_run = epoch;
        for chunk in train_rows.chunks(config.batch_size) {
            let batch = ds.batch(chunk, n)?;
            let mut g = Graph::new(config.seed ^ (log.steps as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), true);
            let bound = model.params.bind(&mut g);
            let pred = model.forward(&mut g, &bound, &batch)?;
            let l = loss(&mut g, config, pred, &batch.targets)?;
            let value = g.value(l).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {value} at epoch {epoch}, step {} (last validation loss {})",
                    log.steps,
                    log.points.last().map_or(f64::NAN, |p| p.val_loss)
                )));
            }
            g.backward(l)?;
            let grads = model.params.gradients(&g, &bound);
            opt.step(&mut model.params, &grads)?;
            log.steps += 1;
            running.0 += value;
            running.1 += 1;

            if log.steps % cadence == 0 {
                let val = evaluate(&model, ds, &val_rows)?;
                if !val.is_finite() {
                    return Err(Error::Diverged(format!("validation loss {val} at step {}", log.steps)));
                }
                let improved = val < log.best_val_loss;
                log.points.push(ValidationPoint {
                    epoch,
                    step: log.steps,
                    train_loss: running.0 / running.1 as f64,
                    val_loss: val,
                    improved,
                });
                running = (0.0, 0);
                if improved {
                    log.best_val_loss = val;
                    log.best_step = log.steps;
                    best = model.params.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        log.stopped_early = true;
                        log::info!("early stop at epoch {epoch}, step {}", log.steps);
                        break 'epochs;
                    }
                }
            }
        }
    }
    model.params = best;
    log::info!(
        "best validation loss {:.6e} at step {} of {}",
        log.best_val_loss,
        log.best_step,
        log.steps
    );
    Ok((model, log))
}
