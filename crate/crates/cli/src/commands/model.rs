use anyhow::{Context, Result};
use rayon::prelude::*;
use stratlab_core::market::FeatureFrame;
use stratlab_core::search::{informer_space, random_search, ValidationLoss};
use stratlab_informer::{predict_series, train, Dataset, InformerConfig, InformerModel, LossKind, TrainLog};

use crate::artifacts::{create, fmt_f, read_json, write_json, write_table, Layout, WindowEntry};
use crate::commands::select_windows;
use crate::config::{apply_overrides, RunConfig};
use crate::error::UserError;

fn dataset(frame: &FeatureFrame, w: &WindowEntry) -> Result<Dataset> {
    Ok(Dataset::from_frame(frame, &w.norm)?)
}

fn chosen_path(layout: &Layout, loss: LossKind) -> std::path::PathBuf {
    layout.model_search_dir(&loss.to_string()).join("chosen.json")
}

/// Model config for `loss`: the model-search winner when one exists, else
/// the `[model]` section.
pub fn model_config(cfg: &RunConfig, layout: &Layout, loss: LossKind) -> Result<InformerConfig> {
    let path = chosen_path(layout, loss);
    let mut mc: InformerConfig = if path.is_file() {
        read_json(&path)?
    } else {
        cfg.model.clone()
    };
    mc.loss = loss;
    mc.validate().map_err(|e| UserError::new(format!("model config for {loss}: {e}")))?;
    Ok(mc)
}

/// Seeded random search over Informer configurations on window 1, ranked by
/// best validation loss. The winner is reused for every window.
pub fn search_model(cfg: &RunConfig, loss: LossKind) -> Result<InformerConfig> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    let w = &manifest.windows[0];
    let ds = dataset(&frame, w)?;
    let space = apply_overrides(informer_space(), Some(&cfg.model_search.axes))?;
    let base = InformerConfig {
        loss,
        seed: cfg.derived_seed(&format!("model-search-{loss}"), w.window.index),
        ..cfg.model.clone()
    };
    let seed = cfg.derived_seed(&format!("model-sample-{loss}"), 0);
    let result = random_search(&space, cfg.model_search.samples, seed, "validation_loss", |c| -> Result<ValidationLoss> {
        let mc = base.with_combination(c)?;
        let (_, log) = train(&mc, &ds, w.window.train.clone(), w.window.validation.clone())?;
        log::info!("{c}: validation loss {:.6e}", log.best_val_loss);
        Ok(ValidationLoss(log.best_val_loss))
    })?;
    let best = result.select_best()?;
    let chosen = base.with_combination(&best.combination)?;

    let dir = layout.model_search_dir(&loss.to_string());
    let names: Vec<String> = space.axes.iter().map(|a| a.name.clone()).collect();
    let mut header = vec!["rank".to_string()];
    header.extend(names.iter().cloned());
    header.push("validation_loss".into());
    let rows: Vec<Vec<String>> = result
        .ranked
        .iter()
        .map(|e| {
            let mut r = vec![e.rank.to_string()];
            r.extend(e.combination.values.iter().map(|v| v.to_string()));
            r.push(fmt_f(e.result.0));
            r
        })
        .collect();
    write_table(&dir.join("results.csv"), &header, &rows)?;
    write_json(
        &dir.join("search.json"),
        &serde_json::json!({
            "metric": result.metric,
            "seed": result.seed,
            "raw_size": result.raw_size,
            "admissible": result.admissible,
            "evaluated": result.evaluated,
            "failed": result.failed,
        }),
    )?;
    write_json(&chosen_path(&layout, loss), &chosen)?;
    Ok(chosen)
}

/// Trains one model per selected window and writes checkpoints and logs.
pub fn train_models(cfg: &RunConfig, loss: LossKind, window: Option<usize>) -> Result<Vec<(usize, TrainLog)>> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    let base = model_config(cfg, &layout, loss)?;
    let windows = select_windows(&manifest, window)?;
    windows
        .par_iter()
        .map(|w| {
            let i = w.window.index;
            let mc = InformerConfig {
                seed: cfg.derived_seed(&format!("train-{loss}"), i),
                ..base.clone()
            };
            let ds = dataset(&frame, w)?;
            let (model, log) = train(&mc, &ds, w.window.train.clone(), w.window.validation.clone())
                .with_context(|| format!("training {loss} model for window {i}"))?;
            let path = layout.checkpoint(&loss.to_string(), i);
            crate::artifacts::ensure_parent(&path)?;
            model.save(&path, serde_json::json!({ "window": i }))?;
            write_json(&path.with_extension("log.json"), &log)?;
            log::info!("window {i}: best validation loss {:.6e} after {} steps", log.best_val_loss, log.steps);
            Ok((i, log))
        })
        .collect()
}

/// Writes forecasts for the validation and test rows of each selected window.
pub fn predict(cfg: &RunConfig, loss: LossKind, window: Option<usize>) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    for w in select_windows(&manifest, window)? {
        predict_window(&layout, &frame, loss, w)?;
    }
    Ok(())
}

fn predict_window(layout: &Layout, frame: &FeatureFrame, loss: LossKind, w: &WindowEntry) -> Result<()> {
    let i = w.window.index;
    let path = layout.checkpoint(&loss.to_string(), i);
    if !path.is_file() {
        anyhow::bail!(UserError::new(format!(
            "checkpoint {} not found; run `stratlab train --strategy {loss}` first",
            path.display()
        )));
    }
    let (model, _) = InformerModel::<f64>::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let ds = dataset(frame, w)?;
    let n = model.config.past_window;
    let start = w.window.validation.start.saturating_sub(n).max(ds.first_valid());
    let forecasts = predict_series(&model, &ds, start..w.window.test.end)?;
    let out = layout.predictions(&loss.to_string(), i);
    forecasts.write_csv(create(&out)?)?;
    log::info!("window {i}: {} forecasts written to {}", forecasts.len(), out.display());
    Ok(())
}
