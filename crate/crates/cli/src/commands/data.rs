use anyhow::{Context, Result};
use stratlab_core::market::{build_features, fill_gaps, load_exogenous, load_klines, make_windows, FeatureFrame, NormStats};
use stratlab_core::stats::{descriptive_stats, wasserstein_1d, DescriptiveStats};

use crate::artifacts::{fmt_f, write_json, write_table, Layout, Manifest, WindowEntry};
use crate::config::RunConfig;
use crate::error::UserError;

/// Loads and repairs the candles, builds the feature frame, splits it into
/// walk-forward windows and writes the frame, manifest, gap report and
/// descriptive statistics.
pub fn ingest(cfg: &RunConfig) -> Result<Manifest> {
    cfg.check_inputs()?;
    let layout = Layout::new(&cfg.out_dir);
    layout.write_resolved_config(cfg)?;

    let interval = cfg.data.interval;
    let raw = load_klines(&cfg.data.klines, interval).with_context(|| format!("loading {}", cfg.data.klines.display()))?;
    if raw.is_empty() {
        anyhow::bail!(UserError::new(format!("{} holds no candles", cfg.data.klines.display())));
    }
    let (series, gaps) = fill_gaps(&raw)?;
    let filled: usize = gaps.iter().map(|g| g.length).sum();
    log::info!(
        "{} candles, {} gaps, {filled} synthetic candles ({:.3}%)",
        raw.len(),
        gaps.len(),
        100.0 * filled as f64 / series.len() as f64
    );
    let exo = cfg
        .data
        .exogenous
        .iter()
        .map(|e| load_exogenous(&e.path, &e.name, e.frequency).with_context(|| format!("loading {}", e.path.display())))
        .collect::<Result<Vec<_>>>()?;
    let frame = build_features(&series, &exo)?;
    let spec = cfg.windows.spec(interval);
    let windows = make_windows(frame.len(), &spec)?;
    let entries = windows
        .into_iter()
        .map(|w| {
            let norm = NormStats::fit(&frame, w.train.clone())
                .with_context(|| format!("normalisation for window {}", w.index))?;
            Ok(WindowEntry {
                train_rows: w.train.len(),
                validation_rows: w.validation.len(),
                test_rows: w.test.len(),
                window: w,
                norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        interval,
        rows: frame.len(),
        warm_up: frame.warm_up,
        first_open_time: frame.open_time[0],
        last_open_time: *frame.open_time.last().expect("non-empty"),
        synthetic_rows: filled,
        gaps: gaps.clone(),
        spec,
        windows: entries,
        seed: cfg.seed,
    };
    frame.save_csv(layout.features())?;
    write_table(
        &layout.gaps(),
        &["start".into(), "length".into()],
        &gaps.iter().map(|g| vec![g.start.to_string(), g.length.to_string()]).collect::<Vec<_>>(),
    )?;
    write_json(&layout.manifest(), &manifest)?;
    write_stats(&layout, &frame, &manifest)?;
    for w in &manifest.windows {
        log::info!(
            "window {}: train {}, validation {}, test {}",
            w.window.index,
            w.train_rows,
            w.validation_rows,
            w.test_rows
        );
    }
    Ok(manifest)
}

/// Named return samples: the full series, then each split of each window.
pub fn return_samples<'a>(frame: &'a FeatureFrame, manifest: &Manifest) -> Vec<(String, &'a [f64])> {
    let r = frame.returns();
    let mut out = vec![("full".to_string(), r)];
    for w in &manifest.windows {
        let i = w.window.index;
        out.push((format!("w{i}_train"), &r[w.window.train.clone()]));
        out.push((format!("w{i}_validation"), &r[w.window.validation.clone()]));
        out.push((format!("w{i}_test"), &r[w.window.test.clone()]));
    }
    out
}

/// Statistics table with one row per statistic and one column per sample,
/// plus in-sample versus out-of-sample Wasserstein distances.
pub fn write_stats(layout: &Layout, frame: &FeatureFrame, manifest: &Manifest) -> Result<Vec<(String, DescriptiveStats)>> {
    let samples = return_samples(frame, manifest);
    let stats = samples
        .iter()
        .map(|(name, xs)| Ok((name.clone(), descriptive_stats(xs).with_context(|| format!("statistics of {name}"))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["statistic".to_string()];
    header.extend(stats.iter().map(|(n, _)| n.clone()));
    let labels = stats[0].1.rows();
    let rows: Vec<Vec<String>> = (0..labels.len())
        .map(|k| {
            let mut row = vec![labels[k].0.to_string()];
            row.extend(stats.iter().map(|(_, s)| match s.rows()[k].1 {
                Some(v) if k == 0 => format!("{}", v as u64),
                Some(v) => fmt_f(v),
                None => "NA".into(),
            }));
            row
        })
        .collect();
    write_table(&layout.stats(), &header, &rows)?;

    let r = frame.returns();
    let dist = manifest
        .windows
        .iter()
        .map(|w| {
            let test = &r[w.window.test.clone()];
            Ok(vec![
                w.window.index.to_string(),
                fmt_f(wasserstein_1d(&r[w.window.train.clone()], test)?),
                fmt_f(wasserstein_1d(&r[w.window.validation.clone()], test)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(
        &layout.wasserstein(),
        &["window".into(), "train_vs_test".into(), "validation_vs_test".into()],
        &dist,
    )?;
    Ok(stats)
}

/// Recomputes the statistics tables from ingested artifacts and prints the
/// full-series column.
pub fn stats(cfg: &RunConfig) -> Result<Vec<(String, DescriptiveStats)>> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    let stats = write_stats(&layout, &frame, &manifest)?;
    println!("{:<18}{:>22}", "statistic", "full");
    for (label, v) in stats[0].1.rows() {
        match v {
            Some(v) => println!("{label:<18}{v:>22.10}"),
            None => println!("{label:<18}{:>22}", "NA"),
        }
    }
    Ok(stats)
}
