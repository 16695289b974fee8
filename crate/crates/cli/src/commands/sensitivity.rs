use anyhow::{Context, Result};
use stratlab_core::market::{make_windows, DataWindow, FeatureFrame, WindowSpec};
use stratlab_core::metrics::write_summary_csv;
use stratlab_core::BacktestReport;

use crate::artifacts::{create, Layout};
use crate::commands::backtest::run_windows;
use crate::commands::search::{load_params, search_window, strategy_space};
use crate::config::RunConfig;
use crate::error::UserError;
use crate::strategy::{Params, StrategyId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    /// Validation span of 3, 6, 9 and 12 months.
    ValLength,
    /// Same test period split into 3, 6 and 12 windows.
    WindowCount,
    /// Backtests of the 1st to Nth best validation parameters.
    TopN,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::ValLength => "val_length",
            Study::WindowCount => "window_count",
            Study::TopN => "top_n",
        }
    }
}

/// Searches each window's validation slice afresh and backtests the winner.
fn research(cfg: &RunConfig, layout: &Layout, frame: &FeatureFrame, strategy: StrategyId, spec: &WindowSpec) -> Result<BacktestReport> {
    let windows = make_windows(frame.len(), spec)?;
    if strategy == StrategyId::BuyAndHold {
        return Ok(run_windows(cfg, layout, frame, strategy, &windows, |_| Ok(Params::new()))?.combined);
    }
    let space = strategy_space(cfg, strategy)?.expect("searchable strategy");
    let run = run_windows(cfg, layout, frame, strategy, &windows, |w: &DataWindow| {
        let result = search_window(cfg, frame, strategy, &space, w, None)?;
        Ok(result.select_best()?.combination.to_map())
    })?;
    Ok(run.combined)
}

/// Runs one robustness study and writes a summary table with a buy-and-hold
/// row over the same test period.
pub fn sensitivity(cfg: &RunConfig, study: Study, strategy: StrategyId) -> Result<Vec<(String, BacktestReport)>> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    if strategy.loss().is_some() && study != Study::TopN {
        anyhow::bail!(UserError::new(format!(
            "the {} study retrains no models; only top-n is available for {strategy}",
            study.name()
        )));
    }
    let interval = manifest.interval;
    let base: Vec<DataWindow> = manifest.windows.iter().map(|w| w.window.clone()).collect();
    let mut rows = Vec::new();
    match study {
        Study::ValLength => {
            for &m in &cfg.sensitivity.val_months {
                let spec = cfg.windows.with_validation_months(interval, m);
                let r = research(cfg, &layout, &frame, strategy, &spec)
                    .with_context(|| format!("validation span of {m} months"))?;
                rows.push((format!("{} val={m}m", strategy.label()), r));
            }
        }
        Study::WindowCount => {
            for &k in &cfg.sensitivity.window_counts {
                let spec = cfg.windows.with_count(interval, k)?;
                let r = research(cfg, &layout, &frame, strategy, &spec).with_context(|| format!("{k} windows"))?;
                rows.push((format!("{} windows={k}", strategy.label()), r));
            }
        }
        Study::TopN => {
            if strategy == StrategyId::BuyAndHold {
                anyhow::bail!(UserError::new("buy_and_hold has no ranked parameters"));
            }
            for rank in 1..=cfg.sensitivity.top_n {
                let run = run_windows(cfg, &layout, &frame, strategy, &base, |w| load_params(&layout, strategy, w.index, rank));
                match run {
                    Ok(run) => rows.push((format!("{} top={rank}", strategy.label()), run.combined)),
                    Err(e) if rank > 1 && crate::error::exit_code(&e) == crate::error::EXIT_USER => {
                        log::warn!("stopping at rank {rank}: {e:#}");
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let bench = run_windows(cfg, &layout, &frame, StrategyId::BuyAndHold, &base, |_| Ok(Params::new()))?;
    rows.push((StrategyId::BuyAndHold.label().to_string(), bench.combined));
    let labelled: Vec<(String, &BacktestReport)> = rows.iter().map(|(l, r)| (l.clone(), r)).collect();
    write_summary_csv(&labelled, create(&layout.sensitivity(study.name(), strategy.name()))?)?;
    for (label, r) in &rows {
        println!("{label:<32} IR** {:>10.4}  ARC {:>8.2}%  N {:>6}", r.ir_double_star, r.arc * 100.0, r.n_trades);
    }
    Ok(rows)
}
