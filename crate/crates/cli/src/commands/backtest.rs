use std::ops::Range;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stratlab_core::market::{DataWindow, FeatureFrame};
use stratlab_core::metrics::{backtest as backtest_slice, concat_windows, write_summary_csv, Segment};
use stratlab_core::strategies::PositionSeries;
use stratlab_core::BacktestReport;

use crate::artifacts::{create, read_json, write_json, Layout};
use crate::commands::search::{load_forecasts, load_params};
use crate::commands::select_windows;
use crate::config::RunConfig;
use crate::error::UserError;
use crate::strategy::{Params, Score, SliceContext, StrategyId};

/// Test-period result of one window.
#[derive(Debug, Clone)]
pub struct WindowRun {
    pub index: usize,
    pub rows: Range<usize>,
    pub params: Params,
    pub positions: PositionSeries,
    pub report: BacktestReport,
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: StrategyId,
    pub windows: Vec<WindowRun>,
    pub combined: BacktestReport,
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    window: usize,
    first_row: usize,
    rows: usize,
    params: Params,
    metrics: Score,
}

/// Runs `strategy` on the test slice of each window with the parameters
/// returned by `params`, and chains the windows into one report.
pub fn run_windows(
    cfg: &RunConfig,
    layout: &Layout,
    frame: &FeatureFrame,
    strategy: StrategyId,
    windows: &[DataWindow],
    params: impl Fn(&DataWindow) -> Result<Params>,
) -> Result<StrategyRun> {
    let per_year = frame.interval.per_year();
    let mut runs = Vec::with_capacity(windows.len());
    for w in windows {
        let forecasts = load_forecasts(layout, frame, strategy, w.index)?;
        let p = params(w)?;
        let ctx = SliceContext::new(frame.close(), frame.returns(), w.test.clone(), forecasts.as_ref(), cfg.fee, per_year);
        let positions = ctx.positions(strategy, &p).with_context(|| format!("{strategy} on window {}", w.index))?;
        let report = backtest_slice(&frame.returns()[w.test.clone()], &positions, cfg.fee, per_year)?;
        runs.push(WindowRun {
            index: w.index,
            rows: w.test.clone(),
            params: p,
            positions,
            report,
        });
    }
    let returns = frame.returns();
    let segments: Vec<Segment<'_, f64>> = runs
        .iter()
        .map(|r| Segment {
            rows: r.rows.clone(),
            returns: &returns[r.rows.clone()],
            positions: &r.positions,
        })
        .collect();
    let combined = concat_windows(&segments, cfg.fee, per_year)?;
    Ok(StrategyRun {
        strategy,
        windows: runs,
        combined,
    })
}

/// Backtests the rank-`rank` parameters of every selected window on its
/// test slice and writes per-window and combined results.
pub fn backtest(cfg: &RunConfig, strategy: StrategyId, window: Option<usize>, rank: usize) -> Result<StrategyRun> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    let windows: Vec<DataWindow> = select_windows(&manifest, window)?.into_iter().map(|w| w.window.clone()).collect();
    let run = run_windows(cfg, &layout, &frame, strategy, &windows, |w| load_params(&layout, strategy, w.index, rank))?;
    write_run(&layout, &frame, &run)?;
    let r = &run.combined;
    log::info!(
        "{strategy}: VAL {:.4}, ARC {:.2}%, IR** {:.4}, {} trades",
        r.final_value,
        r.arc * 100.0,
        r.ir_double_star,
        r.n_trades
    );
    Ok(run)
}

fn write_run(layout: &Layout, frame: &FeatureFrame, run: &StrategyRun) -> Result<()> {
    let dir = layout.backtest_dir(run.strategy.name());
    let mut labelled = Vec::new();
    let mut timestamps = Vec::new();
    let mut positions = Vec::new();
    for w in &run.windows {
        write_json(
            &dir.join(format!("window_{}.json", w.index)),
            &WindowRecord {
                window: w.index,
                first_row: w.rows.start,
                rows: w.rows.len(),
                params: w.params.clone(),
                metrics: Score::from(&w.report),
            },
        )?;
        labelled.push((format!("window {}", w.index), &w.report));
        timestamps.extend_from_slice(&frame.open_time[w.rows.clone()]);
        positions.extend_from_slice(&w.positions.positions);
    }
    labelled.push(("all windows".to_string(), &run.combined));
    write_summary_csv(&labelled, create(&dir.join("summary.csv"))?)?;
    write_json(&dir.join("report.json"), &run.combined)?;
    run.combined
        .write_equity_csv(Some(&timestamps), create(&dir.join("equity.csv"))?)?;
    let all = PositionSeries {
        positions,
        first_active: run.windows.first().map_or(0, |w| w.positions.first_active),
    };
    all.write_csv(&timestamps, create(&dir.join("positions.csv"))?)?;
    Ok(())
}

/// Combined report of an earlier `backtest` run.
pub fn load_report(layout: &Layout, strategy: StrategyId) -> Result<BacktestReport> {
    let path = layout.backtest_dir(strategy.name()).join("report.json");
    if !path.is_file() {
        anyhow::bail!(UserError::new(format!(
            "{} not found; run `stratlab backtest --strategy {strategy}` first",
            path.display()
        )));
    }
    read_json(&path)
}
