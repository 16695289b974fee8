use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stratlab_core::market::{DataWindow, FeatureFrame};
use stratlab_core::search::{grid_search, SearchResult, SearchSpace};

use crate::artifacts::{read_json, write_json, write_table, Layout, Manifest};
use crate::commands::select_windows;
use crate::config::{apply_overrides, RunConfig};
use crate::error::UserError;
use crate::strategy::{Params, Score, SliceContext, StrategyId, WindowForecasts};

/// One ranked parameter set, as stored in `window_<i>_top.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedParams {
    pub rank: usize,
    pub params: Params,
    pub validation: Score,
}

/// The configured search space of a strategy, with `[search.<name>]` overrides.
pub fn strategy_space(cfg: &RunConfig, strategy: StrategyId) -> Result<Option<SearchSpace>> {
    match strategy.space() {
        None => Ok(None),
        Some(space) => Ok(Some(apply_overrides(space, cfg.search.get(strategy.name()))?)),
    }
}

/// Forecasts for window `index` when the strategy is model based.
pub fn load_forecasts(layout: &Layout, frame: &FeatureFrame, strategy: StrategyId, index: usize) -> Result<Option<WindowForecasts>> {
    match strategy.loss() {
        None => Ok(None),
        Some(loss) => Ok(Some(WindowForecasts::load(
            &layout.predictions(&loss.to_string(), index),
            &frame.open_time,
        )?)),
    }
}

/// Grid search of `strategy` on the validation slice of `window`.
pub fn search_window(
    cfg: &RunConfig,
    frame: &FeatureFrame,
    strategy: StrategyId,
    space: &SearchSpace,
    window: &DataWindow,
    forecasts: Option<&WindowForecasts>,
) -> Result<SearchResult<Score>> {
    let per_year = frame.interval.per_year();
    let mut ctx = SliceContext::new(
        frame.close(),
        frame.returns(),
        window.validation.clone(),
        forecasts,
        cfg.fee,
        per_year,
    );
    if strategy == StrategyId::Rsi {
        ctx.cache_rsi(space)?;
    }
    let result = grid_search(space, "IR**", |c| -> Result<Score> {
        let report = ctx.evaluate(strategy, &c.to_map())?;
        Ok(Score::from(&report))
    });
    if result.ranked.is_empty() {
        let first = result.failed.first().map(|f| f.error.clone()).unwrap_or_default();
        anyhow::bail!(UserError::new(format!(
            "every {strategy} combination failed on window {} ({first})",
            window.index
        )));
    }
    Ok(result)
}

fn ranked_params(result: &SearchResult<Score>, n: usize) -> Vec<RankedParams> {
    result
        .top_n(n)
        .iter()
        .map(|e| RankedParams {
            rank: e.rank,
            params: e.combination.to_map(),
            validation: e.result,
        })
        .collect()
}

fn write_window(layout: &Layout, strategy: StrategyId, space: &SearchSpace, index: usize, result: &SearchResult<Score>, top: usize) -> Result<()> {
    let dir = layout.search_dir(strategy.name());
    let mut header = vec!["rank".to_string()];
    header.extend(space.axes.iter().map(|a| a.name.clone()));
    header.extend(Score::HEADER.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = result
        .ranked
        .iter()
        .map(|e| {
            let mut r = vec![e.rank.to_string()];
            r.extend(e.combination.values.iter().map(|v| v.to_string()));
            r.extend(e.result.cells());
            r
        })
        .collect();
    write_table(&dir.join(format!("window_{index}.csv")), &header, &rows)?;
    write_json(&dir.join(format!("window_{index}_top.json")), &ranked_params(result, top))?;
    Ok(())
}

/// Searches every selected window and writes the ranked tables, the top
/// parameter sets and a table of the chosen parameters.
pub fn search_strategy(cfg: &RunConfig, strategy: StrategyId, window: Option<usize>) -> Result<Vec<(usize, RankedParams)>> {
    let Some(space) = strategy_space(cfg, strategy)? else {
        log::info!("{strategy} has no parameters to search");
        return Ok(Vec::new());
    };
    let layout = Layout::new(&cfg.out_dir);
    let manifest = layout.load_manifest()?;
    let frame = layout.load_frame(&manifest)?;
    layout.write_resolved_config(cfg)?;
    let top = cfg.sensitivity.top_n.max(1);
    let mut chosen = Vec::new();
    for w in select_windows(&manifest, window)? {
        let i = w.window.index;
        let forecasts = load_forecasts(&layout, &frame, strategy, i)?;
        let result = search_window(cfg, &frame, strategy, &space, &w.window, forecasts.as_ref())
            .with_context(|| format!("searching {strategy} on window {i}"))?;
        write_window(&layout, strategy, &space, i, &result, top)?;
        let best = ranked_params(&result, 1).remove(0);
        log::info!(
            "window {i}: {} of {} combinations ranked, best IR** {:.4}",
            result.ranked.len(),
            result.evaluated,
            best.validation.ir_double_star
        );
        chosen.push((i, best));
    }
    write_chosen(&layout, strategy, &space, &manifest)?;
    Ok(chosen)
}

/// Rewrites `chosen.csv` from every window's stored top list.
fn write_chosen(layout: &Layout, strategy: StrategyId, space: &SearchSpace, manifest: &Manifest) -> Result<()> {
    let mut header = vec!["window".to_string()];
    header.extend(space.axes.iter().map(|a| a.name.clone()));
    header.push("validation_IR**".into());
    let mut rows = Vec::new();
    for w in &manifest.windows {
        let path = layout.search_dir(strategy.name()).join(format!("window_{}_top.json", w.window.index));
        if !path.is_file() {
            continue;
        }
        let top: Vec<RankedParams> = read_json(&path)?;
        if let Some(best) = top.first() {
            let mut r = vec![w.window.index.to_string()];
            r.extend(
                space
                    .axes
                    .iter()
                    .map(|a| best.params.get(&a.name).map(|v| v.to_string()).unwrap_or_default()),
            );
            r.push(crate::artifacts::fmt_f(best.validation.ir_double_star));
            rows.push(r);
        }
    }
    write_table(&layout.search_dir(strategy.name()).join("chosen.csv"), &header, &rows)
}

/// Parameters of rank `rank` (1 based) for one window; buy-and-hold has none.
pub fn load_params(layout: &Layout, strategy: StrategyId, index: usize, rank: usize) -> Result<Params> {
    if strategy == StrategyId::BuyAndHold {
        return Ok(Params::new());
    }
    let path = layout.search_dir(strategy.name()).join(format!("window_{index}_top.json"));
    if !path.is_file() {
        anyhow::bail!(UserError::new(format!(
            "{} not found; run `stratlab search --strategy {strategy}` first",
            path.display()
        )));
    }
    let top: Vec<RankedParams> = read_json(&path)?;
    top.into_iter()
        .find(|r| r.rank == rank)
        .map(|r| r.params)
        .ok_or_else(|| anyhow::anyhow!(UserError::new(format!("window {index} has no rank {rank} parameters for {strategy}"))))
}
