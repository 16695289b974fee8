use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use stratlab_core::metrics::{ir_t_test, write_summary_csv, TTest};
use stratlab_core::BacktestReport;

use crate::artifacts::{create, fmt_f, write_table, write_text, Layout};
use crate::commands::backtest::load_report;
use crate::config::RunConfig;
use crate::error::UserError;
use crate::strategy::StrategyId;

/// Significance marker used in the t-test table.
pub const SIGNIFICANCE: f64 = 0.01;

fn read_equity(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[1].to_string(), r[2].to_string()))
        })
        .collect()
}

/// Summary table, aligned equity curves and a gnuplot script for every
/// strategy that has a backtest.
pub fn report(cfg: &RunConfig) -> Result<Vec<(StrategyId, BacktestReport)>> {
    let layout = Layout::new(&cfg.out_dir);
    layout.write_resolved_config(cfg)?;
    let mut found = Vec::new();
    for s in StrategyId::ALL {
        if layout.backtest_dir(s.name()).join("report.json").is_file() {
            found.push((s, load_report(&layout, s)?));
        }
    }
    if found.is_empty() {
        anyhow::bail!(UserError::new("no backtest results found; run `stratlab backtest` first"));
    }
    let dir = layout.root.join("report");
    let labelled: Vec<(String, &BacktestReport)> = found.iter().map(|(s, r)| (s.label().to_string(), r)).collect();
    write_summary_csv(&labelled, create(&dir.join("summary.csv"))?)?;

    let curves = found
        .iter()
        .map(|(s, _)| read_equity(&layout.backtest_dir(s.name()).join("equity.csv")))
        .collect::<Result<Vec<_>>>()?;
    let steps = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut header = vec!["step".to_string(), "timestamp".to_string()];
    header.extend(found.iter().map(|(s, _)| s.name().to_string()));
    let rows: Vec<Vec<String>> = (0..steps)
        .map(|i| {
            let ts = curves.iter().find_map(|c| c.get(i).map(|e| e.0.clone())).unwrap_or_default();
            let mut row = vec![i.to_string(), ts];
            row.extend(curves.iter().map(|c| c.get(i).map(|e| e.1.clone()).unwrap_or_default()));
            row
        })
        .collect();
    write_table(&dir.join("equity_curves.csv"), &header, &rows)?;
    write_text(&dir.join("plot.gp"), &gnuplot_script(&found))?;

    println!("{:<20}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}", "Strategy", "VAL", "ARC%", "ASD%", "IR*", "MD%", "IR**", "N");
    for (s, r) in &found {
        println!(
            "{:<20}{:>10.4}{:>10.2}{:>10.2}{:>10.4}{:>10.2}{:>10.4}{:>8}",
            s.label(),
            r.final_value,
            r.arc * 100.0,
            r.asd * 100.0,
            r.ir_star,
            r.md * 100.0,
            r.ir_double_star,
            r.n_trades
        );
    }
    Ok(found)
}

fn gnuplot_script(found: &[(StrategyId, BacktestReport)]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead left top\n");
    s.push_str("set xlabel 'interval'\nset ylabel 'equity'\n");
    s.push_str("set terminal pngcairo size 1400,700\nset output 'equity_curves.png'\n");
    let plots: Vec<String> = found
        .iter()
        .enumerate()
        .map(|(k, (id, _))| format!("'equity_curves.csv' using 1:{} with lines title '{}'", k + 3, id.label()))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// One-sided test of the IR* difference between a strategy and a benchmark
/// over their combined test periods.
pub fn ttest(cfg: &RunConfig, strategy: StrategyId, benchmark: StrategyId) -> Result<TTest> {
    let layout = Layout::new(&cfg.out_dir);
    layout.write_resolved_config(cfg)?;
    let s = load_report(&layout, strategy)?;
    let b = load_report(&layout, benchmark)?;
    if s.equity.len() != b.equity.len() {
        anyhow::bail!(UserError::new(format!(
            "{strategy} and {benchmark} were backtested on different periods ({} vs {} intervals)",
            s.intervals(),
            b.intervals()
        )));
    }
    let t = ir_t_test(&s.net_returns(), &b.net_returns(), s.ir_star, b.ir_star)?;
    let stars = if t.p_value < SIGNIFICANCE { "**" } else { "" };
    write_table(
        &layout.ttest(strategy.name(), benchmark.name()),
        &["strategy", "benchmark", "ir_star", "ir_star_benchmark", "N", "sigma", "t", "p", "significant"]
            .map(String::from),
        &[vec![
            strategy.name().to_string(),
            benchmark.name().to_string(),
            fmt_f(s.ir_star),
            fmt_f(b.ir_star),
            t.n.to_string(),
            fmt_f(t.sigma),
            fmt_f(t.t),
            fmt_f(t.p_value),
            stars.to_string(),
        ]],
    )?;
    println!(
        "{} vs {}: N = {}, sigma = {:.6e}, t = {:.4}, p = {:.4}{}",
        strategy.label(),
        benchmark.label(),
        t.n,
        t.sigma,
        t.t,
        t.p_value,
        if stars.is_empty() { String::new() } else { format!(" {stars}") }
    );
    Ok(t)
}
