mod common;

use common::{ok, setup, sinusoid_returns, stratlab};
use serde_json::Value;
use stratlab::artifacts::{read_json, Layout, Manifest};
use stratlab::{EXIT_INTERNAL, EXIT_USER};
use stratlab_core::market::{FeatureFrame, Interval};
use stratlab_core::metrics::{backtest, concat_windows, Segment};
use stratlab_core::strategies::{buy_and_hold, macd_strategy};

const WINDOWS: &str = "[windows]\ncount = 2\nin_sample_rows = 3000\nout_sample_rows = 500\nval_fraction = 0.25\n";

fn returns() -> Vec<f64> {
    sinusoid_returns(5000, 1e-5, 1e-3, 97.0, 2e-3, 3)
}

fn ingested(extra: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &returns(), &[2500, 2501], &format!("{WINDOWS}{extra}"));
    ok(&stratlab(&cfg, &["ingest"]));
    (dir, cfg)
}

fn code(out: &std::process::Output) -> i32 {
    out.status.code().expect("exited")
}

fn frame(dir: &std::path::Path) -> (Manifest, FeatureFrame) {
    let layout = Layout::new(dir.join("out"));
    let m = layout.load_manifest().unwrap();
    let f = layout.load_frame(&m).unwrap();
    (m, f)
}

#[test]
fn missing_input_file_exits_with_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[data]\nklines = \"absent.csv\"\n").unwrap();
    let out = stratlab(&cfg, &["ingest"]);
    assert_eq!(code(&out), EXIT_USER);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn bad_config_exits_with_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "fee = 0.001\nfees = 0.002\n").unwrap();
    assert_eq!(code(&stratlab(&cfg, &["ingest"])), EXIT_USER);
    std::fs::write(&cfg, "fee = 1.5\n").unwrap();
    assert_eq!(code(&stratlab(&cfg, &["ingest"])), EXIT_USER);
    assert_eq!(code(&stratlab(&dir.path().join("nope.toml"), &["ingest"])), EXIT_USER);
}

#[test]
fn commands_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &returns(), &[], WINDOWS);
    for args in [
        &["backtest", "--strategy", "macd"][..],
        &["stats"],
        &["report"],
        &["train", "--strategy", "gmadl"],
    ] {
        let out = stratlab(&cfg, args);
        assert_eq!(code(&out), EXIT_USER, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("first"), "{args:?}");
    }
    ok(&stratlab(&cfg, &["ingest"]));
    assert_eq!(code(&stratlab(&cfg, &["backtest", "--strategy", "macd"])), EXIT_USER);
    assert_eq!(code(&stratlab(&cfg, &["predict", "--strategy", "rmse"])), EXIT_USER);
    assert_eq!(code(&stratlab(&cfg, &["train", "--strategy", "macd"])), EXIT_USER);
    assert_eq!(code(&stratlab(&cfg, &["search", "--strategy", "rsi", "--window", "9"])), EXIT_USER);
    assert_eq!(code(&stratlab(&cfg, &["backtest", "--strategy", "lstm"])), EXIT_USER);
}

#[test]
fn corrupt_artifact_is_internal_error() {
    let (dir, cfg) = ingested("");
    std::fs::write(dir.path().join("out/windows.json"), "{ not json").unwrap();
    assert_eq!(code(&stratlab(&cfg, &["stats"])), EXIT_INTERNAL);
}

#[test]
fn too_short_series_is_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &returns()[..3000], &[], WINDOWS);
    assert_eq!(code(&stratlab(&cfg, &["ingest"])), EXIT_USER);
}

#[test]
fn ingest_is_idempotent_and_fills_gaps() {
    let (dir, cfg) = ingested("");
    let out = dir.path().join("out");
    let files = ["features.csv", "windows.json", "stats.csv", "gaps.csv", "wasserstein.csv"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    ok(&stratlab(&cfg, &["ingest"]));
    for (f, before) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(out.join(f)).unwrap(), before, "{f} changed");
    }
    let (m, frame) = frame(dir.path());
    assert_eq!(m.rows, 5000);
    assert_eq!(m.synthetic_rows, 2);
    assert_eq!(m.gaps.len(), 1);
    assert!(frame.synthetic[2500] && frame.synthetic[2501]);
    assert_eq!(frame.returns()[2500], 0.0);
    assert_eq!(frame.returns()[2501], 0.0);
    assert_eq!(m.windows.len(), 2);
    for w in &m.windows {
        assert_eq!((w.train_rows, w.validation_rows, w.test_rows), (2250, 750, 500));
    }
    assert_eq!(m.windows[1].window.test.end, 5000);
    let gaps = std::fs::read_to_string(out.join("gaps.csv")).unwrap();
    assert!(gaps.lines().nth(1).unwrap().ends_with(",2"), "{gaps}");
}

#[test]
fn stats_table_has_a_column_per_split() {
    let (dir, cfg) = ingested("");
    let out = stratlab(&cfg, &["stats"]);
    ok(&out);
    let text = std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "statistic,full,w1_train,w1_validation,w1_test,w2_train,w2_validation,w2_test"
    );
    let count = text.lines().find(|l| l.starts_with("count,")).unwrap();
    assert_eq!(count, "count,5000,2250,750,500,2250,750,500");
}

#[test]
fn buy_and_hold_trades_twice_per_window_and_is_always_long() {
    let (dir, cfg) = ingested("");
    ok(&stratlab(&cfg, &["backtest", "--strategy", "buy_and_hold"]));
    let bt = dir.path().join("out/backtest/buy_and_hold");
    for i in 1..=2 {
        let w: Value = read_json(&bt.join(format!("window_{i}.json"))).unwrap();
        assert_eq!(w["metrics"]["n_trades"], 2);
        assert_eq!(w["metrics"]["long_pct"], 100.0);
        assert_eq!(w["metrics"]["short_pct"], 0.0);
    }
    // CLI numbers equal the library on the same slices
    let (m, frame) = frame(dir.path());
    let r = frame.returns();
    let pos: Vec<_> = m.windows.iter().map(|w| buy_and_hold(w.test_rows).unwrap()).collect();
    let segs: Vec<_> = m
        .windows
        .iter()
        .zip(&pos)
        .map(|(w, p)| Segment {
            rows: w.window.test.clone(),
            returns: &r[w.window.test.clone()],
            positions: p,
        })
        .collect();
    let lib = concat_windows(&segs, 0.001, Interval::M5.per_year()).unwrap();
    let cli: stratlab_core::BacktestReport = read_json(&bt.join("report.json")).unwrap();
    assert_eq!(cli, lib);
    let summary = std::fs::read_to_string(bt.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().nth(3).unwrap().starts_with("all windows,"));
}

const TWO_MACD: &str = "[search.macd]\nfast = [3]\nslow = [8, 21]\nsignal = [5]\nshort = [1]\n";

#[test]
fn search_ranks_by_ir_and_backtest_matches_library() {
    let (dir, cfg) = ingested(TWO_MACD);
    ok(&stratlab(&cfg, &["search", "--strategy", "macd"]));
    ok(&stratlab(&cfg, &["backtest", "--strategy", "macd"]));
    let (m, frame) = frame(dir.path());
    let per_year = Interval::M5.per_year();
    for w in &m.windows {
        let i = w.window.index;
        // library evaluation of both combinations on the validation slice
        let mut scored: Vec<(i64, f64, usize)> = [8i64, 21]
            .iter()
            .map(|&slow| {
                let end = w.window.validation.end;
                let p = macd_strategy(&frame.close()[..end], 3, slow as usize, 5, true).unwrap();
                let p = p.slice(w.window.validation.clone());
                let rep = backtest(&frame.returns()[w.window.validation.clone()], &p, 0.001, per_year).unwrap();
                (slow, rep.ir_double_star, rep.n_trades)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        let table = std::fs::read_to_string(dir.path().join(format!("out/search/macd/window_{i}.csv"))).unwrap();
        let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 2);
        for (k, (slow, ir, _)) in scored.iter().enumerate() {
            assert_eq!(rows[k][0], (k + 1).to_string());
            assert_eq!(rows[k][2], slow.to_string());
            let got: f64 = rows[k][10].parse().unwrap();
            assert_eq!(got, *ir);
        }
        // the test-slice backtest uses the winner
        let best = scored[0].0 as usize;
        let p = macd_strategy(&frame.close()[..w.window.test.end], 3, best, 5, true).unwrap();
        let p = p.slice(w.window.test.clone());
        let rep = backtest(&frame.returns()[w.window.test.clone()], &p, 0.001, per_year).unwrap();
        let rec: Value = read_json(&dir.path().join(format!("out/backtest/macd/window_{i}.json"))).unwrap();
        assert_eq!(rec["params"]["slow"], best as i64);
        assert_eq!(rec["metrics"]["ir_double_star"].as_f64().unwrap(), rep.ir_double_star);
        assert_eq!(rec["metrics"]["n_trades"].as_u64().unwrap() as usize, rep.n_trades);
    }
    assert!(std::fs::read_to_string(dir.path().join("out/search/macd/chosen.csv"))
        .unwrap()
        .starts_with("window,fast,slow,signal,short,validation_IR**"));
}

#[test]
fn ttest_of_identical_streams_is_zero() {
    let (dir, cfg) = ingested("");
    ok(&stratlab(&cfg, &["backtest", "--strategy", "bh"]));
    let out = stratlab(&cfg, &["ttest", "--strategy", "buy_and_hold", "--benchmark", "buy_and_hold"]);
    ok(&out);
    let table = std::fs::read_to_string(dir.path().join("out/ttest/buy_and_hold_vs_buy_and_hold.csv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "1000");
    assert_eq!(row[6].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[8], "");
    assert!(!String::from_utf8_lossy(&out.stdout).contains("**"));
}

#[test]
fn report_and_sensitivity_tables() {
    let (dir, cfg) = ingested(&format!(
        "{TWO_MACD}\n[sensitivity]\ntop_n = 2\nval_months = [3, 6]\nwindow_counts = [1, 2]\n"
    ));
    ok(&stratlab(&cfg, &["search", "--strategy", "macd"]));
    ok(&stratlab(&cfg, &["backtest", "--strategy", "macd"]));
    ok(&stratlab(&cfg, &["backtest", "--strategy", "buy_and_hold"]));
    ok(&stratlab(&cfg, &["report"]));
    let out = dir.path().join("out");
    let summary = std::fs::read_to_string(out.join("report/summary.csv")).unwrap();
    assert!(summary.starts_with("Strategy,VAL,ARC,ASD,IR*,MD,IR**,N,LONG,SHORT"));
    assert!(summary.contains("\nBuy and Hold,") && summary.contains("\nMACD Strategy,"));
    let curves = std::fs::read_to_string(out.join("report/equity_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 1001);
    assert!(out.join("report/plot.gp").is_file());

    for study in ["top-n", "val-length", "window-count"] {
        ok(&stratlab(&cfg, &["sensitivity", "--study", study, "--strategy", "macd"]));
    }
    let top = std::fs::read_to_string(out.join("sensitivity/top_n_macd.csv")).unwrap();
    assert_eq!(top.lines().count(), 1 + 2 + 1);
    let val = std::fs::read_to_string(out.join("sensitivity/val_length_macd.csv")).unwrap();
    assert!(val.contains("val=3m") && val.contains("val=6m") && val.trim_end().ends_with(|c: char| c.is_ascii_digit()));
    let wc = std::fs::read_to_string(out.join("sensitivity/window_count_macd.csv")).unwrap();
    assert!(wc.contains("windows=1") && wc.contains("windows=2"));
    // two windows through the study reproduce the main backtest
    let main: stratlab_core::BacktestReport = read_json(&out.join("backtest/macd/report.json")).unwrap();
    let line = wc.lines().find(|l| l.contains("windows=2")).unwrap();
    let ir: f64 = line.split(',').nth(6).unwrap().parse().unwrap();
    assert!((ir - main.ir_double_star).abs() <= 1e-6 * main.ir_double_star.abs().max(1.0));
    // window counts that do not divide the test period are rejected
    let bad = format!("{TWO_MACD}\n[sensitivity]\nwindow_counts = [3]\n");
    let cfg3 = setup(dir.path(), &returns(), &[2500, 2501], &format!("{WINDOWS}{bad}"));
    assert_eq!(
        code(&stratlab(&cfg3, &["sensitivity", "--study", "window-count", "--strategy", "macd"])),
        EXIT_USER
    );
}

#[test]
fn global_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &returns(), &[], WINDOWS);
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_stratlab"))
        .args(["--config", cfg.to_str().unwrap(), "--seed", "99", "--out", dir.path().join("elsewhere").to_str().unwrap(), "ingest"])
        .output()
        .unwrap();
    ok(&out);
    let resolved = std::fs::read_to_string(dir.path().join("elsewhere/resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
}
