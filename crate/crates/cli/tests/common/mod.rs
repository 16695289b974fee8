#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FIVE_MIN_MS: i64 = 300_000;
/// 2020-09-13 12:25 UTC, on the 5-minute grid.
pub const START_MS: i64 = 1_600_000_000_000 - 1_600_000_000_000 % FIVE_MIN_MS;

/// Per-interval returns: constant drift plus a sinusoid plus Gaussian noise.
pub fn sinusoid_returns(n: usize, drift: f64, amplitude: f64, period: f64, noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, noise).unwrap();
    (0..n)
        .map(|t| drift + amplitude * (std::f64::consts::TAU * t as f64 / period).sin() + eps.sample(&mut rng))
        .collect()
}

/// Binance-layout k-lines whose `(close - open) / open` equals `returns[t]`.
/// Rows listed in `drop` are left out to create gaps.
pub fn klines_csv(returns: &[f64], drop: &[usize]) -> String {
    let mut out = String::from("open_time,open,high,low,close,volume,close_time\n");
    let mut price = 100.0;
    for (t, r) in returns.iter().enumerate() {
        let open = price;
        let close = open * (1.0 + r);
        price = close;
        if drop.contains(&t) {
            continue;
        }
        let ot = START_MS + t as i64 * FIVE_MIN_MS;
        let vol = 50.0 + 10.0 * ((t % 288) as f64 / 288.0);
        writeln!(
            out,
            "{ot},{open:.10},{:.10},{:.10},{close:.10},{vol:.4},{}",
            open.max(close) * 1.0005,
            open.min(close) * 0.9995,
            ot + FIVE_MIN_MS - 1
        )
        .unwrap();
    }
    out
}

/// Writes `k.csv` and `run.toml` into `dir`; `extra` is appended to a config
/// with small row-based windows.
pub fn setup(dir: &Path, returns: &[f64], drop: &[usize], extra: &str) -> PathBuf {
    std::fs::write(dir.join("k.csv"), klines_csv(returns, drop)).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, format!("seed = 5\nout_dir = \"out\"\n\n[data]\nklines = \"k.csv\"\n\n{extra}")).unwrap();
    cfg
}

pub fn stratlab(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratlab"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}
