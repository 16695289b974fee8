use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use stratlab_informer::LossKind;

use crate::commands::sensitivity::Study;
use crate::commands::{backtest, data, model, report, search, sensitivity};
use crate::config::RunConfig;
use crate::error::UserError;
use crate::strategy::StrategyId;

#[derive(Debug, Parser)]
#[command(name = "stratlab", version, about = "Walk-forward backtests of indicator and forecast strategies")]
pub struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load candles, fill gaps, build features and split windows.
    Ingest,
    /// Descriptive statistics of the returns per window split.
    Stats,
    /// Grid search of strategy parameters, or random search of model settings.
    Search {
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        strategy: Option<StrategyId>,
        /// Loss whose model settings to search (rmse, quantile, gmadl).
        #[arg(long)]
        model: Option<LossKind>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Train one forecaster per window.
    Train {
        /// rmse, quantile or gmadl.
        #[arg(long)]
        strategy: StrategyId,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Forecast the validation and test rows with trained models.
    Predict {
        #[arg(long)]
        strategy: StrategyId,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Backtest the chosen parameters on the test slices.
    Backtest {
        #[arg(long)]
        strategy: StrategyId,
        #[arg(long)]
        window: Option<usize>,
        /// Use the parameters ranked `rank` on validation.
        #[arg(long, default_value_t = 1)]
        rank: usize,
    },
    /// Summary table and equity curves of every backtested strategy.
    Report,
    /// Significance of a strategy's IR* over a benchmark.
    Ttest {
        #[arg(long)]
        strategy: StrategyId,
        #[arg(long, default_value = "buy_and_hold")]
        benchmark: StrategyId,
    },
    /// Robustness of a strategy to the validation span, window count or parameter rank.
    Sensitivity {
        #[arg(long, value_enum)]
        study: Study,
        #[arg(long)]
        strategy: StrategyId,
    },
}

fn model_loss(strategy: StrategyId) -> Result<LossKind> {
    strategy.loss().ok_or_else(|| {
        UserError::new(format!("{strategy} is not a model strategy; use rmse, quantile or gmadl")).into()
    })
}

impl Cli {
    /// The configuration with command-line overrides applied.
    pub fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let mut cfg = RunConfig::default();
                cfg.resolve_paths(&std::env::current_dir()?);
                cfg
            }
        };
        if let Some(out) = &self.out {
            cfg.out_dir = std::env::current_dir()?.join(out);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<()> {
        match &self.command {
            Command::Ingest => data::ingest(cfg).map(drop),
            Command::Stats => data::stats(cfg).map(drop),
            Command::Search { strategy, model, window } => match (strategy, model) {
                (_, Some(loss)) => model::search_model(cfg, *loss).map(drop),
                (Some(s), None) => search::search_strategy(cfg, *s, *window).map(drop),
                (None, None) => unreachable!("clap requires one of --strategy and --model"),
            },
            Command::Train { strategy, window } => model::train_models(cfg, model_loss(*strategy)?, *window).map(drop),
            Command::Predict { strategy, window } => model::predict(cfg, model_loss(*strategy)?, *window),
            Command::Backtest { strategy, window, rank } => backtest::backtest(cfg, *strategy, *window, *rank).map(drop),
            Command::Report => report::report(cfg).map(drop),
            Command::Ttest { strategy, benchmark } => report::ttest(cfg, *strategy, *benchmark).map(drop),
            Command::Sensitivity { study, strategy } => sensitivity::sensitivity(cfg, *study, *strategy).map(drop),
        }
    }
}
