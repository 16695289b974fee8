use clap::Parser;
use stratlab::{exit_code, Cli, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match cli.load_config().and_then(|cfg| {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global()?;
        cli.run(&cfg)
    }) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
