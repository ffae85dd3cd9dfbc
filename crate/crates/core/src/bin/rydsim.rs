use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rydsim::runner::{self, THREADS_ENV};

/// Run a built-in pipeline or a config file and write an output bundle.
#[derive(Parser)]
#[command(name = "rydsim", version)]
struct Cli {
    /// A preset name, `run` to use the config file alone, or `presets` to
    /// list the built-in pipelines.
    target: String,
    /// Config file (TOML, or JSON by extension). With a preset it is
    /// overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, replacing the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; takes precedence over the environment variable.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.target == "presets" {
        for name in runner::presets() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let preset = (cli.target != "run").then_some(cli.target.as_str());
    if preset.is_none() && cli.config.is_none() {
        eprintln!("error: `run` needs --config <file>");
        return ExitCode::from(EXIT_VALIDATION);
    }
    let mut config = match runner::load_config(preset, cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let Some(out) = cli.out.clone().or_else(|| config.out_dir.clone()) else {
        eprintln!("error: no output directory (use --out or set out_dir)");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let threads = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        Some(n) => Some(n),
        None => match runner::threads_from_env() {
            Ok(n) => n,
            Err(e) => {
                eprintln!("error: {e} ({THREADS_ENV})");
                return ExitCode::from(EXIT_VALIDATION);
            }
        },
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    }
    match runner::run(&config, &out, preset) {
        Ok(report) => {
            eprintln!("wrote {} files to {}", report.outputs.len(), report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
