//! Config-driven pipelines: load a preset, override a few fields and write
//! an output bundle.
//!
//! `cargo run --release --example run_preset [preset] [out_dir]`

use std::path::PathBuf;

use rydsim::runner;

fn main() -> rydsim::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "spectrum-2x2".to_string());
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("rydsim-{preset}")));

    println!("available presets: {}", runner::presets().join(", "));
    let mut config = runner::load_config(Some(&preset), None)?;
    config.seed = 42;
    runner::validate(&config)?;

    let report = runner::run(&config, &out, Some(&preset))?;
    println!("wrote {} files to {}", report.outputs.len(), report.out_dir.display());
    for f in &report.outputs {
        println!("  {f}");
    }
    println!("summary:\n{}", serde_json::to_string_pretty(&report.summary).expect("valid JSON"));
    Ok(())
}
