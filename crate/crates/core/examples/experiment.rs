//! Every stage of a run from one config, with a hashed manifest.
//!
//! cargo run --release --example experiment [config.toml] [out_dir]

use std::path::PathBuf;

use wmlab::experiment::{Experiment, ExperimentConfig};

fn main() -> wmlab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml"));
    let mut cfg = ExperimentConfig::load(&config, &[])?;
    cfg.out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("wmlab-example"));

    let exp = Experiment::new(cfg)?;
    exp.run_all()?;
    println!("{}", std::fs::read_to_string(exp.path("report/table.txt"))?);
    for (name, stage) in &exp.manifest()?.stages {
        println!("{name:<20} {:>3} outputs {:>7.2}s", stage.outputs.len(), stage.seconds);
    }
    println!("artifacts in {}", exp.dir().display());
    Ok(())
}
