use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wmlab::experiment::{Experiment, ExperimentConfig, WorldModel};

#[derive(Parser)]
#[command(name = "wmlab", version, about = "Run the world-model bootstrapping pipeline stage by stage")]
struct Cli {
    /// TOML config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`; WMLAB_OUT overrides both).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override such as `cdm.train.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Wm {
    Cft,
    Cwm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeTarget {
    Cdm,
    Cft,
    Cwm,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised train and test triplets.
    GenData,
    /// Unlabelled episodes.
    Rollout,
    /// Train the dynamics model.
    TrainDm,
    /// Likelihood probes against manipulated trajectories.
    Probe {
        #[arg(value_enum, default_value = "cdm")]
        model: ProbeTarget,
    },
    /// Caption keyframe pairs with the dynamics model.
    Annotate,
    /// Filter and class-balance the annotated pairs.
    SampleStratified,
    /// Train a world model.
    TrainWm {
        #[arg(value_enum)]
        model: Wm,
    },
    /// Sample and score world-model candidates on the test set.
    Verify,
    /// Aggregate metrics.
    Eval,
    /// Render tables and summary.
    Report,
    /// Every stage in order.
    RunAll,
    /// Print the resolved config as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> wmlab::Result<()> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| wmlab::Error::ConfigInvalid(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::from_toml_with(&text, &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let exp = Experiment::new(cfg)?;
    match cli.command {
        Command::GenData => exp.gen_data().map(drop),
        Command::Rollout => exp.rollout().map(drop),
        Command::TrainDm => exp.train_dm().map(drop),
        Command::Probe { model } => {
            let name = match model {
                ProbeTarget::Cdm => "cdm",
                ProbeTarget::Cft => "cft",
                ProbeTarget::Cwm => "cwm",
            };
            exp.probe(name).map(drop)
        }
        Command::Annotate => exp.annotate().map(drop),
        Command::SampleStratified => exp.sample_stratified().map(drop),
        Command::TrainWm { model } => exp
            .train_wm(match model {
                Wm::Cft => WorldModel::Cft,
                Wm::Cwm => WorldModel::Cwm,
            })
            .map(drop),
        Command::Verify => exp.verify().map(drop),
        Command::Eval => exp.eval().map(drop),
        Command::Report => {
            exp.report()?;
            print!("{}", std::fs::read_to_string(exp.path("report/table.txt"))?);
            Ok(())
        }
        Command::RunAll => exp.run_all().map(drop),
        Command::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
