//! Does a dynamics model prefer real trajectories over manipulated ones?
//!
//! cargo run --release --example probes

use wmlab::gridworld::{sample_triplet, WorldConfig};
use wmlab::probes::{make_negative, run_probe, NegativeKind};
use wmlab::seqmodel::{train, ModelConfig, TrainConfig};
use wmlab::tokencodec::{TaskMode, Vocab};

fn main() -> wmlab::Result<()> {
    let vocab = Vocab::standard();
    let world = WorldConfig {
        height: 3,
        width: 3,
        min_objects: 1,
        max_objects: 2,
        ..WorldConfig::default()
    };
    let data: Vec<_> = (0..1000).map(|i| sample_triplet(i, &world)).collect();
    let model = ModelConfig {
        d_model: 32,
        context_length: 32,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 20,
        warmup_steps: 50,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let cdm = train(&data, TaskMode::Dynamics, &model, &cfg, &vocab)?;

    let held_out: Vec<_> = (0..100).map(|i| sample_triplet(500_000 + i, &world)).collect();
    for kind in NegativeKind::ALL {
        let neg = make_negative(&held_out[0], kind, 1, &held_out)?;
        println!("{kind:<22} action '{}'", neg.payload.text);
    }

    let report = run_probe(&cdm, &held_out, TaskMode::Dynamics, &NegativeKind::ALL, 0, &vocab)?;
    println!("\n{:<22} {:>10} {:>10} {:>8}", "negative", "prefer %", "per-token", "pearson");
    for s in &report.summary {
        println!(
            "{:<22} {:>10.1} {:>10.1} {:>8}",
            s.kind.name(),
            s.total.preference_rate,
            s.per_token.preference_rate,
            s.total.pearson.map_or("-".into(), |r| format!("{r:.3}"))
        );
    }
    Ok(())
}
