//! Train a small world model, then sample and score next boards.
//!
//! cargo run --release --example train_and_sample

use wmlab::gridworld::{sample_triplet, TrajectoryTriplet, WorldConfig};
use wmlab::seqmodel::{train, LossMode, ModelConfig, SampleConfig, TrainConfig};
use wmlab::tokencodec::{encode_triplet, TaskMode, Vocab};
use wmlab::verify::{sample_candidates, VerifyConfig};

fn main() -> wmlab::Result<()> {
    let vocab = Vocab::standard();
    let world = WorldConfig {
        height: 3,
        width: 3,
        min_objects: 1,
        max_objects: 2,
        ..WorldConfig::default()
    };
    let data: Vec<_> = (0..300).map(|i| sample_triplet(i, &world)).collect();
    let model = ModelConfig {
        d_model: 32,
        context_length: 32,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 8,
        warmup_steps: 20,
        learning_rate: 2e-3,
        loss_mode: LossMode::RecognitionWeighted,
        ..TrainConfig::default()
    };
    let wm = train(&data, TaskMode::World, &model, &cfg, &vocab)?;
    let curve = &wm.manifest().loss_curve;
    println!(
        "{} parameters, loss {:.3} -> {:.3}",
        wm.num_params(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );

    let t = sample_triplet(10_000, &world);
    let vcfg = VerifyConfig {
        n: 4,
        sample: SampleConfig::default(),
        seed: 1,
    };
    let (boards, _) = sample_candidates(&wm, &t.source, &t.text, &vcfg, &vocab)?;
    println!("source:\n{}action: {}\ntruth:\n{}", t.source, t.text, t.target);
    for (i, b) in boards.iter().enumerate() {
        let candidate = TrajectoryTriplet {
            target: b.clone(),
            ..t.clone()
        };
        let seq = encode_triplet(&candidate, TaskMode::World, &vocab)?;
        let (logp, _) = wm.score(&seq)?;
        println!("candidate {i} (log p {logp:.2}, exact {}):\n{b}", *b == t.target);
    }
    Ok(())
}
