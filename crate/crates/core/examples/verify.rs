//! Best-of-N prediction with a dynamics model as the reward.
//!
//! cargo run --release --example verify

use wmlab::eval::judge_against;
use wmlab::gridworld::{sample_triplet, WorldConfig};
use wmlab::seqmodel::{train, ModelConfig, SampleConfig, TrainConfig};
use wmlab::tokencodec::{TaskMode, Vocab};
use wmlab::verify::{best_of_n_oracle, verify_predict, VerifyConfig};

fn main() -> wmlab::Result<()> {
    let vocab = Vocab::standard();
    let world = WorldConfig {
        height: 3,
        width: 3,
        min_objects: 1,
        max_objects: 2,
        ..WorldConfig::default()
    };
    let model = ModelConfig {
        d_model: 32,
        context_length: 32,
        ..ModelConfig::default()
    };
    let data: Vec<_> = (0..1000).map(|i| sample_triplet(i, &world)).collect();
    let cdm_cfg = TrainConfig {
        epochs: 20,
        warmup_steps: 50,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let cdm = train(&data, TaskMode::Dynamics, &model, &cdm_cfg, &vocab)?;
    // an underfit world model leaves room for verification to help
    let wm_cfg = TrainConfig {
        epochs: 4,
        warmup_steps: 10,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let wm = train(&data[..200], TaskMode::World, &model, &wm_cfg, &vocab)?;

    let test: Vec<_> = (0..100).map(|i| sample_triplet(700_000 + i, &world)).collect();
    println!("{:>3} {:>9} {:>9}", "N", "verified", "oracle");
    for n in [1, 2, 4, 8] {
        let (mut verified, mut oracle) = (0.0, 0.0);
        for (i, t) in test.iter().enumerate() {
            let a = t.action.expect("supervised triplets carry their action");
            let cfg = VerifyConfig {
                n,
                sample: SampleConfig::default(),
                seed: i as u64,
            };
            let set = verify_predict(&wm, &cdm, &t.source, &a, &cfg, &vocab)?;
            let best = best_of_n_oracle(&wm, &t.source, &a, &t.target, &cfg, &vocab)?;
            verified += judge_against(&t.source, &t.target, set.selected_board())?.score;
            oracle += judge_against(&t.source, &t.target, best.selected_board())?.score;
        }
        let k = test.len() as f64;
        println!("{n:>3} {:>9.3} {:>9.3}", verified / k, oracle / k);
    }
    Ok(())
}
