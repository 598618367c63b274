//! Turn unlabelled episodes into class-balanced synthetic triplets.
//!
//! cargo run --release --example pipeline

use wmlab::gridworld::{rollout_episode, sample_triplet, WorldConfig};
use wmlab::pipeline::{build_synthetic, motion_scores, select_keyframes, KeyframeConfig, MotionEstimator, PipelineConfig};
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
    let episodes = (0..20)
        .map(|i| rollout_episode(9_000 + i, 40, &world))
        .collect::<wmlab::Result<Vec<_>>>()?;

    let keyframes = KeyframeConfig {
        min_interval: 5,
        count: 5,
        estimator: MotionEstimator::BlockFlow,
    };
    let scores = motion_scores(&episodes[0], keyframes.estimator)?;
    let sel = select_keyframes(&scores, &keyframes);
    println!("episode 0 keyframes {:?} (degraded: {})", sel.indices, sel.degraded);

    let data: Vec<_> = (0..1000).map(|i| sample_triplet(i, &world)).collect();
    let model = ModelConfig {
        d_model: 32,
        context_length: 32,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 20,
        warmup_steps: 50,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let cdm = train(&data, TaskMode::Dynamics, &model, &train_cfg, &vocab)?;

    let cfg = PipelineConfig {
        keyframes,
        target_count: 40,
        ..PipelineConfig::default()
    };
    let (selected, report) = build_synthetic(&episodes, &cdm, &cfg, &vocab)?;
    println!(
        "{} pairs, {} after filters, {} selected",
        report.pairs, report.after_filters, report.selected
    );
    print!("{}", report.class_csv()?);

    // annotations are checked against the hidden actions the episodes recorded
    let correct = selected
        .iter()
        .filter(|s| {
            let info = s.triplet.synthetic.as_ref().expect("pipeline output is synthetic");
            let ep = &episodes[info.episode as usize];
            ep.actions[info.frames.1 - 1].as_ref().map(|a| a.text()) == Some(s.triplet.text.clone())
        })
        .count();
    println!("{correct}/{} annotations match the hidden action", selected.len());
    Ok(())
}
