//! Token streams for both task framings and recognition loss weights.
//!
//! cargo run --example tokens

use wmlab::gridworld::{sample_triplet, WorldConfig};
use wmlab::tokencodec::{decode_board, encode_triplet, max_sequence_len, recognition_weights, TaskMode, Vocab};

fn main() -> wmlab::Result<()> {
    let vocab = Vocab::standard();
    let world = WorldConfig::default();
    let t = sample_triplet(3, &world);
    println!("vocab of {} tokens, hash {}", vocab.len(), &vocab.hash()[..12]);

    for mode in [TaskMode::World, TaskMode::Dynamics] {
        let seq = encode_triplet(&t, mode, &vocab)?;
        let words: Vec<&str> = seq.completion().iter().filter_map(|&id| vocab.token(id)).collect();
        println!(
            "{:<8} prompt {} tokens, completion {} tokens: {}",
            mode.name(),
            seq.prompt().len(),
            seq.completion_len(),
            words.join(" ")
        );
    }
    println!("longest sequence on this board: {}", max_sequence_len(world.cells()));

    let ids = vocab.encode_board(&t.target);
    assert_eq!(decode_board(&ids, t.target.height(), t.target.width(), &vocab)?, t.target);

    let w = recognition_weights(&t.source, &t.target, 0.01)?;
    println!("recognition weights (mean {:.6}):\n{}", w.mean(), w.to_csv());
    Ok(())
}
