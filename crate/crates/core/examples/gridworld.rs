//! Boards, actions and episodes.
//!
//! cargo run --example gridworld

use wmlab::gridworld::{
    apply_action, feasible_actions, render, rollout_episode, sample_triplet, Action, ActionClass, WorldConfig,
};

fn main() -> wmlab::Result<()> {
    let world = WorldConfig::default();
    let t = sample_triplet(42, &world);
    println!("source:\n{}", t.source);
    println!("action: {}", t.text);
    println!("target:\n{}", t.target);

    for class in &ActionClass::ALL[..4] {
        let n = feasible_actions(&t.source, *class).len();
        println!("{:<12} {n} feasible", class.name());
    }

    // actions round-trip through their text form
    let parsed = Action::parse(&t.text)?;
    assert_eq!(apply_action(&t.source, &parsed)?, t.target);

    let ep = rollout_episode(7, 12, &world)?;
    let moved = ep.frames.windows(2).filter(|w| w[0] != w[1]).count();
    println!("episode of {} frames, {moved} steps changed the board", ep.frames.len());
    assert_eq!(ep.replay()?, ep.frames);

    let img = render(&t.source);
    println!("rendered raster {}x{} pixels", img.height, img.width);
    Ok(())
}
