//! Judge scores, pixel distance and action-text similarity.
//!
//! cargo run --example metrics

use wmlab::eval::{copy_records, corpus_bleu, judge_against, l1_distance, oracle_judge, text_metrics};
use wmlab::gridworld::{render, sample_triplet, WorldConfig};

fn main() -> wmlab::Result<()> {
    let world = WorldConfig::default();
    let t = sample_triplet(11, &world);
    let a = t.action.expect("supervised triplets carry their action");

    for (name, pred) in [("truth", &t.target), ("copy", &t.source)] {
        let s = oracle_judge(&t.source, &a, pred)?;
        let l1 = l1_distance(&render(&t.target), &render(pred))?;
        println!("{name:<6} ES {:>4.1} ME {:>4.1} final {:>4.1} L1 {l1:.4}", s.es, s.me, s.score);
    }
    assert_eq!(judge_against(&t.source, &t.target, &t.target)?.score, 10.0);

    let test: Vec<_> = (0..200).map(|i| sample_triplet(i, &world)).collect();
    let copy = copy_records(&test)?;
    let mean = copy.iter().map(|r| r.plain.score).sum::<f64>() / copy.len() as f64;
    println!("copy baseline mean {mean:.3} on {} instances", copy.len());

    let hyp = "move the red square left";
    let reference = "move the red square up";
    let s = text_metrics(hyp, reference);
    println!(
        "'{hyp}' vs '{reference}': BLEU {:.3} ROUGE-1 {:.3} ROUGE-2 {:.3} ROUGE-L {:.3}",
        s.bleu, s.rouge1, s.rouge2, s.rouge_l
    );
    println!("corpus BLEU {:.3}", corpus_bleu(&[(hyp, reference), (reference, reference)]));
    Ok(())
}
