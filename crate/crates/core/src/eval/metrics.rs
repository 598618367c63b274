use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{apply_action, Action, Board, RasterImage};

/// Two 0–10 criteria; the reported score is their minimum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    /// Editing success: did the requested change happen.
    pub es: f64,
    /// Minimal editing: was everything else left alone.
    pub me: f64,
    pub score: f64,
}

impl JudgeScore {
    pub fn new(es: f64, me: f64) -> Self {
        Self {
            es,
            me,
            score: es.min(me),
        }
    }
}

/// Something that grades a predicted next board.
pub trait Judge {
    fn judge(&self, source: &Board, action: &Action, pred: &Board) -> Result<JudgeScore>;
}

/// Exact judge computed from the ground-truth transition.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleJudge;

impl Judge for OracleJudge {
    fn judge(&self, source: &Board, action: &Action, pred: &Board) -> Result<JudgeScore> {
        oracle_judge(source, action, pred)
    }
}

pub fn oracle_judge(source: &Board, action: &Action, pred: &Board) -> Result<JudgeScore> {
    let target = apply_action(source, action).map_err(|e| Error::InfeasibleAction(format!("{action}: {e}")))?;
    judge_against(source, &target, pred)
}

/// Grades `pred` against a known `target`. The edit region `E` is the set of
/// cells where `target` differs from `source`; ES is the share of `E` that
/// `pred` gets right (10 when `E` is empty) and ME the share of the rest
/// that `pred` leaves as in `source`.
pub fn judge_against(source: &Board, target: &Board, pred: &Board) -> Result<JudgeScore> {
    if !source.same_dims(target) || !source.same_dims(pred) {
        return Err(Error::DimensionMismatch("boards differ in size".into()));
    }
    let (mut edit, mut edit_ok, mut rest, mut rest_ok) = (0usize, 0usize, 0usize, 0usize);
    for ((s, t), p) in source.cells().iter().zip(target.cells()).zip(pred.cells()) {
        if s != t {
            edit += 1;
            edit_ok += usize::from(p == t);
        } else {
            rest += 1;
            rest_ok += usize::from(p == s);
        }
    }
    let frac = |ok: usize, n: usize| if n == 0 { 10.0 } else { 10.0 * ok as f64 / n as f64 };
    Ok(JudgeScore::new(frac(edit_ok, edit), frac(rest_ok, rest)))
}

/// Fraction of cells where `pred` equals `target`.
pub fn cell_accuracy(target: &Board, pred: &Board) -> Result<f64> {
    if !target.same_dims(pred) {
        return Err(Error::DimensionMismatch("boards differ in size".into()));
    }
    Ok(1.0 - target.diff_count(pred) as f64 / target.len() as f64)
}

/// Mean absolute per-channel difference scaled to `[0, 1]`.
pub fn l1_distance(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y) as u64).sum();
    Ok(sum as f64 / (255.0 * a.data.len() as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

pub const BLEU_ORDER: usize = 4;

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngram_counts<'a, 'b>(toks: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the hypothesis n-gram total.
fn clipped(hyp: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

fn f1(overlap: usize, hyp_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_n(hyp: &str, reference: &str, n: usize) -> f64 {
    let (h, r) = (tokens(hyp), tokens(reference));
    let (overlap, ht) = clipped(&h, &r, n);
    f1(overlap, ht, r.len().saturating_sub(n - 1))
}

fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (tokens(hyp), tokens(reference));
    f1(lcs(&h, &r), h.len(), r.len())
}

/// Corpus BLEU over `(hypothesis, reference)` pairs: clipped n-gram
/// precisions up to order 4 pooled over the corpus, geometric mean, brevity
/// penalty, no smoothing. Orders longer than every hypothesis are dropped and
/// the remaining weights renormalised, so short identical strings still score 1.
pub fn corpus_bleu(pairs: &[(&str, &str)]) -> f64 {
    let mut matched = [0usize; BLEU_ORDER];
    let mut total = [0usize; BLEU_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        let (h, r) = (tokens(hyp), tokens(reference));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let (m, t) = clipped(&h, &r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let orders: Vec<usize> = (0..BLEU_ORDER).filter(|&i| total[i] > 0).collect();
    if orders.iter().any(|&i| matched[i] == 0) {
        return 0.0;
    }
    let log_p = orders
        .iter()
        .map(|&i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / orders.len() as f64;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * log_p.exp()
}

/// Sentence-level scores for one pair; an empty hypothesis scores 0.
pub fn text_metrics(hyp: &str, reference: &str) -> TextScores {
    TextScores {
        bleu: corpus_bleu(&[(hyp, reference)]),
        rouge1: rouge_n(hyp, reference, 1),
        rouge2: rouge_n(hyp, reference, 2),
        rouge_l: rouge_l(hyp, reference),
    }
}
