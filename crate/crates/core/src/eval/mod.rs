//! Scoring predicted boards and predicted action text.

mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{
    cell_accuracy, corpus_bleu, judge_against, l1_distance, oracle_judge, rouge_l, rouge_n, text_metrics, Judge,
    JudgeScore, OracleJudge, TextScores, BLEU_ORDER,
};

use crate::error::{Error, Result};
use crate::gridworld::{render, TrajectoryTriplet};
use crate::seqmodel::{AllowedRange, Length, ModelCheckpoint, SampleConfig};
use crate::tokencodec::{dynamics_prompt, Vocab, ACTION_SLOTS};
use crate::verify::{argmax_first, cdm_rewards, sample_candidates, VerifyConfig};

pub const COPY_ROW: &str = "copy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Sampling for world-model candidates; `verify.n` is ignored in favour of the sweep maximum.
    pub verify: VerifyConfig,
    /// Candidate counts reported for verified and oracle selection.
    pub sweep: Vec<usize>,
    /// Decoding for action prediction with the dynamics model.
    pub action_sample: SampleConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            verify: VerifyConfig::default(),
            sweep: vec![1, 2, 4, 8],
            action_sample: SampleConfig {
                temperature: 1.0,
                top_k: 1,
            },
        }
    }
}

impl EvalConfig {
    pub fn max_n(&self) -> usize {
        self.sweep.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() || self.sweep.contains(&0) {
            return Err(Error::ConfigInvalid("sweep must list candidate counts >= 1".into()));
        }
        self.verify.sample.validate()?;
        self.action_sample.validate()
    }
}

/// One model on one test instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub model: String,
    pub index: usize,
    /// Judge of the first candidate (single prediction).
    pub plain: JudgeScore,
    pub exact: bool,
    pub cell_accuracy: f64,
    pub l1: f64,
    /// Judge score of every candidate, in sampling order.
    pub candidate_scores: Vec<f64>,
    /// Dynamics-model rewards, when a dynamics model was supplied.
    pub rewards: Option<Vec<f64>>,
}

impl InstanceRecord {
    /// Judge score after verified selection among the first `n` candidates.
    pub fn verified(&self, n: usize) -> Option<f64> {
        let n = n.clamp(1, self.candidate_scores.len());
        self.rewards
            .as_ref()
            .map(|r| self.candidate_scores[argmax_first(&r[..n])])
    }

    /// Best judge score among the first `n` candidates.
    pub fn oracle(&self, n: usize) -> f64 {
        let n = n.clamp(1, self.candidate_scores.len());
        self.candidate_scores[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub verified: Option<f64>,
    pub oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub judge: f64,
    pub es: f64,
    pub me: f64,
    pub exact_match: f64,
    pub cell_accuracy: f64,
    pub l1: f64,
    pub sweep: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub name: String,
    /// Corpus BLEU.
    pub bleu: f64,
    /// Mean sentence-level ROUGE F1.
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub exact_match: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub models: Vec<ModelRow>,
    pub actions: Vec<ActionRow>,
    pub records: Vec<InstanceRecord>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Aggregates one model's instance records into a report row.
pub fn summarise(name: &str, records: &[InstanceRecord], sweep: &[usize]) -> ModelRow {
    let sweep = sweep
        .iter()
        .map(|&n| SweepPoint {
            n,
            verified: records
                .iter()
                .map(|r| r.verified(n))
                .collect::<Option<Vec<f64>>>()
                .map(|v| mean(v.into_iter())),
            oracle: mean(records.iter().map(|r| r.oracle(n))),
        })
        .collect();
    ModelRow {
        name: name.to_string(),
        judge: mean(records.iter().map(|r| r.plain.score)),
        es: mean(records.iter().map(|r| r.plain.es)),
        me: mean(records.iter().map(|r| r.plain.me)),
        exact_match: mean(records.iter().map(|r| f64::from(u8::from(r.exact)))),
        cell_accuracy: mean(records.iter().map(|r| r.cell_accuracy)),
        l1: mean(records.iter().map(|r| r.l1)),
        sweep,
    }
}

pub fn copy_records(test: &[TrajectoryTriplet]) -> Result<Vec<InstanceRecord>> {
    test.iter()
        .enumerate()
        .map(|(i, t)| {
            let j = judge_against(&t.source, &t.target, &t.source)?;
            Ok(InstanceRecord {
                model: COPY_ROW.into(),
                index: i,
                plain: j,
                exact: t.source == t.target,
                cell_accuracy: cell_accuracy(&t.target, &t.source)?,
                l1: l1_distance(&render(&t.target), &render(&t.source))?,
                candidate_scores: vec![j.score],
                rewards: None,
            })
        })
        .collect()
}

/// Evaluates one world model on `test`, sampling `cfg.max_n()` nested candidates per instance.
pub fn evaluate_world_model(
    name: &str,
    wm: &ModelCheckpoint,
    test: &[TrajectoryTriplet],
    cdm: Option<&ModelCheckpoint>,
    cfg: &EvalConfig,
    vocab: &Vocab,
) -> Result<Vec<InstanceRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(test.len());
    for (i, t) in test.iter().enumerate() {
        let vcfg = VerifyConfig {
            n: cfg.max_n(),
            sample: cfg.verify.sample.clone(),
            seed: crate::seed::derive_seed(cfg.verify.seed, "eval", i as u64),
        };
        let (cands, _) = sample_candidates(wm, &t.source, &t.text, &vcfg, vocab)?;
        let scores = cands
            .iter()
            .map(|c| judge_against(&t.source, &t.target, c))
            .collect::<Result<Vec<_>>>()?;
        let rewards = match cdm {
            Some(m) => Some(cdm_rewards(m, &t.source, &cands, &t.text, vocab)?),
            None => None,
        };
        let first = &cands[0];
        out.push(InstanceRecord {
            model: name.to_string(),
            index: i,
            plain: scores[0],
            exact: *first == t.target,
            cell_accuracy: cell_accuracy(&t.target, first)?,
            l1: l1_distance(&render(&t.target), &render(first))?,
            candidate_scores: scores.iter().map(|s| s.score).collect(),
            rewards,
        });
    }
    Ok(out)
}

/// Action prediction quality of a dynamics model on `test`.
pub fn evaluate_dynamics_model(
    name: &str,
    cdm: &ModelCheckpoint,
    test: &[TrajectoryTriplet],
    cfg: &EvalConfig,
    vocab: &Vocab,
) -> Result<ActionRow> {
    let mut predictions = Vec::with_capacity(test.len());
    for (i, t) in test.iter().enumerate() {
        let prompt = dynamics_prompt(&t.source, &t.target, vocab);
        let completion = cdm
            .sample(
                &prompt,
                1,
                &cfg.action_sample,
                AllowedRange::Text,
                Length::UntilEos { max: ACTION_SLOTS },
                vocab,
                crate::seed::derive_seed(cfg.verify.seed, "eval-action", i as u64),
            )?
            .remove(0);
        predictions.push(vocab.decode_text(&completion)?);
    }
    let pairs: Vec<(&str, &str)> = predictions
        .iter()
        .zip(test)
        .map(|(p, t)| (p.as_str(), t.text.as_str()))
        .collect();
    let sentence: Vec<TextScores> = pairs.iter().map(|(p, r)| text_metrics(p, r)).collect();
    Ok(ActionRow {
        name: name.to_string(),
        bleu: corpus_bleu(&pairs),
        rouge1: mean(sentence.iter().map(|s| s.rouge1)),
        rouge2: mean(sentence.iter().map(|s| s.rouge2)),
        rouge_l: mean(sentence.iter().map(|s| s.rouge_l)),
        exact_match: mean(pairs.iter().map(|(p, r)| f64::from(u8::from(p == r)))),
    })
}

/// Evaluates every world model plus the Copy baseline on the same
/// instances and seeds. With a dynamics model, verified selection is
/// reported and the dynamics model's own action predictions are scored.
pub fn run_eval(
    models: &[(&str, &ModelCheckpoint)],
    test: &[TrajectoryTriplet],
    cdm: Option<&ModelCheckpoint>,
    cfg: &EvalConfig,
    vocab: &Vocab,
) -> Result<EvalReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::ConfigInvalid("empty test set".into()));
    }
    let mut per_model = Vec::with_capacity(models.len());
    for (name, wm) in models {
        per_model.push((name.to_string(), evaluate_world_model(name, wm, test, cdm, cfg, vocab)?));
    }
    let actions = match cdm {
        Some(m) => vec![evaluate_dynamics_model("cdm", m, test, cfg, vocab)?],
        None => Vec::new(),
    };
    EvalReport::assemble(test, per_model, actions, &cfg.sweep)
}

impl EvalReport {
    /// Builds the report from per-model instance records; the Copy row is added here.
    pub fn assemble(
        test: &[TrajectoryTriplet],
        per_model: Vec<(String, Vec<InstanceRecord>)>,
        actions: Vec<ActionRow>,
        sweep: &[usize],
    ) -> Result<Self> {
        let copy = copy_records(test)?;
        let mut models = vec![summarise(COPY_ROW, &copy, sweep)];
        let mut records = copy;
        for (name, r) in per_model {
            if r.len() != test.len() {
                return Err(Error::ShapeMismatch(format!("{name}: {} records for {} instances", r.len(), test.len())));
            }
            models.push(summarise(&name, &r, sweep));
            records.extend(r);
        }
        Ok(Self {
            instances: test.len(),
            models,
            actions,
            records,
        })
    }

    pub fn model(&self, name: &str) -> Option<&ModelRow> {
        self.models.iter().find(|m| m.name == name)
    }

    /// One row per model; sweep columns are `verified_n{N}` and `oracle_n{N}`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ns: Vec<usize> = self.models.first().map(|m| m.sweep.iter().map(|p| p.n).collect()).unwrap_or_default();
        let mut header: Vec<String> = ["model", "judge", "es", "me", "exact_match", "cell_accuracy", "l1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(ns.iter().map(|n| format!("verified_n{n}")));
        header.extend(ns.iter().map(|n| format!("oracle_n{n}")));
        w.write_record(&header)?;
        for m in &self.models {
            let mut row = vec![
                m.name.clone(),
                m.judge.to_string(),
                m.es.to_string(),
                m.me.to_string(),
                m.exact_match.to_string(),
                m.cell_accuracy.to_string(),
                m.l1.to_string(),
            ];
            row.extend(m.sweep.iter().map(|p| p.verified.map(|v| v.to_string()).unwrap_or_default()));
            row.extend(m.sweep.iter().map(|p| p.oracle.to_string()));
            w.write_record(&row)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn actions_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "bleu", "rouge1", "rouge2", "rouge_l", "exact_match"])?;
        for a in &self.actions {
            w.write_record([
                a.name.clone(),
                a.bleu.to_string(),
                a.rouge1.to_string(),
                a.rouge2.to_string(),
                a.rouge_l.to_string(),
                a.exact_match.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    /// Per-instance verification table: one line per model, instance and N.
    pub fn verify_csv(&self) -> Result<String> {
        let ns: Vec<usize> = self.models.first().map(|m| m.sweep.iter().map(|p| p.n).collect()).unwrap_or_default();
        let records: Vec<InstanceRecord> = self.records.iter().filter(|r| r.model != COPY_ROW).cloned().collect();
        verify_csv(&records, &ns)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Plain-text table, one row per model, with the verification sweep.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "model", "judge", "ES", "ME", "exact", "cell", "L1");
        if let Some(m) = self.models.first() {
            for p in &m.sweep {
                let _ = write!(s, " {:>6}", format!("v@{}", p.n));
            }
            for p in &m.sweep {
                let _ = write!(s, " {:>6}", format!("o@{}", p.n));
            }
        }
        s.push('\n');
        for m in &self.models {
            let _ = write!(
                s,
                "{:<16} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.4}",
                m.name, m.judge, m.es, m.me, m.exact_match, m.cell_accuracy, m.l1
            );
            for p in &m.sweep {
                match p.verified {
                    Some(v) => {
                        let _ = write!(s, " {v:>6.3}");
                    }
                    None => {
                        let _ = write!(s, " {:>6}", "-");
                    }
                }
            }
            for p in &m.sweep {
                let _ = write!(s, " {:>6.3}", p.oracle);
            }
            s.push('\n');
        }
        let avg = mean(self.models.iter().filter(|m| m.name != COPY_ROW).map(|m| m.judge));
        let _ = writeln!(s, "average judge over models: {avg:.3}  ({} instances)", self.instances);
        if !self.actions.is_empty() {
            let _ = writeln!(s, "\n{:<16} {:>6} {:>6} {:>6} {:>6} {:>6}", "dynamics", "BLEU", "R-1", "R-2", "R-L", "exact");
            for a in &self.actions {
                let _ = writeln!(
                    s,
                    "{:<16} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                    a.name, a.bleu, a.rouge1, a.rouge2, a.rouge_l, a.exact_match
                );
            }
        }
        s
    }
}

/// Per-instance verification table for `records`: one line per record and N.
pub fn verify_csv(records: &[InstanceRecord], sweep: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "index", "n", "selected", "selected_score", "oracle_score", "rewards", "candidate_scores"])?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    for r in records {
        for &n in sweep {
            let n = n.clamp(1, r.candidate_scores.len());
            let (sel, score, rewards) = match &r.rewards {
                Some(rw) => {
                    let s = argmax_first(&rw[..n]);
                    (s.to_string(), r.candidate_scores[s].to_string(), join(&rw[..n]))
                }
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                r.model.clone(),
                r.index.to_string(),
                n.to_string(),
                sel,
                score,
                r.oracle(n).to_string(),
                rewards,
                join(&r.candidate_scores[..n]),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}
