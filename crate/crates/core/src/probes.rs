//! Likelihood probes: corrupt ground-truth triplets in four ways and check
//! whether a model prefers the original.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, ActionKind, Color, TrajectoryTriplet};
use crate::seed::{derive_seed, rng_from_seed};
use crate::seqmodel::ModelCheckpoint;
use crate::tokencodec::{encode_triplet, TaskMode, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    RandomAction,
    CounterfactualAction,
    CopyObservation,
    InverseObservation,
}

impl NegativeKind {
    pub const ALL: [NegativeKind; 4] = [
        NegativeKind::RandomAction,
        NegativeKind::CounterfactualAction,
        NegativeKind::CopyObservation,
        NegativeKind::InverseObservation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NegativeKind::RandomAction => "random_action",
            NegativeKind::CounterfactualAction => "counterfactual_action",
            NegativeKind::CopyObservation => "copy_observation",
            NegativeKind::InverseObservation => "inverse_observation",
        }
    }
}

impl fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeTriplet {
    pub base: TrajectoryTriplet,
    pub kind: NegativeKind,
    pub payload: TrajectoryTriplet,
}

/// Fixed recolor antonyms.
pub fn opposite_color(c: Color) -> Color {
    match c {
        Color::Red => Color::Green,
        Color::Green => Color::Red,
        Color::Blue => Color::Yellow,
        Color::Yellow => Color::Blue,
    }
}

/// The action that contradicts `action` on `triplet`'s source board.
pub fn counterfactual(triplet: &TrajectoryTriplet, action: &Action) -> Result<Action> {
    let subject = action.subject;
    let kind = match action.kind {
        ActionKind::Move { direction } => ActionKind::Move {
            direction: direction.opposite(),
        },
        ActionKind::Recolor { color } => ActionKind::Recolor {
            color: opposite_color(color),
        },
        ActionKind::Add { .. } => ActionKind::Remove,
        ActionKind::Remove => {
            let (row, col) = triplet
                .source
                .find(subject)
                .ok_or_else(|| Error::MissingSubject(subject.to_string()))?;
            ActionKind::Add { row, col }
        }
    };
    Ok(Action::new(kind, subject))
}

/// Builds one manipulated triplet. `pool` supplies replacement actions for
/// [`NegativeKind::RandomAction`].
pub fn make_negative(
    t: &TrajectoryTriplet,
    kind: NegativeKind,
    rng_seed: u64,
    pool: &[TrajectoryTriplet],
) -> Result<NegativeTriplet> {
    let payload = match kind {
        NegativeKind::RandomAction => {
            let others: Vec<&str> = pool
                .iter()
                .map(|p| p.text.as_str())
                .filter(|&text| text != t.text)
                .collect();
            if others.is_empty() {
                return Err(Error::NoDistinctAction);
            }
            let pick = rng_from_seed(rng_seed).random_range(0..others.len());
            t.with_text(others[pick].to_string())
        }
        NegativeKind::CounterfactualAction => {
            let action = t.action.ok_or_else(|| Error::ActionParse(t.text.clone()))?;
            t.with_text(counterfactual(t, &action)?.text())
        }
        NegativeKind::CopyObservation => TrajectoryTriplet {
            target: t.source.clone(),
            ..t.clone()
        },
        NegativeKind::InverseObservation => TrajectoryTriplet {
            source: t.target.clone(),
            target: t.source.clone(),
            ..t.clone()
        },
    };
    Ok(NegativeTriplet {
        base: t.clone(),
        kind,
        payload,
    })
}

/// Completion NLL of one triplet, summed and per token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    pub total: f64,
    pub tokens: usize,
}

impl Nll {
    pub fn mean(&self) -> f64 {
        self.total / self.tokens as f64
    }
}

pub fn nll(model: &ModelCheckpoint, t: &TrajectoryTriplet, task: TaskMode, vocab: &Vocab) -> Result<Nll> {
    let seq = encode_triplet(t, task, vocab)?;
    let (total, per) = model.score(&seq)?;
    Ok(Nll {
        total: -total,
        tokens: per.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub kind: NegativeKind,
    pub index: usize,
    pub reference: Nll,
    pub negative: Nll,
}

/// Whether NLLs are compared as totals or per-token means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Total,
    PerToken,
}

impl Normalization {
    fn apply(self, n: &Nll) -> f64 {
        match self {
            Normalization::Total => n.total,
            Normalization::PerToken => n.mean(),
        }
    }
}

/// Preference statistics for one kind under one normalization. Rates are
/// percentages; a tie counts as neither preference nor anti-preference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStats {
    pub count: usize,
    pub preference_rate: f64,
    pub tie_rate: f64,
    pub anti_preference_rate: f64,
    /// `None` when either NLL vector has zero variance.
    pub pearson: Option<f64>,
}

impl PreferenceStats {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len();
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        let preferred = pairs.iter().filter(|(r, g)| r < g).count();
        let ties = pairs.iter().filter(|(r, g)| r == g).count();
        let refs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let negs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Self {
            count: n,
            preference_rate: pct(preferred),
            tie_rate: pct(ties),
            anti_preference_rate: pct(n - preferred - ties),
            pearson: pearson(&refs, &negs),
        }
    }
}

/// Sample Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: NegativeKind,
    pub total: PreferenceStats,
    pub per_token: PreferenceStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: TaskMode,
    pub seed: u64,
    pub summary: Vec<KindSummary>,
    pub pairs: Vec<ProbePair>,
}

impl ProbeReport {
    pub fn kind(&self, kind: NegativeKind) -> Option<&KindSummary> {
        self.summary.iter().find(|s| s.kind == kind)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "index", "nll_ref", "nll_neg", "tokens_ref", "tokens_neg"])?;
        for p in &self.pairs {
            w.write_record([
                p.kind.name().to_string(),
                p.index.to_string(),
                p.reference.total.to_string(),
                p.negative.total.to_string(),
                p.reference.tokens.to_string(),
                p.negative.tokens.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            task: TaskMode,
            seed: u64,
            kinds: &'a [KindSummary],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            task: self.task,
            seed: self.seed,
            kinds: &self.summary,
        })?)
    }
}

/// Scores every triplet against each of `kinds` and summarises preferences.
/// Random replacements are drawn from `triplets` itself.
pub fn run_probe(
    model: &ModelCheckpoint,
    triplets: &[TrajectoryTriplet],
    task: TaskMode,
    kinds: &[NegativeKind],
    seed: u64,
    vocab: &Vocab,
) -> Result<ProbeReport> {
    if triplets.len() < 2 {
        return Err(Error::ConfigInvalid("probing needs at least two triplets".into()));
    }
    model.check_vocab(vocab)?;
    let references = triplets
        .iter()
        .map(|t| nll(model, t, task, vocab))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::with_capacity(kinds.len() * triplets.len());
    let mut summary = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let start = pairs.len();
        for (i, t) in triplets.iter().enumerate() {
            let neg = make_negative(t, kind, derive_seed(seed, kind.name(), i as u64), triplets)?;
            pairs.push(ProbePair {
                kind,
                index: i,
                reference: references[i],
                negative: nll(model, &neg.payload, task, vocab)?,
            });
        }
        let stats = |norm: Normalization| {
            let v: Vec<(f64, f64)> = pairs[start..]
                .iter()
                .map(|p| (norm.apply(&p.reference), norm.apply(&p.negative)))
                .collect();
            PreferenceStats::from_pairs(&v)
        };
        summary.push(KindSummary {
            kind,
            total: stats(Normalization::Total),
            per_token: stats(Normalization::PerToken),
        });
    }
    Ok(ProbeReport {
        task,
        seed,
        summary,
        pairs,
    })
}
