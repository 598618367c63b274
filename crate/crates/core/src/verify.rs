//! Best-of-N inference: sample several next boards from the world model and
//! keep the one under which the dynamics model finds the stated action most
//! likely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::judge_against;
use crate::gridworld::{Action, Board};
use crate::seqmodel::{AllowedRange, Length, ModelCheckpoint, SampleConfig};
use crate::tokencodec::{decode_board, dynamics_prompt, world_prompt, TaskMode, TokenSequence, Vocab, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Number of candidates.
    pub n: usize,
    pub sample: SampleConfig,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 8,
            sample: SampleConfig::default(),
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::ConfigInvalid("verification needs n >= 1".into()));
        }
        self.sample.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source: Board,
    pub action: String,
    pub candidates: Vec<Board>,
    /// Sampled completions (image ids plus EOS).
    pub tokens: Vec<Vec<u32>>,
    pub rewards: Vec<f64>,
    pub selected: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn selected_board(&self) -> &Board {
        &self.candidates[self.selected]
    }

    /// The set restricted to its first `n` candidates, reselected.
    /// Candidate streams are nested, so this equals a fresh run with `n`.
    pub fn prefix(&self, n: usize) -> CandidateSet {
        let n = n.clamp(1, self.len());
        let rewards = self.rewards[..n].to_vec();
        CandidateSet {
            source: self.source.clone(),
            action: self.action.clone(),
            candidates: self.candidates[..n].to_vec(),
            tokens: self.tokens[..n].to_vec(),
            selected: argmax_first(&rewards),
            rewards,
        }
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws `cfg.n` boards from the world model; candidate `i` depends only on `(cfg.seed, i)`.
pub fn sample_candidates(
    wm: &ModelCheckpoint,
    source: &Board,
    action_text: &str,
    cfg: &VerifyConfig,
    vocab: &Vocab,
) -> Result<(Vec<Board>, Vec<Vec<u32>>)> {
    cfg.validate()?;
    wm.check_vocab(vocab)?;
    if wm.task() != TaskMode::World {
        return Err(Error::ConfigInvalid("candidate sampling needs a world-mode checkpoint".into()));
    }
    let (h, w) = (source.height(), source.width());
    let prompt = world_prompt(source, action_text, vocab)?;
    let tokens = wm.sample(
        &prompt,
        cfg.n,
        &cfg.sample,
        AllowedRange::Image,
        Length::Fixed(h * w),
        vocab,
        cfg.seed,
    )?;
    let boards = tokens
        .iter()
        .map(|t| decode_board(&t[..h * w], h, w, vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok((boards, tokens))
}

/// Dynamics-model log-likelihood of `action_text` for each `(source, candidate)`.
pub fn cdm_rewards(
    cdm: &ModelCheckpoint,
    source: &Board,
    candidates: &[Board],
    action_text: &str,
    vocab: &Vocab,
) -> Result<Vec<f64>> {
    cdm.check_vocab(vocab)?;
    if cdm.task() != TaskMode::Dynamics {
        return Err(Error::ConfigInvalid("rewards need a dynamics-mode checkpoint".into()));
    }
    let mut completion = vocab.encode_text(action_text)?;
    completion.push(EOS);
    candidates
        .iter()
        .map(|c| {
            let seq = TokenSequence::new(dynamics_prompt(source, c, vocab), completion.clone());
            Ok(cdm.score(&seq)?.0)
        })
        .collect()
}

pub fn verify_predict(
    wm: &ModelCheckpoint,
    cdm: &ModelCheckpoint,
    source: &Board,
    action: &Action,
    cfg: &VerifyConfig,
    vocab: &Vocab,
) -> Result<CandidateSet> {
    let text = action.text();
    let (candidates, tokens) = sample_candidates(wm, source, &text, cfg, vocab)?;
    let rewards = cdm_rewards(cdm, source, &candidates, &text, vocab)?;
    Ok(CandidateSet {
        source: source.clone(),
        action: text,
        candidates,
        tokens,
        selected: argmax_first(&rewards),
        rewards,
    })
}

/// The ceiling: rewards are judge scores against the true next board.
pub fn best_of_n_oracle(
    wm: &ModelCheckpoint,
    source: &Board,
    action: &Action,
    truth: &Board,
    cfg: &VerifyConfig,
    vocab: &Vocab,
) -> Result<CandidateSet> {
    let text = action.text();
    let (candidates, tokens) = sample_candidates(wm, source, &text, cfg, vocab)?;
    let rewards = candidates
        .iter()
        .map(|c| Ok(judge_against(source, truth, c)?.score))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        source: source.clone(),
        action: text,
        candidates,
        tokens,
        selected: argmax_first(&rewards),
        rewards,
    })
}
