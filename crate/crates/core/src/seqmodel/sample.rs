use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{with_engine, ModelCheckpoint};
use super::real::Real;
use super::transformer::Transformer;
use crate::error::{Error, Result};
use crate::seed::stage_rng;
use crate::tokencodec::{Vocab, EOS};

/// Which part of the vocabulary a completion may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowedRange {
    Image,
    Text,
}

/// How long a completion runs before its closing EOS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Length {
    /// Exactly this many allowed-range tokens, then EOS.
    Fixed(usize),
    /// Until the model emits EOS, or `max` tokens have been drawn.
    UntilEos { max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 5,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) || self.top_k == 0 {
            return Err(Error::ConfigInvalid("temperature must be positive and top_k at least 1".into()));
        }
        Ok(())
    }
}

impl ModelCheckpoint {
    /// Draws `n` completions of `prompt`. Completion `i` uses its own RNG
    /// stream derived from `(seed, i)`, so asking for more candidates never
    /// changes the earlier ones. Every completion ends with EOS.
    pub fn sample(
        &self,
        prompt: &[u32],
        n: usize,
        cfg: &SampleConfig,
        allowed: AllowedRange,
        length: Length,
        vocab: &Vocab,
        seed: u64,
    ) -> Result<Vec<Vec<u32>>> {
        cfg.validate()?;
        if prompt.is_empty() {
            return Err(Error::ShapeMismatch("empty prompt".into()));
        }
        let range = match allowed {
            AllowedRange::Image => vocab.image_range(),
            AllowedRange::Text => vocab.text_range(),
        };
        let ids: Vec<u32> = range.collect();
        let max_new = match length {
            Length::Fixed(k) => k,
            Length::UntilEos { max } => max,
        };
        if prompt.len() + max_new > self.config().context_length {
            return Err(Error::ShapeMismatch(format!(
                "prompt of {} plus {} new tokens exceeds context {}",
                prompt.len(),
                max_new,
                self.config().context_length
            )));
        }
        with_engine!(&self.engine, m => sample_with(m, prompt, n, cfg, &ids, length, seed))
    }
}

fn sample_with<F: Real>(
    model: &Transformer<F>,
    prompt: &[u32],
    n: usize,
    cfg: &SampleConfig,
    allowed: &[u32],
    length: Length,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    // The prompt's key/value cache is shared by every candidate.
    let mut primed = model.start_decode();
    for &t in prompt {
        model.decode_step(&mut primed, t)?;
    }
    let mut out = Vec::with_capacity(n);
    let mut cands: Vec<(u32, f64)> = Vec::with_capacity(allowed.len() + 1);
    for i in 0..n {
        let mut rng = stage_rng(seed, "sample", i as u64);
        let mut state = primed.clone();
        let mut completion = Vec::new();
        loop {
            let drawn = completion.len();
            let eos_allowed = match length {
                Length::Fixed(k) if drawn == k => break,
                Length::Fixed(_) => false,
                Length::UntilEos { max } if drawn == max => break,
                Length::UntilEos { .. } => true,
            };
            let logits = state.logits();
            cands.clear();
            cands.extend(allowed.iter().map(|&id| (id, logits[id as usize].as_f64())));
            if eos_allowed {
                cands.push((EOS, logits[EOS as usize].as_f64()));
            }
            let tok = draw(&mut cands, cfg, &mut rng);
            if tok == EOS {
                break;
            }
            completion.push(tok);
            model.decode_step(&mut state, tok)?;
        }
        completion.push(EOS);
        out.push(completion);
    }
    Ok(out)
}

/// Top-k then temperature-scaled softmax sampling over `cands` (id, logit).
fn draw<R: Rng>(cands: &mut [(u32, f64)], cfg: &SampleConfig, rng: &mut R) -> u32 {
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let top = &cands[..cfg.top_k.min(cands.len())];
    if top.len() == 1 {
        return top[0].0;
    }
    let max = top[0].1;
    let weights: Vec<f64> = top.iter().map(|(_, l)| ((l - max) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&(id, _), w) in top.iter().zip(&weights) {
        if u < *w {
            return id;
        }
        u -= w;
    }
    top[top.len() - 1].0
}
