use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, TrainManifest};
use super::real::Real;
use super::transformer::{ParamKind, Transformer};
use super::{ModelConfig, Precision};
use crate::error::{Error, Result};
use crate::gridworld::TrajectoryTriplet;
use crate::seed::{content_hash, derive_seed, stage_rng};
use crate::tokencodec::{encode_triplet, recognition_weights, TaskMode, TokenSequence, Vocab, DEFAULT_WEIGHT_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Standard,
    /// Image tokens of the target weighted by how much their cell changed.
    RecognitionWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Floor of the cosine decay as a fraction of the peak rate.
    pub min_lr_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub weight_floor: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            warmup_steps: 400,
            min_lr_ratio: 0.0,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            loss_mode: LossMode::Standard,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            weight_decay: 0.0,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * self.steps_per_epoch(examples)
    }

    pub fn validate(&self, examples: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        let total = self.total_steps(examples);
        if self.warmup_steps >= total {
            return bad(format!("warm-up ({}) must be shorter than training ({total} steps)", self.warmup_steps));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("min_lr_ratio in [0,1], weight_decay and grad_clip non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0,1) and eps be positive".into());
        }
        if !(self.weight_floor > 0.0) {
            return bad("weight_floor must be positive".into());
        }
        Ok(())
    }
}

/// Linear warm-up to `cfg.learning_rate`, then cosine decay to
/// `min_lr_ratio · learning_rate` at `total` steps.
pub fn cosine_lr(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let peak = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return peak * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = total.saturating_sub(cfg.warmup_steps).max(1) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    let floor = cfg.min_lr_ratio;
    peak * (floor + (1.0 - floor) * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Encodes `data` for `task` with the per-token loss weights of `mode`.
pub(crate) fn prepare(
    data: &[TrajectoryTriplet],
    task: TaskMode,
    mode: LossMode,
    floor: f64,
    vocab: &Vocab,
) -> Result<(Vec<TokenSequence>, Vec<Vec<f64>>)> {
    if mode == LossMode::RecognitionWeighted && task != TaskMode::World {
        return Err(Error::ConfigInvalid("recognition weighting applies to world-model training only".into()));
    }
    let mut seqs = Vec::with_capacity(data.len());
    let mut weights = Vec::with_capacity(data.len());
    for t in data {
        let seq = encode_triplet(t, task, vocab)?;
        let w = match mode {
            LossMode::Standard => seq.loss_weights(None)?,
            LossMode::RecognitionWeighted => {
                let map = recognition_weights(&t.source, &t.target, floor)?;
                seq.loss_weights(Some(&map))?
            }
        };
        seqs.push(seq);
        weights.push(w);
    }
    Ok((seqs, weights))
}

/// Trains a fresh model on `data` framed as `task`. Supervised and
/// synthetic triplets enter the same objective; synthetic ones simply carry
/// the annotated action text.
pub fn train(
    data: &[TrajectoryTriplet],
    task: TaskMode,
    model: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
) -> Result<ModelCheckpoint> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("training data is empty".into()));
    }
    cfg.validate(data.len())?;
    if let Some(t) = data.first() {
        model.validate_for_board(t.source.height() * t.source.width())?;
    }
    if model.vocab_size != vocab.len() {
        return Err(Error::ConfigInvalid(format!(
            "model vocab_size {} does not match the codec ({})",
            model.vocab_size,
            vocab.len()
        )));
    }
    let (seqs, weights) = prepare(data, task, cfg.loss_mode, cfg.weight_floor, vocab)?;
    let data_hash = content_hash(&serde_json::to_vec(data)?);
    match model.precision {
        Precision::Standard => run::<f32>(&seqs, &weights, task, model, cfg, vocab, data_hash),
        Precision::High => run::<f64>(&seqs, &weights, task, model, cfg, vocab, data_hash),
    }
}

fn run<F: Real>(
    seqs: &[TokenSequence],
    weights: &[Vec<f64>],
    task: TaskMode,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
    data_hash: String,
) -> Result<ModelCheckpoint> {
    let mut model = Transformer::<F>::init(model_cfg, derive_seed(cfg.seed, "init", 0))?;
    let n_params = model.num_params();
    let decay_mask: Vec<bool> = {
        let mut mask = vec![false; n_params];
        for e in &model.layout().entries {
            if e.kind == ParamKind::Matrix {
                mask[e.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    };
    let mut adam_m = vec![0.0f64; n_params];
    let mut adam_v = vec![0.0f64; n_params];
    let mut grad = vec![F::zero(); n_params];
    let total = cfg.total_steps(seqs.len());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut batch_w = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stage_rng(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch_w.clear();
            for &i in chunk {
                batch.push(seqs[i].clone());
                batch_w.push(weights[i].clone());
            }
            grad.iter_mut().for_each(|g| *g = F::zero());
            let loss = model.loss_and_grad_into(&batch, &batch_w, &mut grad)?;
            let gnorm = grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let clip = if cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip {
                cfg.grad_clip / gnorm
            } else {
                1.0
            };
            let lr = cosine_lr(cfg, step, total);
            let t = (step + 1) as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for (i, p) in model.params_mut().iter_mut().enumerate() {
                let g = grad[i].as_f64() * clip;
                adam_m[i] = cfg.beta1 * adam_m[i] + (1.0 - cfg.beta1) * g;
                adam_v[i] = cfg.beta2 * adam_v[i] + (1.0 - cfg.beta2) * g * g;
                let mut update = (adam_m[i] / bc1) / ((adam_v[i] / bc2).sqrt() + cfg.adam_eps);
                if decay_mask[i] {
                    update += cfg.weight_decay * p.as_f64();
                }
                *p -= F::lit(lr * update);
            }
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("{} epoch {} loss {mean:.4}", task.name(), epoch + 1);
        loss_curve.push(mean);
    }

    let manifest = TrainManifest {
        task,
        seed: cfg.seed,
        steps: step,
        examples: seqs.len(),
        data_hash,
        train_config: cfg.clone(),
        loss_curve,
    };
    ModelCheckpoint::from_transformer(&model, vocab, manifest)
}
