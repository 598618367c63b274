//! Turns unlabelled rollouts into synthetic training triplets: score motion
//! per frame, pick keyframes, let the dynamics model caption each keyframe
//! transition, then keep a class-balanced, high-likelihood subset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{render, ActionClass, Board, Episode, RasterImage, SyntheticInfo, TrajectoryTriplet, CELL_PX};
use crate::probes::Normalization;
use crate::seed::derive_seed;
use crate::seqmodel::{AllowedRange, Length, ModelCheckpoint, SampleConfig};
use crate::tokencodec::{dynamics_prompt, TaskMode, TokenSequence, Vocab, ACTION_SLOTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionEstimator {
    /// Number of cells that differ from the previous frame.
    #[default]
    CellDiff,
    /// Mean block-matching displacement (in cells) between rendered frames.
    BlockFlow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    /// Minimum gap between selected frames (`I_f`).
    pub min_interval: usize,
    /// Frames to select per episode (`K_f`).
    pub count: usize,
    pub estimator: MotionEstimator,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            min_interval: 20,
            count: 6,
            estimator: MotionEstimator::CellDiff,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_interval < 1 || self.count < 2 {
            return Err(Error::ConfigInvalid("keyframes need min_interval >= 1 and count >= 2".into()));
        }
        Ok(())
    }
}

/// Search radius for block matching, in pixels.
pub const FLOW_RADIUS: usize = 2 * CELL_PX;

/// Per-frame motion scores; `scores[0]` is always 0.
pub fn motion_scores(episode: &Episode, estimator: MotionEstimator) -> Result<Vec<f64>> {
    let frames = &episode.frames;
    if frames.len() < 2 {
        return Err(Error::ConfigInvalid("episode needs at least two frames".into()));
    }
    let mut scores = vec![0.0];
    match estimator {
        MotionEstimator::CellDiff => {
            scores.extend(frames.windows(2).map(|w| w[1].diff_count(&w[0]) as f64));
        }
        MotionEstimator::BlockFlow => {
            let rasters: Vec<RasterImage> = frames.iter().map(render).collect();
            for w in rasters.windows(2) {
                scores.push(block_flow(&w[0], &w[1], CELL_PX, FLOW_RADIUS)?);
            }
        }
    }
    Ok(scores)
}

fn block_sad(prev: &RasterImage, next: &RasterImage, by: usize, bx: usize, py: usize, px: usize, block: usize) -> u64 {
    let c = RasterImage::CHANNELS;
    let mut sad = 0u64;
    for y in 0..block {
        let a = ((by + y) * next.width + bx) * c;
        let b = ((py + y) * prev.width + px) * c;
        for (u, v) in next.data[a..a + block * c].iter().zip(&prev.data[b..b + block * c]) {
            sad += u.abs_diff(*v) as u64;
        }
    }
    sad
}

/// Exhaustive block matching from `next` back into `prev`. Only blocks that
/// changed are matched; each one contributes the length of its best
/// displacement (lowest SAD, then shortest, then row-major first). Returns
/// the mean over changed blocks in units of `block`, or 0 when nothing changed.
pub fn block_flow(prev: &RasterImage, next: &RasterImage, block: usize, radius: usize) -> Result<f64> {
    if prev.height != next.height || prev.width != next.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            prev.height, prev.width, next.height, next.width
        )));
    }
    if block == 0 || prev.height < block || prev.width < block {
        return Err(Error::DimensionMismatch("block larger than the image".into()));
    }
    let r = radius as isize;
    let mut total = 0.0;
    let mut moving = 0usize;
    for by in (0..=prev.height - block).step_by(block) {
        for bx in (0..=prev.width - block).step_by(block) {
            if block_sad(prev, next, by, bx, by, bx, block) == 0 {
                continue;
            }
            let mut best = (u64::MAX, isize::MAX, 0isize, 0isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (py, px) = (by as isize + dy, bx as isize + dx);
                    if py < 0 || px < 0 || py as usize + block > prev.height || px as usize + block > prev.width {
                        continue;
                    }
                    let sad = block_sad(prev, next, by, bx, py as usize, px as usize, block);
                    let cand = (sad, dy * dy + dx * dx, dy, dx);
                    if cand < best {
                        best = cand;
                    }
                }
            }
            total += (best.1 as f64).sqrt() / block as f64;
            moving += 1;
        }
    }
    Ok(if moving == 0 { 0.0 } else { total / moving as f64 })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSelection {
    /// Selected frame indices, ascending.
    pub indices: Vec<usize>,
    /// Set when fewer than `count` frames could be selected.
    pub degraded: bool,
}

/// Greedy by score (ties to the lower index): take the best remaining frame,
/// exclude everything closer than `min_interval` to it, repeat.
pub fn select_keyframes(scores: &[f64], cfg: &KeyframeConfig) -> KeyframeSelection {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = Vec::with_capacity(cfg.count);
    for i in order {
        if picked.len() == cfg.count {
            break;
        }
        if picked.iter().all(|&j| i.abs_diff(j) >= cfg.min_interval) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    KeyframeSelection {
        degraded: picked.len() < cfg.count,
        indices: picked,
    }
}

/// An unlabelled `(source, target)` pair cut from an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub source: Board,
    pub target: Board,
    pub episode: u64,
    pub frames: (usize, usize),
}

/// Pairs each selected keyframe `t` with frame `t - 1`, the transition its
/// motion score measured. Frame 0 has no predecessor and is never a keyframe.
pub fn keyframe_pairs(episode: &Episode, episode_id: u64, cfg: &KeyframeConfig) -> Result<(Vec<FramePair>, bool)> {
    cfg.validate()?;
    let scores = motion_scores(episode, cfg.estimator)?;
    let sel = select_keyframes(&scores[1..], cfg);
    let pairs = sel
        .indices
        .iter()
        .map(|&i| {
            let t = i + 1;
            FramePair {
                source: episode.frames[t - 1].clone(),
                target: episode.frames[t].clone(),
                episode: episode_id,
                frames: (t - 1, t),
            }
        })
        .collect();
    Ok((pairs, sel.degraded))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub sample: SampleConfig,
    pub score: Normalization,
    pub seed: u64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            sample: SampleConfig {
                temperature: 1.0,
                top_k: 1,
            },
            score: Normalization::Total,
            seed: 0,
        }
    }
}

/// A synthetic triplet with its annotation score and class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub triplet: TrajectoryTriplet,
    pub score: f64,
    pub class: ActionClass,
}

/// Captions every pair with the dynamics model. Nothing is dropped here:
/// out-of-grammar captions are kept with class `Unparseable`.
pub fn annotate_pairs(
    pairs: &[FramePair],
    cdm: &ModelCheckpoint,
    cfg: &AnnotateConfig,
    vocab: &Vocab,
) -> Result<Vec<ScoredTriplet>> {
    cdm.check_vocab(vocab)?;
    if cdm.task() != TaskMode::Dynamics {
        return Err(Error::ConfigInvalid("annotation needs a dynamics-mode checkpoint".into()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let seed = derive_seed(cfg.seed, "annotate", i as u64);
        let prompt = dynamics_prompt(&p.source, &p.target, vocab);
        let completion = cdm
            .sample(
                &prompt,
                1,
                &cfg.sample,
                AllowedRange::Text,
                Length::UntilEos { max: ACTION_SLOTS },
                vocab,
                seed,
            )?
            .remove(0);
        let text = vocab.decode_text(&completion)?;
        let (total, per) = cdm.score(&TokenSequence::new(prompt, completion))?;
        let score = match cfg.score {
            Normalization::Total => total,
            Normalization::PerToken => total / per.len() as f64,
        };
        let class = ActionClass::of_text(&text);
        let info = SyntheticInfo {
            score,
            class,
            episode: p.episode,
            frames: p.frames,
        };
        out.push(ScoredTriplet {
            triplet: TrajectoryTriplet::synthetic(p.source.clone(), text, p.target.clone(), info, seed),
            score,
            class,
        });
    }
    Ok(out)
}

/// Indices chosen by stratified top-k: sort by descending score (stable),
/// then visit classes round-robin in `class_order`, each time taking the
/// best unsampled item of that class, until `k` items are taken or none
/// remain. Items whose class is not in `class_order` are never taken.
pub fn stratified_indices<C: PartialEq>(scores: &[f64], classes: &[C], class_order: &[C], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut buckets: Vec<std::collections::VecDeque<usize>> = class_order
        .iter()
        .map(|c| order.iter().copied().filter(|&i| classes[i] == *c).collect())
        .collect();
    let available: usize = buckets.iter().map(|b| b.len()).sum();
    let target = k.min(available);
    let mut picked = Vec::with_capacity(target);
    while picked.len() < target {
        for b in buckets.iter_mut() {
            if let Some(i) = b.pop_front() {
                picked.push(i);
            }
            if picked.len() == target {
                break;
            }
        }
    }
    picked
}

pub fn stratified_top_k(x: &[ScoredTriplet], k: usize) -> Vec<ScoredTriplet> {
    let scores: Vec<f64> = x.iter().map(|s| s.score).collect();
    let classes: Vec<ActionClass> = x.iter().map(|s| s.class).collect();
    stratified_indices(&scores, &classes, &ActionClass::ALL, k)
        .into_iter()
        .map(|i| x[i].clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub keyframes: KeyframeConfig,
    pub annotate: AnnotateConfig,
    /// Number of synthetic triplets to keep.
    pub target_count: usize,
    /// Drop pairs whose frames are identical before sampling.
    pub drop_static: bool,
    /// Drop out-of-grammar captions before sampling.
    pub drop_unparseable: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframes: KeyframeConfig::default(),
            annotate: AnnotateConfig::default(),
            target_count: 2000,
            drop_static: true,
            drop_unparseable: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: ActionClass,
    pub annotated: usize,
    pub selected: usize,
    pub mean_score: Option<f64>,
    pub min_score: Option<f64>,
    pub max_score: Option<f64>,
}

/// Summary of one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub episodes: usize,
    pub degraded_episodes: usize,
    pub pairs: usize,
    pub after_filters: usize,
    pub selected: usize,
    pub classes: Vec<ClassRow>,
}

impl PipelineReport {
    fn build(
        episodes: usize,
        degraded: usize,
        annotated: &[ScoredTriplet],
        kept: usize,
        selected: &[ScoredTriplet],
    ) -> Self {
        let mut scores: BTreeMap<ActionClass, Vec<f64>> = BTreeMap::new();
        for s in annotated {
            scores.entry(s.class).or_default().push(s.score);
        }
        let classes = ActionClass::ALL
            .iter()
            .map(|&class| {
                let v = scores.get(&class).cloned().unwrap_or_default();
                let (mean, min, max) = if v.is_empty() {
                    (None, None, None)
                } else {
                    (
                        Some(v.iter().sum::<f64>() / v.len() as f64),
                        v.iter().copied().reduce(f64::min),
                        v.iter().copied().reduce(f64::max),
                    )
                };
                ClassRow {
                    class,
                    annotated: v.len(),
                    selected: selected.iter().filter(|s| s.class == class).count(),
                    mean_score: mean,
                    min_score: min,
                    max_score: max,
                }
            })
            .collect();
        Self {
            episodes,
            degraded_episodes: degraded,
            pairs: annotated.len(),
            after_filters: kept,
            selected: selected.len(),
            classes,
        }
    }

    /// Per-class histogram and score summary.
    pub fn class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "annotated", "selected", "mean_score", "min_score", "max_score"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.classes {
            w.write_record([
                r.class.name().to_string(),
                r.annotated.to_string(),
                r.selected.to_string(),
                opt(r.mean_score),
                opt(r.min_score),
                opt(r.max_score),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }
}

/// Keyframe pairs of every episode (in order), captioned and scored by the
/// dynamics model. Also returns how many episodes yielded fewer keyframes
/// than requested.
pub fn annotate_episodes(
    episodes: &[Episode],
    cdm: &ModelCheckpoint,
    cfg: &PipelineConfig,
    vocab: &Vocab,
) -> Result<(Vec<ScoredTriplet>, usize)> {
    let mut pairs = Vec::new();
    let mut degraded = 0;
    for (id, ep) in episodes.iter().enumerate() {
        let (p, d) = keyframe_pairs(ep, id as u64, &cfg.keyframes)?;
        if d {
            degraded += 1;
        }
        pairs.extend(p);
    }
    if degraded > 0 {
        log::warn!("{degraded} episodes yielded fewer than {} keyframes", cfg.keyframes.count);
    }
    Ok((annotate_pairs(&pairs, cdm, &cfg.annotate, vocab)?, degraded))
}

/// Applies the configured filters to annotated pairs and keeps a
/// class-balanced top `target_count`.
pub fn select_synthetic(
    annotated: &[ScoredTriplet],
    episodes: usize,
    degraded: usize,
    cfg: &PipelineConfig,
) -> (Vec<ScoredTriplet>, PipelineReport) {
    let kept: Vec<ScoredTriplet> = annotated
        .iter()
        .filter(|s| !(cfg.drop_static && s.triplet.source == s.triplet.target))
        .filter(|s| !(cfg.drop_unparseable && s.class == ActionClass::Unparseable))
        .cloned()
        .collect();
    let selected = stratified_top_k(&kept, cfg.target_count);
    let report = PipelineReport::build(episodes, degraded, annotated, kept.len(), &selected);
    (selected, report)
}

/// Full pipeline over `episodes` (in order). Output order is deterministic.
pub fn build_synthetic(
    episodes: &[Episode],
    cdm: &ModelCheckpoint,
    cfg: &PipelineConfig,
    vocab: &Vocab,
) -> Result<(Vec<ScoredTriplet>, PipelineReport)> {
    let (annotated, degraded) = annotate_episodes(episodes, cdm, cfg, vocab)?;
    Ok(select_synthetic(&annotated, episodes.len(), degraded, cfg))
}
