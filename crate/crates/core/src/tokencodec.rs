//! Unified token stream for boards and action text, plus the recognition
//! model that turns feature differences into per-token loss weights.
//!
//! Id layout: five specials, then one image token per cell state, then the
//! closed text vocabulary. The image and text ranges are disjoint so a
//! decoder can be restricted to either one with a simple range mask.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{grammar_words, Board, TrajectoryTriplet, NUM_CELL_STATES};
use crate::seed::content_hash;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const SEP_IMG: u32 = 2;
pub const SEP_TXT: u32 = 3;
pub const EOS: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<sep_img>", "<sep_txt>", "<eos>"];

/// Longest action in the grammar (`add a red square at row 3 column 4`).
/// World-mode prompts pad the action to this many slots so the source and
/// target image spans always sit at the same positions.
pub const ACTION_SLOTS: usize = 9;

/// Default floor for recognition weights.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// `(source, action) -> target`
    World,
    /// `(source, target) -> action`
    Dynamics,
}

impl TaskMode {
    pub fn name(self) -> &'static str {
        match self {
            TaskMode::World => "world",
            TaskMode::Dynamics => "dynamics",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    hash: String,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocab {
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..NUM_CELL_STATES).map(|c| format!("<cell:{c}>")));
        tokens.extend(grammar_words());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn image_range(&self) -> Range<u32> {
        let start = SPECIALS.len() as u32;
        start..start + NUM_CELL_STATES as u32
    }

    pub fn text_range(&self) -> Range<u32> {
        self.image_range().end..self.tokens.len() as u32
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_image(&self, id: u32) -> bool {
        self.image_range().contains(&id)
    }

    pub fn is_text(&self, id: u32) -> bool {
        self.text_range().contains(&id)
    }

    /// Content address: SHA-256 over the newline-joined token strings.
    pub fn hash(&self) -> String {
        content_hash(self.tokens.join("\n").as_bytes())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            tokens: self.tokens.clone(),
            hash: self.hash(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let index = file
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let vocab = Self {
            tokens: file.tokens,
            index,
        };
        if vocab.hash() != file.hash {
            return Err(Error::VocabMismatch(file.hash, vocab.hash()));
        }
        Ok(vocab)
    }

    pub fn encode_board(&self, board: &Board) -> Vec<u32> {
        let base = self.image_range().start;
        board.codes().into_iter().map(|c| base + c as u32).collect()
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| match self.index.get(w) {
                Some(&id) if self.is_text(id) => Ok(id),
                _ => Err(Error::OutOfVocab(w.to_string())),
            })
            .collect()
    }

    /// Joins text ids with spaces, stopping at the first EOS.
    pub fn decode_text(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if !self.is_text(id) {
                return Err(Error::InvalidTokenId(id));
            }
            words.push(self.tokens[id as usize].as_str());
        }
        Ok(words.join(" "))
    }
}

/// Inverse of [`Vocab::encode_board`]; accepts boards with repeated objects.
pub fn decode_board(ids: &[u32], height: usize, width: usize, vocab: &Vocab) -> Result<Board> {
    if ids.len() != height * width {
        return Err(Error::WrongLength {
            expected: height * width,
            got: ids.len(),
        });
    }
    let base = vocab.image_range().start;
    let codes = ids
        .iter()
        .map(|&id| {
            if vocab.is_image(id) {
                Ok((id - base) as u8)
            } else {
                Err(Error::InvalidTokenId(id))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Board::from_codes_lenient(height, width, &codes)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// True on positions whose token is a training target.
    pub completion_mask: Vec<bool>,
    /// Number of leading prompt tokens; the completion is `ids[prompt_len..]`.
    pub prompt_len: usize,
}

impl TokenSequence {
    pub fn new(prompt: Vec<u32>, completion: Vec<u32>) -> Self {
        let prompt_len = prompt.len();
        let mut ids = prompt;
        ids.extend(completion);
        let completion_mask = (0..ids.len()).map(|i| i >= prompt_len).collect();
        Self {
            ids,
            completion_mask,
            prompt_len,
        }
    }

    pub fn prompt_only(prompt: Vec<u32>) -> Self {
        Self::new(prompt, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn prompt(&self) -> &[u32] {
        &self.ids[..self.prompt_len]
    }

    pub fn completion(&self) -> &[u32] {
        &self.ids[self.prompt_len..]
    }

    pub fn completion_len(&self) -> usize {
        self.ids.len() - self.prompt_len
    }

    /// Per-position loss weights: recognition weights over the leading image
    /// tokens of the completion when given, 1 everywhere else in the
    /// completion, 0 on the prompt.
    pub fn loss_weights(&self, weights: Option<&WeightMap>) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = self
            .completion_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        if let Some(map) = weights {
            if map.weights.len() > self.completion_len() {
                return Err(Error::ShapeMismatch(format!(
                    "weight map has {} entries but the completion has {} tokens",
                    map.weights.len(),
                    self.completion_len()
                )));
            }
            for (slot, w) in out[self.prompt_len..].iter_mut().zip(&map.weights) {
                *slot = *w;
            }
        }
        Ok(out)
    }
}

pub fn world_prompt(source: &Board, text: &str, vocab: &Vocab) -> Result<Vec<u32>> {
    let action = vocab.encode_text(text)?;
    if action.len() > ACTION_SLOTS {
        return Err(Error::ShapeMismatch(format!(
            "action has {} words; at most {ACTION_SLOTS} fit",
            action.len()
        )));
    }
    let mut ids = Vec::with_capacity(source.len() * 2 + ACTION_SLOTS + 4);
    ids.push(BOS);
    ids.extend(vocab.encode_board(source));
    ids.push(SEP_TXT);
    ids.extend(&action);
    ids.extend(std::iter::repeat_n(PAD, ACTION_SLOTS - action.len()));
    ids.push(SEP_IMG);
    Ok(ids)
}

pub fn dynamics_prompt(source: &Board, target: &Board, vocab: &Vocab) -> Vec<u32> {
    let mut ids = Vec::with_capacity(source.len() * 2 + 3);
    ids.push(BOS);
    ids.extend(vocab.encode_board(source));
    ids.push(SEP_IMG);
    ids.extend(vocab.encode_board(target));
    ids.push(SEP_TXT);
    ids
}

pub fn encode_triplet(t: &TrajectoryTriplet, mode: TaskMode, vocab: &Vocab) -> Result<TokenSequence> {
    if !t.source.same_dims(&t.target) {
        return Err(Error::DimensionMismatch("source and target boards differ in size".into()));
    }
    Ok(match mode {
        TaskMode::World => {
            let prompt = world_prompt(&t.source, &t.text, vocab)?;
            let mut completion = vocab.encode_board(&t.target);
            completion.push(EOS);
            TokenSequence::new(prompt, completion)
        }
        TaskMode::Dynamics => {
            let prompt = dynamics_prompt(&t.source, &t.target, vocab);
            let mut completion = vocab.encode_text(&t.text)?;
            completion.push(EOS);
            TokenSequence::new(prompt, completion)
        }
    })
}

/// Length of the encoded sequence for the longest action on a board of `cells` cells.
pub fn max_sequence_len(cells: usize) -> usize {
    // world: BOS + cells + SEP + slots + SEP + cells + EOS
    // dynamics: BOS + cells + SEP + cells + SEP + action + EOS
    2 * cells + ACTION_SLOTS + 4
}

/// Per-cell feature vectors; one-hot over the cell states.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub dim: usize,
    pub features: Vec<f64>,
}

impl FeatureGrid {
    pub fn one_hot(board: &Board) -> Self {
        let dim = NUM_CELL_STATES;
        let mut features = vec![0.0; board.len() * dim];
        for (i, code) in board.codes().into_iter().enumerate() {
            features[i * dim + code as usize] = 1.0;
        }
        Self { dim, features }
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cells(&self) -> usize {
        self.features.len() / self.dim
    }
}

/// Loss weights over the image tokens of a target board (mean 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![1.0; height * width],
        }
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    /// Heatmap grid, one CSV row per board row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.weights.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:.6}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// `raw_l = ‖z_s(l) − z_t(l)‖²`, floored by `floor · max(max_l raw_l, 1)` and
/// rescaled to mean 1. Identical boards give uniform weights.
pub fn recognition_weights(source: &Board, target: &Board, floor: f64) -> Result<WeightMap> {
    if !source.same_dims(target) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            source.height(),
            source.width(),
            target.height(),
            target.width()
        )));
    }
    let zs = FeatureGrid::one_hot(source);
    let zt = FeatureGrid::one_hot(target);
    let raw: Vec<f64> = (0..zs.cells())
        .map(|i| zs.cell(i).iter().zip(zt.cell(i)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(WeightMap::uniform(source.height(), source.width()));
    }
    let lift = floor * peak.max(1.0);
    let lifted: Vec<f64> = raw.iter().map(|r| r + lift).collect();
    let mean = lifted.iter().sum::<f64>() / lifted.len() as f64;
    Ok(WeightMap {
        height: source.height(),
        width: source.width(),
        weights: lifted.iter().map(|v| v / mean).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{sample_triplet, WorldConfig};

    #[test]
    fn id_ranges_are_disjoint_and_hash_is_stable() {
        let v = Vocab::standard();
        let (img, txt) = (v.image_range(), v.text_range());
        assert!(img.end <= txt.start);
        assert_eq!(img.len(), 13);
        assert_eq!(v.hash(), Vocab::standard().hash());
        let back = Vocab::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn world_layout() {
        let v = Vocab::standard();
        let t = sample_triplet(3, &WorldConfig::default());
        let seq = encode_triplet(&t, TaskMode::World, &v).unwrap();
        assert_eq!(seq.completion_len(), 65);
        assert_eq!(seq.prompt_len, 1 + 64 + 1 + ACTION_SLOTS + 1);
        assert_eq!(*seq.completion().last().unwrap(), EOS);
        let board = decode_board(&seq.completion()[..64], 8, 8, &v).unwrap();
        assert_eq!(board, t.target);
        for (i, m) in seq.completion_mask.iter().enumerate() {
            assert_eq!(*m, i >= seq.prompt_len);
        }
    }

    #[test]
    fn dynamics_completion_is_text_then_eos() {
        let v = Vocab::standard();
        let t = sample_triplet(4, &WorldConfig::default());
        let seq = encode_triplet(&t, TaskMode::Dynamics, &v).unwrap();
        let (last, body) = seq.completion().split_last().unwrap();
        assert_eq!(*last, EOS);
        assert!(body.iter().all(|&id| v.is_text(id)));
        assert_eq!(v.decode_text(seq.completion()).unwrap(), t.text);
    }

    #[test]
    fn out_of_vocab_text_is_rejected() {
        let v = Vocab::standard();
        let t = sample_triplet(4, &WorldConfig::default()).with_text("jump the red square".into());
        assert!(matches!(
            encode_triplet(&t, TaskMode::Dynamics, &v),
            Err(Error::OutOfVocab(w)) if w == "jump"
        ));
    }

    #[test]
    fn decode_board_errors() {
        let v = Vocab::standard();
        let empty = decode_board(&vec![v.image_range().start; 64], 8, 8, &v).unwrap();
        assert!(empty.is_empty());
        let mut ids = vec![v.image_range().start; 64];
        ids[5] = v.text_range().start;
        assert!(matches!(decode_board(&ids, 8, 8, &v), Err(Error::InvalidTokenId(_))));
        assert!(matches!(decode_board(&ids[..10], 8, 8, &v), Err(Error::WrongLength { .. })));
    }

    #[test]
    fn identical_boards_give_uniform_weights() {
        let b = sample_triplet(1, &WorldConfig::default()).source;
        let w = recognition_weights(&b, &b, DEFAULT_WEIGHT_FLOOR).unwrap();
        assert!(w.weights.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_changed_cell_golden_value() {
        // raw = 2 at the changed cell, floor 0.01·2 = 0.02 everywhere:
        // changed = 2.02·64 / 3.28 = 1616/41, unchanged = 0.02·64 / 3.28 = 16/41
        let a = Board::empty(8, 8);
        let mut codes = a.codes();
        codes[27] = 5;
        let b = Board::from_codes(8, 8, &codes).unwrap();
        let w = recognition_weights(&a, &b, 0.01).unwrap();
        assert!((w.weights[27] - 1616.0 / 41.0).abs() < 1e-9);
        assert!((w.weights[0] - 16.0 / 41.0).abs() < 1e-9);
        assert!((w.mean() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_boards_are_rejected() {
        let r = recognition_weights(&Board::empty(8, 8), &Board::empty(4, 4), 0.01);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn loss_weights_cover_image_tokens_and_leave_eos_at_one() {
        let v = Vocab::standard();
        let t = sample_triplet(9, &WorldConfig::default());
        let seq = encode_triplet(&t, TaskMode::World, &v).unwrap();
        let map = recognition_weights(&t.source, &t.target, 0.01).unwrap();
        let w = seq.loss_weights(Some(&map)).unwrap();
        assert!(w[..seq.prompt_len].iter().all(|&x| x == 0.0));
        assert_eq!(&w[seq.prompt_len..seq.len() - 1], &map.weights[..]);
        assert_eq!(*w.last().unwrap(), 1.0);
        assert_eq!(map.to_csv().lines().count(), 8);
    }
}
