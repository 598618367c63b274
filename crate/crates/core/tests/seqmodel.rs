use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;
use wmlab::gridworld::{sample_triplet, TrajectoryTriplet, WorldConfig};
use wmlab::seed::rng_from_seed;
use wmlab::seqmodel::{
    train, AllowedRange, Length, LossMode, ModelCheckpoint, ModelConfig, Precision, SampleConfig, TrainConfig,
    Transformer,
};
use wmlab::tokencodec::{encode_triplet, recognition_weights, world_prompt, TaskMode, TokenSequence, Vocab, EOS};
use wmlab::Error;

fn small_world() -> WorldConfig {
    WorldConfig {
        height: 3,
        width: 3,
        min_objects: 1,
        max_objects: 3,
        ..WorldConfig::default()
    }
}

fn triplets(n: usize, base: u64) -> Vec<TrajectoryTriplet> {
    let cfg = small_world();
    (0..n).map(|i| sample_triplet(base + i as u64, &cfg)).collect()
}

fn tiny_model(precision: Precision) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        context_length: 40,
        precision,
        init_std: 0.3,
        ..ModelConfig::default()
    }
}

fn weighted_batch(data: &[TrajectoryTriplet], vocab: &Vocab) -> (Vec<TokenSequence>, Vec<Vec<f64>>) {
    let mut seqs = Vec::new();
    let mut ws = Vec::new();
    for t in data {
        let seq = encode_triplet(t, TaskMode::World, vocab).unwrap();
        let map = recognition_weights(&t.source, &t.target, 0.01).unwrap();
        ws.push(seq.loss_weights(Some(&map)).unwrap());
        seqs.push(seq);
    }
    (seqs, ws)
}

/// Layer type of a parameter, e.g. `h1.attn.w_qkv` -> `attn.w_qkv`.
fn layer_type(name: &str) -> String {
    match name.split_once('.') {
        Some((head, rest)) if head.starts_with('h') && head[1..].parse::<usize>().is_ok() => rest.to_string(),
        _ => name.to_string(),
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over `per_type` random coordinates of every layer type.
fn max_grad_error(cfg: &ModelConfig, seed: u64, per_type: usize) -> (f64, BTreeMap<String, f64>) {
    let vocab = Vocab::standard();
    let data = triplets(3, seed);
    let (seqs, ws) = weighted_batch(&data, &vocab);
    let mut model = Transformer::<f64>::init(cfg, seed).unwrap();
    let (_, grad) = model.loss_and_grad(&seqs, &ws).unwrap();

    let used_positions = seqs.iter().map(|s| s.len()).max().unwrap();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for e in &model.layout().entries {
        let coords = groups.entry(layer_type(&e.name)).or_default();
        if e.name == "pos_emb" {
            coords.extend(e.offset..e.offset + used_positions * cfg.d_model);
        } else {
            coords.extend(e.range());
        }
    }

    let h = 1e-5;
    let mut rng = rng_from_seed(seed ^ 0x9e37);
    let mut worst = BTreeMap::new();
    for (name, coords) in &groups {
        let mut w: f64 = 0.0;
        for _ in 0..per_type {
            let i = coords[rng.random_range(0..coords.len())];
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = model.loss(&seqs, &ws).unwrap();
            model.params_mut()[i] = orig - h;
            let down = model.loss(&seqs, &ws).unwrap();
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            // The absolute floor keeps exactly-zero gradients (the key bias
            // under softmax shift invariance) from comparing round-off to round-off.
            let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-6);
            w = w.max(rel);
        }
        worst.insert(name.clone(), w);
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    (max, worst)
}

#[test]
fn gradients_match_finite_differences_for_every_layer_type() {
    let (max, per_type) = max_grad_error(&tiny_model(Precision::High), 11, 20);
    assert_eq!(per_type.len(), 18, "{per_type:?}");
    assert!(max < 1e-4, "worst relative error {max:e}: {per_type:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn gradients_match_on_random_configs(
        heads in 1usize..=3,
        head_dim in 2usize..=4,
        layers in 1usize..=2,
        ff in 1usize..=3,
        seed in 0u64..1000,
    ) {
        let cfg = ModelConfig {
            d_model: heads * head_dim,
            n_heads: heads,
            n_layers: layers,
            ff_multiplier: ff,
            ..tiny_model(Precision::High)
        };
        let (max, per_type) = max_grad_error(&cfg, seed, 5);
        prop_assert!(max < 1e-4, "worst relative error {:e}: {:?}", max, per_type);
    }
}

#[test]
fn all_ones_weights_reproduce_the_standard_loss_exactly() {
    let vocab = Vocab::standard();
    let model = Transformer::<f32>::init(&tiny_model(Precision::Standard), 5).unwrap();
    for b in 0..10 {
        let data = triplets(4, 100 * b);
        let seqs: Vec<TokenSequence> = data
            .iter()
            .map(|t| encode_triplet(t, TaskMode::World, &vocab).unwrap())
            .collect();
        let standard: Vec<Vec<f64>> = seqs.iter().map(|s| s.loss_weights(None).unwrap()).collect();
        let ones: Vec<Vec<f64>> = data
            .iter()
            .zip(&seqs)
            .map(|(t, s)| {
                let mut map = recognition_weights(&t.source, &t.target, 0.01).unwrap();
                map.weights.iter_mut().for_each(|w| *w = 1.0);
                s.loss_weights(Some(&map)).unwrap()
            })
            .collect();
        let (la, ga) = model.loss_and_grad(&seqs, &standard).unwrap();
        let (lb, gb) = model.loss_and_grad(&seqs, &ones).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert!(ga.iter().zip(&gb).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn near_zero_init_gives_log_vocab_loss() {
    let vocab = Vocab::standard();
    let cfg = ModelConfig {
        init_std: 1e-5,
        ..tiny_model(Precision::Standard)
    };
    let model = Transformer::<f32>::init(&cfg, 1).unwrap();
    let data = triplets(5, 7);
    let seqs: Vec<TokenSequence> = data
        .iter()
        .map(|t| encode_triplet(t, TaskMode::World, &vocab).unwrap())
        .collect();
    let ws: Vec<Vec<f64>> = seqs.iter().map(|s| s.loss_weights(None).unwrap()).collect();
    let loss = model.loss(&seqs, &ws).unwrap();
    assert!((loss - (vocab.len() as f64).ln()).abs() < 1e-3, "{loss}");
}

#[test]
fn next_token_distributions_are_normalised() {
    let vocab = Vocab::standard();
    let model = Transformer::<f32>::init(&tiny_model(Precision::Standard), 2).unwrap();
    let seq = encode_triplet(&triplets(1, 3)[0], TaskMode::World, &vocab).unwrap();
    for row in model.next_token_distributions(&seq.ids).unwrap() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn incremental_decoding_matches_the_full_forward_pass() {
    let vocab = Vocab::standard();
    let model = Transformer::<f64>::init(&tiny_model(Precision::High), 4).unwrap();
    let seq = encode_triplet(&triplets(1, 9)[0], TaskMode::Dynamics, &vocab).unwrap();
    let full = model.next_token_distributions(&seq.ids).unwrap();
    let mut state = model.start_decode();
    for (i, &id) in seq.ids.iter().enumerate() {
        model.decode_step(&mut state, id).unwrap();
        let mut logits = state.logits().to_vec();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logits.iter_mut().for_each(|l| *l = (*l - max).exp());
        let z: f64 = logits.iter().sum();
        for (p, q) in logits.iter().zip(&full[i]) {
            assert!((p / z - q).abs() < 1e-12);
        }
    }
}

#[test]
fn overlong_sequences_are_rejected() {
    let vocab = Vocab::standard();
    let cfg = ModelConfig {
        context_length: 10,
        ..tiny_model(Precision::Standard)
    };
    let model = Transformer::<f32>::init(&cfg, 0).unwrap();
    let seq = encode_triplet(&triplets(1, 0)[0], TaskMode::World, &vocab).unwrap();
    let w = seq.loss_weights(None).unwrap();
    assert!(matches!(model.loss_and_grad(&[seq], &[w]), Err(Error::ShapeMismatch(_))));
}

fn quick_train(data: &[TrajectoryTriplet], task: TaskMode, epochs: usize, seed: u64) -> ModelCheckpoint {
    let model = ModelConfig {
        d_model: 32,
        context_length: 40,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        warmup_steps: 1,
        batch_size: 10,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    train(data, task, &model, &cfg, &Vocab::standard()).unwrap()
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = triplets(20, 40);
    let a = quick_train(&data, TaskMode::World, 3, 8);
    let b = quick_train(&data, TaskMode::World, 3, 8);
    let c = quick_train(&data, TaskMode::World, 3, 9);
    assert_eq!(a.params_f64(), b.params_f64());
    assert_ne!(a.params_f64(), c.params_f64());
    assert_eq!(a.manifest().loss_curve.len(), 3);
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
}

#[test]
fn small_dataset_is_memorised() {
    let data = triplets(10, 500);
    let ck = quick_train(&data, TaskMode::World, 400, 1);
    let last = *ck.manifest().loss_curve.last().unwrap();
    assert!(last < 0.01, "final loss {last}");
}

#[test]
fn score_is_additive_and_pure() {
    let vocab = Vocab::standard();
    let data = triplets(10, 60);
    let ck = quick_train(&data, TaskMode::Dynamics, 2, 0);
    let seq = encode_triplet(&data[0], TaskMode::Dynamics, &vocab).unwrap();
    let (total, per) = ck.score(&seq).unwrap();
    assert_eq!(per.len(), seq.completion_len());
    assert!((total - per.iter().sum::<f64>()).abs() < 1e-12);
    assert_eq!(ck.score(&seq).unwrap(), (total, per));
}

#[test]
fn checkpoint_round_trips_through_bytes_and_disk() {
    let data = triplets(10, 70);
    let ck = quick_train(&data, TaskMode::World, 2, 3);
    let bytes = ck.to_bytes().unwrap();
    let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.params_f64(), ck.params_f64());
    assert_eq!(back.manifest(), ck.manifest());
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = ModelCheckpoint::load_for(&path, &Vocab::standard()).unwrap();
    assert_eq!(loaded.content_hash().unwrap(), ck.content_hash().unwrap());

    assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(matches!(
        ModelCheckpoint::load(&dir.path().join("missing")),
        Err(Error::MissingDependency(_))
    ));
}

#[test]
fn warmup_must_be_shorter_than_training() {
    let data = triplets(10, 0);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 10,
        ..TrainConfig::default()
    };
    let err = train(&data, TaskMode::World, &ModelConfig::default(), &cfg, &Vocab::standard()).unwrap_err();
    assert!(matches!(err, Error::ConfigInvalid(_)));
}

#[test]
fn recognition_weighting_is_world_only() {
    let data = triplets(10, 0);
    let cfg = TrainConfig {
        warmup_steps: 1,
        loss_mode: LossMode::RecognitionWeighted,
        ..TrainConfig::default()
    };
    let err = train(&data, TaskMode::Dynamics, &ModelConfig::default(), &cfg, &Vocab::standard()).unwrap_err();
    assert!(matches!(err, Error::ConfigInvalid(_)));
}

#[test]
fn divergence_is_reported_as_non_finite_loss() {
    let data = triplets(10, 0);
    let cfg = TrainConfig {
        learning_rate: 1e38,
        warmup_steps: 1,
        batch_size: 5,
        epochs: 5,
        ..TrainConfig::default()
    };
    let err = train(&data, TaskMode::World, &ModelConfig::default(), &cfg, &Vocab::standard()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err:?}");
}

fn sampling_fixture() -> (ModelCheckpoint, Vec<u32>) {
    let data = triplets(10, 80);
    let ck = quick_train(&data, TaskMode::World, 2, 4);
    let vocab = Vocab::standard();
    let prompt = world_prompt(&data[0].source, &data[0].text, &vocab).unwrap();
    (ck, prompt)
}

#[test]
fn greedy_sampling_returns_identical_candidates() {
    let (ck, prompt) = sampling_fixture();
    let vocab = Vocab::standard();
    let cfg = SampleConfig {
        temperature: 1.0,
        top_k: 1,
    };
    let out = ck
        .sample(&prompt, 4, &cfg, AllowedRange::Image, Length::Fixed(9), &vocab, 0)
        .unwrap();
    assert!(out.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn masked_sampling_respects_range_and_length() {
    let (ck, prompt) = sampling_fixture();
    let vocab = Vocab::standard();
    let cfg = SampleConfig::default();
    let images = ck
        .sample(&prompt, 6, &cfg, AllowedRange::Image, Length::Fixed(9), &vocab, 1)
        .unwrap();
    for c in &images {
        assert_eq!(c.len(), 10);
        assert_eq!(*c.last().unwrap(), EOS);
        assert!(c[..9].iter().all(|&id| vocab.is_image(id)));
    }
    let texts = ck
        .sample(&prompt, 6, &cfg, AllowedRange::Text, Length::UntilEos { max: 12 }, &vocab, 1)
        .unwrap();
    for c in &texts {
        assert_eq!(*c.last().unwrap(), EOS);
        assert!(c.len() <= 13);
        assert!(c[..c.len() - 1].iter().all(|&id| vocab.is_text(id)));
    }
}

#[test]
fn sampling_is_deterministic_and_prefix_stable() {
    let (ck, prompt) = sampling_fixture();
    let vocab = Vocab::standard();
    let cfg = SampleConfig::default();
    let run = |n| {
        ck.sample(&prompt, n, &cfg, AllowedRange::Image, Length::Fixed(9), &vocab, 42)
            .unwrap()
    };
    let four = run(4);
    assert_eq!(four, run(4));
    assert_eq!(run(8)[..4], four[..]);
}

#[test]
fn sampled_frequencies_follow_the_model_softmax() {
    let vocab = Vocab::standard();
    let cfg = ModelConfig {
        init_std: 0.5,
        ..tiny_model(Precision::Standard)
    };
    let manifest_source = quick_train(&triplets(10, 0), TaskMode::World, 2, 0);
    let model = Transformer::<f32>::init(&cfg, 12).unwrap();
    let ck = ModelCheckpoint::from_transformer(&model, &vocab, manifest_source.manifest().clone()).unwrap();
    let t = &triplets(1, 90)[0];
    let prompt = world_prompt(&t.source, &t.text, &vocab).unwrap();

    let dist = ck.next_token_distributions(&prompt).unwrap();
    let last = dist.last().unwrap();
    let image: Vec<u32> = vocab.image_range().collect();
    let z: f64 = image.iter().map(|&i| last[i as usize]).sum();

    let n = 10_000;
    let sc = SampleConfig {
        temperature: 1.0,
        top_k: vocab.len(),
    };
    let draws = ck
        .sample(&prompt, n, &sc, AllowedRange::Image, Length::Fixed(1), &vocab, 5)
        .unwrap();
    let mut counts = vec![0usize; vocab.len()];
    for d in &draws {
        counts[d[0] as usize] += 1;
    }
    let chi2: f64 = image
        .iter()
        .map(|&i| {
            let expected = n as f64 * last[i as usize] / z;
            (counts[i as usize] as f64 - expected).powi(2) / expected
        })
        .sum();
    // 12 degrees of freedom, 0.1% critical value
    assert!(chi2 < 32.91, "chi-square {chi2}");
}
