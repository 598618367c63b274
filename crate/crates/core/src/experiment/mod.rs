//! End-to-end runs from one config: each stage reads and writes flat files
//! under a run directory and records content hashes in `manifest.json`.
//!
//! Seeds: every random stream is `derive_seed(master_seed, stage, index)`
//! (SHA-256 of the master seed, the stage name and the index). Supervised
//! triplet `i` uses stage `"train"`, test triplet `i` uses `"test"` and
//! episode `i` uses `"episode"`; model training uses `"train-<role>"` with the
//! role's configured seed as index.

mod config;
mod store;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, ProbeConfig, RoleConfig, WorldRoleConfig, OUT_ENV};
pub use store::{hash_file, read_jsonl, to_jsonl, write_atomic, RunLock, RunManifest, StageRecord};

use crate::error::{Error, Result};
use crate::eval::{evaluate_dynamics_model, evaluate_world_model, verify_csv, EvalConfig, EvalReport};
use crate::gridworld::{rollout_episode, sample_triplet, Episode, TrajectoryTriplet, WorldConfig};
use crate::pipeline::{annotate_episodes, select_synthetic, PipelineReport, ScoredTriplet};
use crate::probes::run_probe;
use crate::seed::derive_seed;
use crate::seqmodel::{train, ModelCheckpoint, TrainConfig};
use crate::tokencodec::{TaskMode, Vocab};

/// Supervised triplets `0..n` of the stream `stage`.
pub fn supervised_set(master: u64, stage: &str, n: usize, world: &WorldConfig) -> Vec<TrajectoryTriplet> {
    (0..n)
        .map(|i| sample_triplet(derive_seed(master, stage, i as u64), world))
        .collect()
}

pub fn rollouts(master: u64, n: usize, length: usize, world: &WorldConfig) -> Result<Vec<Episode>> {
    (0..n)
        .map(|i| rollout_episode(derive_seed(master, "episode", i as u64), length, world))
        .collect()
}

/// `data` with every supervised triplet repeated `repeat` times, then `extra`.
pub fn mix(supervised: &[TrajectoryTriplet], repeat: usize, extra: &[TrajectoryTriplet]) -> Vec<TrajectoryTriplet> {
    let mut out = Vec::with_capacity(supervised.len() * repeat + extra.len());
    for _ in 0..repeat {
        out.extend_from_slice(supervised);
    }
    out.extend_from_slice(extra);
    out
}

/// Which world model a stage refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldModel {
    /// Supervised data only.
    Cft,
    /// Supervised plus synthetic data.
    Cwm,
}

impl WorldModel {
    pub const ALL: [WorldModel; 2] = [WorldModel::Cft, WorldModel::Cwm];

    pub fn name(self) -> &'static str {
        match self {
            WorldModel::Cft => "cft",
            WorldModel::Cwm => "cwm",
        }
    }
}

pub mod paths {
    pub const TRAIN: &str = "data/train.jsonl";
    pub const TEST: &str = "data/test.jsonl";
    pub const EPISODES: &str = "data/episodes.jsonl";
    pub const CDM: &str = "models/cdm.ckpt";
    pub const ANNOTATED: &str = "synthetic/annotated.jsonl";
    pub const ANNOTATE_META: &str = "synthetic/annotate.json";
    pub const SELECTED: &str = "synthetic/selected.jsonl";
    pub const CLASSES: &str = "synthetic/classes.csv";
    pub const PIPELINE_REPORT: &str = "synthetic/report.json";
    pub const EVAL_JSON: &str = "eval/report.json";

    pub fn model(name: &str) -> String {
        format!("models/{name}.ckpt")
    }

    pub fn loss_curve(name: &str) -> String {
        format!("models/{name}_loss.csv")
    }

    pub fn verify_records(name: &str) -> String {
        format!("verify/{name}.jsonl")
    }
}

type Outputs = Vec<(String, Vec<u8>)>;

#[derive(Serialize, Deserialize)]
struct AnnotateMeta {
    episodes: usize,
    degraded: usize,
}

/// A run directory plus the config that produces it.
pub struct Experiment {
    cfg: ExperimentConfig,
    dir: PathBuf,
    vocab: Vocab,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.resolved_out_dir();
        Ok(Self {
            cfg,
            dir,
            vocab: Vocab::standard(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        RunManifest::load_or_new(&self.dir)
    }

    fn seed(&self, stage: &str, index: u64) -> u64 {
        derive_seed(self.cfg.master_seed, stage, index)
    }

    /// Runs `body` under the directory lock after checking that every input
    /// exists and still has the hash recorded when it was produced; writes
    /// its outputs atomically and records the stage in the manifest.
    fn stage(&self, name: &str, inputs: &[String], body: impl FnOnce() -> Result<Outputs>) -> Result<StageRecord> {
        let _lock = RunLock::acquire(&self.dir)?;
        let mut manifest = RunManifest::load_or_new(&self.dir)?;
        let mut record = StageRecord::default();
        for rel in inputs {
            let path = self.path(rel);
            if !path.exists() {
                return Err(Error::MissingDependency(format!("{rel} (needed by {name})")));
            }
            let found = hash_file(&path)?;
            if let Some(expected) = manifest.recorded_output(rel) {
                if expected != found {
                    return Err(Error::HashMismatch {
                        path,
                        expected: expected.to_string(),
                        found,
                    });
                }
            }
            record.inputs.insert(rel.clone(), found);
        }
        let start = Instant::now();
        log::info!("stage {name}: running");
        let outputs = body()?;
        for (rel, bytes) in outputs {
            write_atomic(&self.path(&rel), &bytes)?;
            record.outputs.insert(rel, crate::seed::content_hash(&bytes));
        }
        record.seconds = start.elapsed().as_secs_f64();
        log::info!("stage {name}: done in {:.1}s", record.seconds);
        manifest.config_hash = self.cfg.hash()?;
        manifest.code_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.stages.insert(name.to_string(), record.clone());
        manifest.save(&self.dir)?;
        Ok(record)
    }

    fn load_model(&self, rel: &str) -> Result<ModelCheckpoint> {
        ModelCheckpoint::load_for(&self.path(rel), &self.vocab)
    }

    fn train_role(&self, role: &str, data: &[TrajectoryTriplet], task: TaskMode, rc: &RoleConfig) -> Result<Outputs> {
        let tc = TrainConfig {
            seed: self.seed(&format!("train-{role}"), rc.train.seed),
            ..rc.train.clone()
        };
        let ck = train(data, task, &rc.model, &tc, &self.vocab)?;
        Ok(vec![
            (paths::model(role), ck.to_bytes()?),
            (paths::loss_curve(role), ck.manifest().loss_curve_csv().into_bytes()),
        ])
    }

    /// Supervised training and test triplets.
    pub fn gen_data(&self) -> Result<StageRecord> {
        self.stage("gen-data", &[], || {
            let c = &self.cfg;
            let train = supervised_set(c.master_seed, "train", c.data.supervised, &c.world);
            let test = supervised_set(c.master_seed, "test", c.data.test, &c.world);
            Ok(vec![
                (paths::TRAIN.into(), to_jsonl(&train)?),
                (paths::TEST.into(), to_jsonl(&test)?),
            ])
        })
    }

    /// Unlabelled episodes for the synthetic pipeline.
    pub fn rollout(&self) -> Result<StageRecord> {
        self.stage("rollout", &[paths::TRAIN.into()], || {
            let c = &self.cfg;
            let eps = rollouts(c.master_seed, c.data.episodes, c.data.episode_length, &c.world)?;
            Ok(vec![(paths::EPISODES.into(), to_jsonl(&eps)?)])
        })
    }

    pub fn train_dm(&self) -> Result<StageRecord> {
        self.stage("train-dm", &[paths::TRAIN.into()], || {
            let data: Vec<TrajectoryTriplet> = read_jsonl(&self.path(paths::TRAIN))?;
            self.train_role("cdm", &data, TaskMode::Dynamics, &self.cfg.cdm)
        })
    }

    /// Probes a trained model (`"cdm"`, `"cft"` or `"cwm"`) on the first
    /// `probe.count` test triplets.
    pub fn probe(&self, model: &str) -> Result<StageRecord> {
        let rel = paths::model(model);
        self.stage(&format!("probe-{model}"), &[rel.clone(), paths::TEST.into()], || {
            let ck = self.load_model(&rel)?;
            let test: Vec<TrajectoryTriplet> = read_jsonl(&self.path(paths::TEST))?;
            let subset = &test[..self.cfg.probe.count.min(test.len())];
            let report = run_probe(&ck, subset, ck.task(), &self.cfg.probe.kinds, self.seed("probe", 0), &self.vocab)?;
            Ok(vec![
                (format!("probes/{model}.csv"), report.to_csv()?.into_bytes()),
                (format!("probes/{model}_summary.json"), report.summary_json()?.into_bytes()),
            ])
        })
    }

    /// Captions keyframe pairs of every episode with the dynamics model.
    pub fn annotate(&self) -> Result<StageRecord> {
        self.stage("annotate", &[paths::CDM.into(), paths::EPISODES.into()], || {
            let cdm = self.load_model(paths::CDM)?;
            let episodes: Vec<Episode> = read_jsonl(&self.path(paths::EPISODES))?;
            let mut p = self.cfg.pipeline.clone();
            p.annotate.seed = self.seed("annotate", p.annotate.seed);
            let (scored, degraded) = annotate_episodes(&episodes, &cdm, &p, &self.vocab)?;
            let meta = AnnotateMeta {
                episodes: episodes.len(),
                degraded,
            };
            Ok(vec![
                (paths::ANNOTATED.into(), to_jsonl(&scored)?),
                (paths::ANNOTATE_META.into(), serde_json::to_vec_pretty(&meta)?),
            ])
        })
    }

    /// Filters and class-balances the annotated pairs.
    pub fn sample_stratified(&self) -> Result<StageRecord> {
        self.stage("sample-stratified", &[paths::ANNOTATED.into(), paths::ANNOTATE_META.into()], || {
            let annotated: Vec<ScoredTriplet> = read_jsonl(&self.path(paths::ANNOTATED))?;
            let meta: AnnotateMeta = serde_json::from_slice(&std::fs::read(self.path(paths::ANNOTATE_META))?)?;
            let (selected, report) = select_synthetic(&annotated, meta.episodes, meta.degraded, &self.cfg.pipeline);
            let triplets: Vec<TrajectoryTriplet> = selected.into_iter().map(|s| s.triplet).collect();
            Ok(vec![
                (paths::SELECTED.into(), to_jsonl(&triplets)?),
                (paths::CLASSES.into(), report.class_csv()?.into_bytes()),
                (paths::PIPELINE_REPORT.into(), serde_json::to_vec_pretty(&report)?),
            ])
        })
    }

    pub fn train_wm(&self, which: WorldModel) -> Result<StageRecord> {
        let mut inputs = vec![paths::TRAIN.to_string()];
        if which == WorldModel::Cwm {
            inputs.push(paths::SELECTED.into());
        }
        self.stage(&format!("train-wm-{}", which.name()), &inputs, || {
            let all: Vec<TrajectoryTriplet> = read_jsonl(&self.path(paths::TRAIN))?;
            let sup = &all[..self.cfg.world_supervised().min(all.len())];
            let (rc, extra) = match which {
                WorldModel::Cft => (&self.cfg.cft, Vec::new()),
                WorldModel::Cwm => (&self.cfg.cwm, read_jsonl(&self.path(paths::SELECTED))?),
            };
            let data = mix(sup, rc.supervised_repeat, &extra);
            self.train_role(which.name(), &data, TaskMode::World, &rc.role())
        })
    }

    fn eval_config(&self) -> EvalConfig {
        let mut e = self.cfg.eval.clone();
        e.verify.seed = self.seed("eval", e.verify.seed);
        e
    }

    /// Samples candidates from each world model and scores them with the
    /// dynamics model on the test set.
    pub fn verify(&self) -> Result<StageRecord> {
        let mut inputs = vec![paths::CDM.to_string(), paths::TEST.into()];
        inputs.extend(WorldModel::ALL.iter().map(|w| paths::model(w.name())));
        self.stage("verify", &inputs, || {
            let cdm = self.load_model(paths::CDM)?;
            let test: Vec<TrajectoryTriplet> = read_jsonl(&self.path(paths::TEST))?;
            let ecfg = self.eval_config();
            let mut out = Vec::new();
            for w in WorldModel::ALL {
                let wm = self.load_model(&paths::model(w.name()))?;
                let records = evaluate_world_model(w.name(), &wm, &test, Some(&cdm), &ecfg, &self.vocab)?;
                out.push((format!("verify/{}.csv", w.name()), verify_csv(&records, &ecfg.sweep)?.into_bytes()));
                out.push((paths::verify_records(w.name()), to_jsonl(&records)?));
            }
            Ok(out)
        })
    }

    /// Aggregates verification records, adds the Copy row and scores the
    /// dynamics model's action predictions.
    pub fn eval(&self) -> Result<StageRecord> {
        let mut inputs = vec![paths::CDM.to_string(), paths::TEST.into()];
        inputs.extend(WorldModel::ALL.iter().map(|w| paths::verify_records(w.name())));
        self.stage("eval", &inputs, || {
            let cdm = self.load_model(paths::CDM)?;
            let test: Vec<TrajectoryTriplet> = read_jsonl(&self.path(paths::TEST))?;
            let ecfg = self.eval_config();
            let per_model = WorldModel::ALL
                .iter()
                .map(|w| Ok((w.name().to_string(), read_jsonl(&self.path(&paths::verify_records(w.name())))?)))
                .collect::<Result<Vec<_>>>()?;
            let actions = vec![evaluate_dynamics_model("cdm", &cdm, &test, &ecfg, &self.vocab)?];
            let report = EvalReport::assemble(&test, per_model, actions, &ecfg.sweep)?;
            Ok(vec![
                ("eval/report.csv".into(), report.to_csv()?.into_bytes()),
                ("eval/actions.csv".into(), report.actions_csv()?.into_bytes()),
                ("eval/table.txt".into(), report.render_table().into_bytes()),
                ("eval/instances.jsonl".into(), report.to_jsonl()?.into_bytes()),
                (paths::EVAL_JSON.into(), serde_json::to_vec(&report)?),
            ])
        })
    }

    /// Final tables: model comparison, verification curves, probe and
    /// pipeline summaries.
    pub fn report(&self) -> Result<StageRecord> {
        let mut inputs = vec![paths::EVAL_JSON.to_string(), paths::PIPELINE_REPORT.into()];
        let probes: Vec<String> = ["cdm", "cft", "cwm"]
            .iter()
            .map(|m| format!("probes/{m}_summary.json"))
            .filter(|p| self.path(p).exists())
            .collect();
        inputs.extend(probes.iter().cloned());
        self.stage("report", &inputs, || {
            let report: EvalReport = serde_json::from_slice(&std::fs::read(self.path(paths::EVAL_JSON))?)?;
            let pipeline: PipelineReport = serde_json::from_slice(&std::fs::read(self.path(paths::PIPELINE_REPORT))?)?;
            let mut curve = String::from("model,n,verified,oracle\n");
            for m in report.models.iter().filter(|m| m.name != crate::eval::COPY_ROW) {
                for p in &m.sweep {
                    let v = p.verified.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(curve, "{},{},{v},{}", m.name, p.n, p.oracle);
                }
            }
            let mut summary = String::new();
            let _ = writeln!(summary, "# Run summary\n\nmaster seed {}\n", self.cfg.master_seed);
            let _ = writeln!(summary, "## World models\n\n```\n{}```\n", report.render_table());
            let _ = writeln!(
                summary,
                "## Synthetic data\n\n{} episodes, {} keyframe pairs, {} after filters, {} selected\n",
                pipeline.episodes, pipeline.pairs, pipeline.after_filters, pipeline.selected
            );
            for p in &probes {
                let text = std::fs::read_to_string(self.path(p))?;
                let _ = writeln!(summary, "## Probe {p}\n\n```json\n{text}\n```\n");
            }
            Ok(vec![
                ("report/table.txt".into(), report.render_table().into_bytes()),
                ("report/verification.csv".into(), curve.into_bytes()),
                ("report/summary.md".into(), summary.into_bytes()),
            ])
        })
    }

    /// Every stage in dependency order.
    pub fn run_all(&self) -> Result<BTreeMap<String, StageRecord>> {
        let mut out = BTreeMap::new();
        out.insert("gen-data".into(), self.gen_data()?);
        out.insert("rollout".into(), self.rollout()?);
        out.insert("train-dm".into(), self.train_dm()?);
        out.insert("probe-cdm".into(), self.probe("cdm")?);
        out.insert("annotate".into(), self.annotate()?);
        out.insert("sample-stratified".into(), self.sample_stratified()?);
        out.insert("train-wm-cft".into(), self.train_wm(WorldModel::Cft)?);
        out.insert("train-wm-cwm".into(), self.train_wm(WorldModel::Cwm)?);
        out.insert("verify".into(), self.verify()?);
        out.insert("eval".into(), self.eval()?);
        out.insert("report".into(), self.report()?);
        Ok(out)
    }
}
