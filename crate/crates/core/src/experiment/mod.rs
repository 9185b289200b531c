//! Benchmark orchestration and run records.

pub mod cli;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{Corpus, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::metrics::classification_error;
use crate::model::{train, LabeledSample, Method, MlpParams, TrainConfig, DEFAULT_HIDDEN};
use crate::neighbor_search::SearchParams;
use crate::perturbation::{viser_augment, PerturbationConfig};
use crate::rng::{stream_rng, streams};
use crate::synthetic::{generate, SyntheticDataset, SyntheticSpec};

pub const ARTIFACT_VERSION: &str = concat!("viser ", env!("CARGO_PKG_VERSION"));
pub const THREADS_ENV: &str = "VISER_THREADS";

/// Everything needed to reproduce a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub seed_start: u64,
    pub seed_count: u64,
    pub synthetic: SyntheticSpec,
    pub hidden: usize,
    pub train: TrainConfig,
    /// Fine-tuning schedule on the augmented set.
    pub viser_finetune: TrainConfig,
    /// Start fine-tuning from the shared initialization instead of the
    /// pretrained weights.
    pub viser_restart: bool,
    pub perturbation: PerturbationConfig,
    pub search: SearchParams,
    pub take: usize,
}

/// Learning rate of the benchmark schedule. At 0.01 the five-method
/// comparison is dominated by underfitting within 5000 steps.
pub const BENCHMARK_LEARNING_RATE: f64 = 0.03;

pub fn benchmark_schedule() -> TrainConfig {
    TrainConfig {
        learning_rate: BENCHMARK_LEARNING_RATE,
        ..TrainConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seed_start: 0,
            seed_count: 50,
            synthetic: SyntheticSpec::default(),
            hidden: DEFAULT_HIDDEN,
            train: benchmark_schedule(),
            viser_finetune: benchmark_schedule(),
            viser_restart: false,
            perturbation: PerturbationConfig::default(),
            search: SearchParams::default(),
            take: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.seed_start..self.seed_start + self.seed_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seed_count == 0 {
            return Err(Error::InvalidParams("need at least one method and one seed".into()));
        }
        if self.take == 0 || self.hidden == 0 {
            return Err(Error::InvalidParams("take and hidden must be positive".into()));
        }
        self.synthetic.validate()?;
        self.train.validate()?;
        self.viser_finetune.validate()?;
        self.perturbation.validate()?;
        self.search.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test error in percent.
    pub errors: BTreeMap<Method, f64>,
    /// Fraction of regularizer samples whose transferred label equals their
    /// generating class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viser_label_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viser_regularizers: Option<usize>,
    /// Samples dropped from the search because their penultimate
    /// activations were all zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viser_unembeddable: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator; 0 for one seed).
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub artifact_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: BTreeMap<Method, Aggregate>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    /// Recomputes the aggregates from the per-seed entries.
    pub fn recompute_aggregate(&self) -> BTreeMap<Method, Aggregate> {
        aggregate(&self.per_seed)
    }

    /// JSON without the wall-clock field, for reproducibility comparisons.
    pub fn reproducible_json(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        serde_json::to_string_pretty(&r).expect("record serializes")
    }
}

pub fn aggregate(per_seed: &[SeedResult]) -> BTreeMap<Method, Aggregate> {
    let mut by_method: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for s in per_seed {
        for (&m, &e) in &s.errors {
            by_method.entry(m).or_default().push(e);
        }
    }
    by_method
        .into_iter()
        .map(|(m, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (m, Aggregate { mean, std, runs: n })
        })
        .collect()
}

/// Test error (%) of a model on a dataset's test split.
pub fn test_error(params: &MlpParams<f64>, ds: &SyntheticDataset) -> Result<f64> {
    let mut probs = Vec::with_capacity(ds.test.len());
    for s in &ds.test {
        probs.push(params.predict(&s.ambient)?[0]);
    }
    let truth: Vec<bool> = ds.test.iter().map(|s| s.class == 1).collect();
    classification_error(&probs, &truth)
}

/// Shared initialization of every method for one seed.
pub fn initial_params(ds: &SyntheticDataset, hidden: usize, seed: u64) -> MlpParams<f64> {
    MlpParams::glorot(ds.spec.ambient_dim, hidden, 1, &mut stream_rng(seed, streams::INIT))
}

/// Embeds samples with the pretrained network, skipping samples whose
/// penultimate layer is entirely inactive. Ids are sample positions.
pub fn embed_corpus(params: &MlpParams<f64>, inputs: &[Vec<f64>]) -> Result<(Corpus<f64>, usize)> {
    let mut records = Vec::with_capacity(inputs.len());
    let mut skipped = 0;
    for (i, x) in inputs.iter().enumerate() {
        match params.penultimate(x) {
            Ok(v) => records.push(EmbeddingRecord::new(i as u64, v.into_vec())?),
            Err(Error::ZeroVector) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((Corpus::new(records)?, skipped))
}

/// Outcome of the neighbor-augmentation stage for one seed.
pub struct ViserStage {
    pub params: MlpParams<f64>,
    pub label_agreement: f64,
    pub regularizers: usize,
    pub unembeddable: usize,
}

/// Embeds train and unlabeled samples with `pretrained`, augments the train
/// set with retrieved neighbors, and fine-tunes.
pub fn run_viser(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    init: &MlpParams<f64>,
    pretrained: &MlpParams<f64>,
    seed: u64,
) -> Result<ViserStage> {
    let labeled: Vec<LabeledSample<f64>> = ds.train_samples();
    let train_inputs: Vec<Vec<f64>> = labeled.iter().map(|s| s.x.clone()).collect();
    let unlabeled = ds.unlabeled_inputs::<f64>();
    let (labeled_emb, skip_a) = embed_corpus(pretrained, &train_inputs)?;
    let (unlabeled_emb, skip_u) = embed_corpus(pretrained, &unlabeled)?;
    let aug = viser_augment(&labeled, &labeled_emb, &unlabeled, &unlabeled_emb, &cfg.search, cfg.take)?;
    let agree = aug
        .regularizers
        .iter()
        .filter(|r| r.labels.get(0) == (ds.unlabeled[r.features_source_id as usize].class == 1))
        .count();
    let start = if cfg.viser_restart { init } else { pretrained };
    let tc = TrainConfig {
        seed,
        ..cfg.viser_finetune.clone()
    };
    let out = train(start, &aug.samples, &tc, Method::Viser, &cfg.perturbation)?;
    Ok(ViserStage {
        params: out.params,
        label_agreement: if aug.regularizers.is_empty() {
            0.0
        } else {
            agree as f64 / aug.regularizers.len() as f64
        },
        regularizers: aug.regularizers.len(),
        unembeddable: skip_a + skip_u,
    })
}

/// Trains and evaluates every configured method on one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let ds = generate(&SyntheticSpec {
        seed,
        ..cfg.synthetic.clone()
    })?;
    let init = initial_params(&ds, cfg.hidden, seed);
    let data = ds.train_samples::<f64>();
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let wrap = |m: Method| {
        move |e: Error| Error::Benchmark {
            seed,
            method: m.name().into(),
            source: Box::new(e),
        }
    };

    let mut result = SeedResult {
        seed,
        errors: BTreeMap::new(),
        viser_label_agreement: None,
        viser_regularizers: None,
        viser_unembeddable: None,
    };
    let mut pretrained: Option<MlpParams<f64>> = None;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    for &m in &methods {
        let params = if m == Method::Viser {
            let base = match pretrained.take() {
                Some(p) => p,
                None => train(&init, &data, &tc, Method::CrossEntropy, &cfg.perturbation)
                    .map_err(wrap(Method::CrossEntropy))?
                    .params,
            };
            let stage = run_viser(cfg, &ds, &init, &base, seed).map_err(wrap(m))?;
            result.viser_label_agreement = Some(stage.label_agreement);
            result.viser_regularizers = Some(stage.regularizers);
            result.viser_unembeddable = Some(stage.unembeddable);
            stage.params
        } else {
            let out = train(&init, &data, &tc, m, &cfg.perturbation).map_err(wrap(m))?;
            if m == Method::CrossEntropy {
                pretrained = Some(out.params.clone());
            }
            out.params
        };
        result.errors.insert(m, test_error(&params, &ds).map_err(wrap(m))?);
    }
    Ok(result)
}

/// Generates the seed's dataset and trains one method on it, exactly as
/// [`run_seed`] would.
pub fn train_method(cfg: &ExperimentConfig, seed: u64, method: Method) -> Result<(SyntheticDataset, MlpParams<f64>)> {
    cfg.validate()?;
    let ds = generate(&SyntheticSpec {
        seed,
        ..cfg.synthetic.clone()
    })?;
    let init = initial_params(&ds, cfg.hidden, seed);
    let data = ds.train_samples::<f64>();
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let first = if method == Method::Viser { Method::CrossEntropy } else { method };
    let mut params = train(&init, &data, &tc, first, &cfg.perturbation)?.params;
    if method == Method::Viser {
        params = run_viser(cfg, &ds, &init, &params, seed)?.params;
    }
    Ok((ds, params))
}

/// Seed-level worker count: `VISER_THREADS` if set, else the hardware.
pub fn thread_budget() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every seed (in parallel up to `threads`) and assembles the record
/// in seed order. Any failing seed fails the whole run.
pub fn run_benchmark(cfg: &ExperimentConfig, threads: usize) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let seeds: Vec<u64> = cfg.seeds().collect();
    let slots: Vec<Mutex<Option<Result<SeedResult>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let r = run_seed(cfg, seed);
                let failed = r.is_err();
                *slots[i].lock().unwrap() = Some(r);
                if failed {
                    next.store(seeds.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut per_seed = Vec::with_capacity(seeds.len());
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(r) => per_seed.push(r?),
            None => {}
        }
    }
    Ok(RunRecord {
        artifact_version: ARTIFACT_VERSION.into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        aggregate: aggregate(&per_seed),
        per_seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn record_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("run-{}.json", cfg.hash()))
}

/// Writes `record` under `dir`, named by config hash. Refuses to replace an
/// existing record unless `force`.
pub fn save_record(dir: &Path, record: &RunRecord, force: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = record_path(dir, &record.config);
    if path.exists() && !force {
        return Err(Error::RecordExists(path.display().to_string()));
    }
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed_result(seed: u64, e: f64) -> SeedResult {
        SeedResult {
            seed,
            errors: [(Method::CrossEntropy, e)].into_iter().collect(),
            viser_label_agreement: None,
            viser_regularizers: None,
            viser_unembeddable: None,
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let a = aggregate(&[seed_result(0, 8.0), seed_result(1, 10.0)]);
        let ce = a[&Method::CrossEntropy];
        assert_eq!(ce.mean, 9.0);
        assert!((ce.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(ce.runs, 2);
        assert_eq!(aggregate(&[seed_result(0, 3.0)])[&Method::CrossEntropy].std, 0.0);
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.take = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let partial: ExperimentConfig = toml::from_str("take = 3\nseed_count = 2\n").unwrap();
        assert_eq!(partial.take, 3);
        assert_eq!(partial.seed_count, 2);
        assert_eq!(partial.train, benchmark_schedule());
    }

    #[test]
    fn save_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RunRecord {
            artifact_version: ARTIFACT_VERSION.into(),
            config_hash: ExperimentConfig::default().hash(),
            config: ExperimentConfig::default(),
            per_seed: vec![seed_result(0, 1.0)],
            aggregate: aggregate(&[seed_result(0, 1.0)]),
            wall_clock_seconds: 1.0,
        };
        save_record(dir.path(), &rec, false).unwrap();
        assert!(matches!(save_record(dir.path(), &rec, false), Err(Error::RecordExists(_))));
        save_record(dir.path(), &rec, true).unwrap();
    }
}
