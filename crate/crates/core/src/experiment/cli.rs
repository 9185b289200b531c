//! The `viser` command line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{run_benchmark, save_record, thread_budget, train_method, ExperimentConfig};
use crate::embedding::format::{load_corpus, write_jsonl_records};
use crate::metrics::{evaluate, PredictionRecord, DEFAULT_TOLERANCE_PX};
use crate::model::{checkpoint, Method};
use crate::neighbor_search::{exact_search, flatten, recall, search, NeighborMatch, Neighbors, SearchParams};
use crate::synthetic::{contour_axis, contour_grid, generate, SyntheticDataset, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "viser", version, about = "Self-regularization with retrieved unlabeled neighbors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the synthetic benchmark over a range of seeds and write a run record.
    Bench(BenchArgs),
    /// Sharded top-k regularizer search between two embedding corpora.
    Search(SearchArgs),
    /// Export one synthetic dataset as embedding files.
    Gen(GenArgs),
    /// Train one method on one seed and write a parameter checkpoint.
    Train(TrainArgs),
    /// Emit p(y=1|x) over the latent plane as a CSV matrix.
    Contour(ContourArgs),
    /// Score a JSONL file of prediction records.
    Eval(EvalArgs),
}

/// Regularizer selection, shared by the training verbs.
#[derive(Args, Debug, Clone, Default)]
pub struct RegArgs {
    /// TOML or JSON experiment config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// l-inf budget for FGSM, l2 radius for VAT.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Power-iteration probe scale for VAT.
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub power_iters: Option<usize>,
    /// Neighbors taken per labeled sample by ViSeR.
    #[arg(long)]
    pub take: Option<usize>,
    #[arg(long)]
    pub km: Option<usize>,
    #[arg(long)]
    pub kr: Option<usize>,
    #[arg(long)]
    pub shards: Option<usize>,
    /// Training iterations (decay steps scale with it).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Fine-tune ViSeR from the shared initialization instead of the
    /// pretrained weights.
    #[arg(long)]
    pub restart: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub reg: RegArgs,
    /// Comma-separated subset of none,dropout,at,vat,viser.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub seed_start: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Replace an existing record with the same config hash.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutputFormat {
    Jsonl,
    Csv,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Labeled corpus (JSONL or binary).
    #[arg(long)]
    pub labeled: PathBuf,
    /// Unlabeled corpus (JSONL or binary).
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long, default_value_t = crate::neighbor_search::DEFAULT_KM)]
    pub km: usize,
    #[arg(long, default_value_t = crate::neighbor_search::DEFAULT_KR)]
    pub kr: usize,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Match file; format follows the extension unless --format is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Use exhaustive search instead of the sharded search.
    #[arg(long, conflicts_with = "verify")]
    pub oracle: bool,
    /// Run both searches and report their agreement.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML or JSON experiment config; only its `synthetic` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub reg: RegArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Regularizer to train with.
    #[arg(long = "reg", default_value = "none", value_parser = parse_method)]
    pub reg_method: Method,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ContourArgs {
    #[command(flatten)]
    pub reg: RegArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Regularizer to train with (ignored with --checkpoint).
    #[arg(long = "reg", default_value = "none", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 121)]
    pub resolution: usize,
    /// Use saved parameters instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// JSONL file of prediction records.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_PX)]
    pub tolerance: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected none, dropout, at, vat or viser)"))
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Bench(a) => bench(a),
        Command::Search(a) => search_cmd(a),
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Contour(a) => contour(a),
        Command::Eval(a) => eval(a),
    }
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(cfg)
}

impl RegArgs {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        let p = &mut cfg.perturbation;
        if let Some(v) = self.eps {
            p.epsilon = v;
        }
        if self.xi.is_some() {
            p.xi = self.xi;
        }
        if let Some(v) = self.power_iters {
            p.power_iters = v;
        }
        if let Some(v) = self.take {
            cfg.take = v;
        }
        if let Some(v) = self.km {
            cfg.search.k_m = v;
        }
        if let Some(v) = self.kr {
            cfg.search.k_r = v;
        }
        if let Some(v) = self.shards {
            cfg.search.shard_count = v;
        }
        if let Some(n) = self.iterations {
            for t in [&mut cfg.train, &mut cfg.viser_finetune] {
                let old = t.iterations;
                t.decay_steps = t.decay_steps.iter().map(|&s| s * n / old).collect();
                t.iterations = n;
            }
        }
        if self.restart {
            cfg.viser_restart = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn bench(a: BenchArgs) -> anyhow::Result<()> {
    let mut cfg = a.reg.resolve()?;
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    if let Some(s) = a.seed_start {
        cfg.seed_start = s;
    }
    if let Some(n) = a.seeds {
        cfg.seed_count = n;
    }
    let path = super::record_path(&a.out_dir, &cfg);
    if path.exists() && !a.force {
        bail!("{} already exists; pass --force to replace it", path.display());
    }
    let record = run_benchmark(&cfg, thread_budget())?;
    let path = save_record(&a.out_dir, &record, a.force)?;
    println!("{:<14} {:>8} {:>8}", "method", "mean%", "std");
    for (m, agg) in &record.aggregate {
        println!("{:<14} {:>8.3} {:>8.3}", m.name(), agg.mean, agg.std);
    }
    println!("record: {}", path.display());
    Ok(())
}

fn search_cmd(a: SearchArgs) -> anyhow::Result<()> {
    let labeled = load_corpus::<f64>(&a.labeled).with_context(|| format!("loading {}", a.labeled.display()))?;
    let unlabeled =
        load_corpus::<f64>(&a.unlabeled).with_context(|| format!("loading {}", a.unlabeled.display()))?;
    let params = SearchParams::new(a.km, a.kr, a.shards)?;
    let result = if a.oracle {
        exact_search(&labeled, &unlabeled, a.kr)?
    } else {
        search(&labeled, &unlabeled, &params)?
    };
    let format = a.format.unwrap_or_else(|| {
        if a.out.extension().is_some_and(|e| e == "csv") {
            OutputFormat::Csv
        } else {
            OutputFormat::Jsonl
        }
    });
    write_matches(&result, &a.out, format)?;
    if a.verify {
        let oracle = exact_search(&labeled, &unlabeled, a.kr)?;
        println!("agreement: {}%", 100.0 * agreement(&result, &oracle));
    }
    Ok(())
}

/// Fraction of oracle matches present in `approx` with the same score.
pub fn agreement(approx: &Neighbors, oracle: &Neighbors) -> f64 {
    let exact_scores = flatten(approx)
        .into_iter()
        .map(|m| ((m.labeled_id, m.unlabeled_id), m.score.to_bits()))
        .collect::<std::collections::HashMap<_, _>>();
    let total: usize = oracle.values().map(Vec::len).sum();
    if total == 0 {
        return recall(approx, oracle);
    }
    let hit = flatten(oracle)
        .iter()
        .filter(|m| exact_scores.get(&(m.labeled_id, m.unlabeled_id)) == Some(&m.score.to_bits()))
        .count();
    hit as f64 / total as f64
}

pub fn write_matches(result: &Neighbors, path: &Path, format: OutputFormat) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let matches: Vec<NeighborMatch> = flatten(result);
    match format {
        OutputFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for m in &matches {
                serde_json::to_writer(&mut w, m)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for m in &matches {
                w.serialize(m)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => load_config(p)?.synthetic,
        None => SyntheticSpec::default(),
    };
    let ds = generate(&SyntheticSpec { seed: a.seed, ..base })?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, samples, labeled) in [
        ("train", &ds.train, true),
        ("unlabeled", &ds.unlabeled, false),
        ("test", &ds.test, true),
    ] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_jsonl_records(&SyntheticDataset::export_records(samples, labeled), BufWriter::new(file))?;
    }
    let mut w = csv::Writer::from_path(a.out_dir.join("embedding_matrix.csv"))?;
    for row in ds.embedding_matrix.chunks(ds.spec.latent_dim) {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    std::fs::write(a.out_dir.join("spec.json"), serde_json::to_string_pretty(&ds.spec)? + "\n")?;
    println!(
        "wrote {} train, {} unlabeled, {} test samples to {}",
        ds.train.len(),
        ds.unlabeled.len(),
        ds.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.reg.resolve()?;
    let (ds, params) = train_method(&cfg, a.seed, a.reg_method)?;
    checkpoint::save(&params, &a.out)?;
    println!(
        "{} seed {}: test error {}%",
        a.reg_method,
        a.seed,
        super::test_error(&params, &ds)?
    );
    Ok(())
}

fn contour(a: ContourArgs) -> anyhow::Result<()> {
    let cfg = a.reg.resolve()?;
    let (ds, params) = match &a.checkpoint {
        Some(p) => {
            let ds = generate(&SyntheticSpec {
                seed: a.seed,
                ..cfg.synthetic.clone()
            })?;
            (ds, checkpoint::load::<f64>(p)?)
        }
        None => train_method(&cfg, a.seed, a.method)?,
    };
    let grid = contour_grid(&params, &ds, a.resolution)?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let axis = contour_axis(a.resolution);
    w.write_record(std::iter::once("y\\x".to_string()).chain(axis.iter().map(|v| format!("{v:?}"))))?;
    for (y, row) in axis.iter().zip(&grid) {
        w.write_record(std::iter::once(format!("{y:?}")).chain(row.iter().map(|v| format!("{v:?}"))))?;
    }
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let file = File::open(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", a.predictions.display(), i + 1))?;
        records.push(r);
    }
    let report = evaluate(&records, a.tolerance)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}
