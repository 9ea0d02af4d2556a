//! Command-line driver. Experiments are described by a flat `key = value`
//! file; run directories are named by a fingerprint of everything that
//! determines their contents, so reruns land in the same place.
//!
//! Config keys (paths are relative to the config file):
//!
//! | key | meaning |
//! |-----|---------|
//! | `dataset1`, `dataset2`, `lowfid` | manifest CSVs |
//! | `mix` | `auto` (concatenate dataset1 and dataset2) or `none` |
//! | `donor` | Step 2/3 donor checkpoint; default is the `pretrain-proxy` output |
//! | `out` | output directory |
//! | `graph.cutoff`, `graph.n_centers`, `graph.center_max`, `graph.width`, `graph.state_dim` | graph construction |
//! | `model.embed_dim`, `model.n_blocks`, `model.block_hidden`, `model.head_layers` | architecture; lists are comma-separated |
//! | `train.epochs`, `train.seed`, `train.batch_size`, `train.learning_rate`, `train.beta1`, `train.beta2`, `train.adam_epsilon`, `train.freeze_backbone` | optimization |
//! | `proxy.epochs` | epochs of proxy pre-training (default `train.epochs`) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use log::info;
use thiserror::Error;

use crate::data::{
    load_manifest, make_splits, mix, synth_generate_with, DataError, DatasetManifest, Fidelity, GraphDataset,
    SynthOptions,
};
use crate::eval::{cross_eval, export_curves, matrix_csv, matrix_text, EvalError, EvalResult, Stat};
use crate::graph::GraphConfig;
use crate::io::write_atomic;
use crate::model::{load, save, ModelConfig, ModelError, ModelState};
use crate::trainer::{
    canonical_hyperparameters, fingerprint, pretrain_backbone_proxy, run_step1, run_step2, run_step3_from,
    write_records, RunRecord, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("no donor checkpoint: {0}")]
    MissingDonor(String),
    #[error("missing runs: {0}")]
    MissingRuns(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl CliError {
    /// 1 for invalid input or missing prerequisites, 2 for failures while
    /// processing data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::MissingDonor(_) | CliError::MissingRuns(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset1: Option<PathBuf>,
    pub dataset2: Option<PathBuf>,
    pub mix_auto: bool,
    pub lowfid: Option<PathBuf>,
    pub donor: Option<PathBuf>,
    pub out: PathBuf,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub proxy_epochs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset1: None,
            dataset2: None,
            mix_auto: true,
            lowfid: None,
            donor: None,
            out: PathBuf::from("out"),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            proxy_epochs: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Validation(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative paths
    /// resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c = ExperimentConfig {
            out: base.join("out"),
            ..ExperimentConfig::default()
        };
        let path = |v: &str| base.join(v);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "dataset1" => c.dataset1 = Some(path(v)),
                "dataset2" => c.dataset2 = Some(path(v)),
                "lowfid" => c.lowfid = Some(path(v)),
                "donor" => c.donor = Some(path(v)),
                "out" => c.out = path(v),
                "mix" => {
                    c.mix_auto = match v {
                        "auto" => true,
                        "none" => false,
                        _ => return Err(CliError::Validation(format!("mix: expected auto or none, got {v:?}"))),
                    }
                }
                "graph.cutoff" => c.graph.cutoff = parse_value(k, v)?,
                "graph.n_centers" => c.graph.n_centers = parse_value(k, v)?,
                "graph.center_max" => c.graph.center_max = parse_value(k, v)?,
                "graph.width" => c.graph.width = parse_value(k, v)?,
                "graph.state_dim" => c.graph.state_dim = parse_value(k, v)?,
                "model.embed_dim" => c.model.embed_dim = parse_value(k, v)?,
                "model.n_blocks" => c.model.n_blocks = parse_value(k, v)?,
                "model.block_hidden" => c.model.block_hidden = parse_list(k, v)?,
                "model.head_layers" => c.model.head_layers = parse_list(k, v)?,
                "train.epochs" => c.train.epochs = parse_value(k, v)?,
                "train.seed" => c.train.seed = parse_value(k, v)?,
                "train.batch_size" => c.train.batch_size = parse_value(k, v)?,
                "train.learning_rate" => c.train.learning_rate = parse_value(k, v)?,
                "train.beta1" => c.train.beta1 = parse_value(k, v)?,
                "train.beta2" => c.train.beta2 = parse_value(k, v)?,
                "train.adam_epsilon" => c.train.adam_epsilon = parse_value(k, v)?,
                "train.freeze_backbone" => c.train.freeze_backbone = parse_value(k, v)?,
                "proxy.epochs" => c.proxy_epochs = Some(parse_value(k, v)?),
                _ => return Err(CliError::Validation(format!("config line {}: unknown key {k:?}", n + 1))),
            }
        }
        c.model.n_centers = c.graph.n_centers;
        c.model.state_dim = c.graph.state_dim;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Checks value ranges and that every referenced manifest exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: String| CliError::Validation(e);
        self.graph.validate().map_err(|e| v(e.to_string()))?;
        self.model.validate().map_err(|e| v(e.to_string()))?;
        self.train.validate().map_err(|e| v(e.to_string()))?;
        if self.proxy_epochs == Some(0) {
            return Err(v("proxy.epochs must be at least 1".into()));
        }
        for (key, p) in [("dataset1", &self.dataset1), ("dataset2", &self.dataset2), ("lowfid", &self.lowfid)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(v(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Configured datasets by CLI name, in matrix order.
    fn dataset_names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.dataset1.is_some() {
            out.push("dataset1");
        }
        if self.dataset2.is_some() {
            out.push("dataset2");
        }
        if self.mix_auto && self.dataset1.is_some() && self.dataset2.is_some() {
            out.push("mix");
        }
        if self.lowfid.is_some() {
            out.push("lowfid");
        }
        out
    }

    fn manifest(&self, name: &str) -> Result<DatasetManifest, CliError> {
        let get = |p: &Option<PathBuf>, key: &str| -> Result<DatasetManifest, CliError> {
            let p = p
                .as_ref()
                .ok_or_else(|| CliError::Validation(format!("dataset {key} is not configured")))?;
            Ok(load_manifest(p)?.with_name(key))
        };
        match name {
            "dataset1" => get(&self.dataset1, "dataset1"),
            "dataset2" => get(&self.dataset2, "dataset2"),
            "lowfid" => Ok(get(&self.lowfid, "lowfid")?.with_role(Fidelity::Low)),
            "mix" => {
                if !self.mix_auto {
                    return Err(CliError::Validation("mix is disabled (mix = none)".into()));
                }
                let (a, b) = (get(&self.dataset1, "dataset1")?, get(&self.dataset2, "dataset2")?);
                Ok(mix(&[&a, &b])?)
            }
            _ => Err(CliError::Validation(format!(
                "unknown dataset {name:?}; expected dataset1, dataset2, mix or lowfid"
            ))),
        }
    }

    fn graphs(&self, name: &str) -> Result<GraphDataset, CliError> {
        let m = self.manifest(name)?;
        log::debug!("building {} graphs for {}", m.len(), m.name);
        Ok(GraphDataset::from_manifest(&m, &self.graph)?)
    }

    fn hyperparameters(&self) -> String {
        canonical_hyperparameters(&self.train, &self.model, &self.graph)
    }

    fn proxy_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.proxy_epochs.unwrap_or(self.train.epochs),
            ..self.train.clone()
        }
    }
}

/// Digest of a dataset's ids and targets.
fn dataset_digest(d: &GraphDataset) -> String {
    let mut s = String::new();
    for (id, k) in d.material_ids.iter().zip(&d.ltc) {
        let _ = writeln!(s, "{id},{k:?}");
    }
    fingerprint(&s)
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(&<sha2::Sha256 as sha2::Digest>::digest(&bytes)[..8]))
}

#[derive(Parser, Debug)]
#[command(name = "paraisite", version, about = "Lattice thermal conductivity from crystal graphs with staged transfer learning")]
pub struct Cli {
    /// Experiment config file (key = value)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed, overriding train.seed; for synth, the generator seed (default 1)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic two-fidelity corpus and an experiment config
    Synth {
        #[arg(long, default_value_t = 150)]
        n_high: usize,
        #[arg(long, default_value_t = 150)]
        n_narrow: usize,
        #[arg(long, default_value_t = 2000)]
        n_low: usize,
    },
    /// Validate manifests and build every graph
    Ingest,
    /// Pre-train the Step 2 donor on the proxy target
    PretrainProxy,
    /// Run one protocol step over the nine splits of a dataset
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        step: u8,
        /// dataset1, dataset2, mix or lowfid
        #[arg(long)]
        dataset: String,
    },
    /// Train-on/test-on MAPE matrix of a step
    Matrix {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        step: u8,
    },
    /// Summarize every run under the output directory
    Report,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut c = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        c.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        c.train.seed = seed;
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { n_high, n_narrow, n_low } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::Validation("synth needs --out".into()))?;
            cmd_synth(*n_high, *n_narrow, *n_low, cli.seed.unwrap_or(SYNTH_SEED), &out)
        }
        Command::Ingest => cmd_ingest(&load_config(&cli)?),
        Command::PretrainProxy => cmd_pretrain(&load_config(&cli)?).map(|p| println!("{}", p.display())),
        Command::Train { step, dataset } => {
            cmd_train(&load_config(&cli)?, *step, dataset).map(|p| println!("{}", p.display()))
        }
        Command::Matrix { step } => cmd_matrix(&load_config(&cli)?, *step).map(|p| println!("{}", p.display())),
        Command::Report => cmd_report(&load_config(&cli)?).map(|s| print!("{s}")),
    }
}

pub const SYNTH_SEED: u64 = 1;

/// Writes `dataset1` (broad high fidelity, `seed`), `lowfid` (`seed + 1`),
/// `dataset2` (narrow high fidelity, `seed + 2`) and `experiment.conf`.
pub fn cmd_synth(n_high: usize, n_narrow: usize, n_low: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let sets = [
        SynthOptions {
            name: "dataset1".into(),
            ..SynthOptions::new(n_high, seed, Fidelity::High)
        },
        SynthOptions {
            name: "dataset2".into(),
            ..SynthOptions::narrow(n_narrow, seed.wrapping_add(2))
        },
        SynthOptions::new(n_low, seed.wrapping_add(1), Fidelity::Low),
    ];
    for opts in &sets {
        let d = synth_generate_with(opts)?;
        let m = d.write(out)?;
        info!("wrote {} rows of {}", m.len(), m.name);
    }
    let conf = "# synthetic two-fidelity experiment, desk-scale settings\n\
                dataset1 = dataset1.csv\n\
                dataset2 = dataset2.csv\n\
                mix = auto\n\
                lowfid = lowfid.csv\n\
                out = results\n\
                model.n_blocks = 2\n\
                train.epochs = 100\n";
    write_text(&out.join("experiment.conf"), conf)
}

pub fn cmd_ingest(c: &ExperimentConfig) -> Result<(), CliError> {
    let mut s = String::from("dataset,rows,ltc_min,ltc_max,mean_nodes,mean_edges\n");
    for name in c.dataset_names() {
        let m = c.manifest(name)?;
        let g = GraphDataset::from_manifest(&m, &c.graph)?;
        let (lo, hi) = m.ltc_range().unwrap_or((f64::NAN, f64::NAN));
        let n = g.len().max(1) as f64;
        let nodes = g.graphs.iter().map(|x| x.n_nodes()).sum::<usize>() as f64 / n;
        let edges = g.graphs.iter().map(|x| x.n_edges()).sum::<usize>() as f64 / n;
        let _ = writeln!(s, "{name},{},{lo},{hi},{nodes:.2},{edges:.2}", m.len());
    }
    std::fs::create_dir_all(&c.out).map_err(|e| io_err(&c.out, e))?;
    write_text(&c.out.join("ingest.csv"), &s)?;
    print!("{s}");
    Ok(())
}

fn proxy_corpus(c: &ExperimentConfig) -> Result<GraphDataset, CliError> {
    if c.lowfid.is_some() {
        return c.graphs("lowfid");
    }
    let parts = c
        .dataset_names()
        .into_iter()
        .filter(|n| *n != "mix")
        .map(|n| c.graphs(n))
        .collect::<Result<Vec<_>, _>>()?;
    if parts.is_empty() {
        return Err(CliError::Validation("no dataset configured for proxy pre-training".into()));
    }
    Ok(GraphDataset::concat("proxy", &parts.iter().collect::<Vec<_>>()))
}

fn default_donor_path(c: &ExperimentConfig, corpus: &GraphDataset) -> PathBuf {
    let fp = fingerprint(&format!(
        "{}proxy.epochs={}\ncorpus={}\n",
        canonical_hyperparameters(&c.proxy_train_config(), &c.model, &c.graph),
        c.proxy_train_config().epochs,
        dataset_digest(corpus)
    ));
    c.out.join("proxy").join(format!("proxy_{fp}.pai"))
}

pub fn cmd_pretrain(c: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let corpus = proxy_corpus(c)?;
    let path = c.donor.clone().unwrap_or_else(|| default_donor_path(c, &corpus));
    info!("proxy pre-training on {} structures", corpus.len());
    let state = pretrain_backbone_proxy(&corpus, &c.model, &c.proxy_train_config())?;
    save(&state, &path)?;
    Ok(path)
}

fn donor_path(c: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let path = match &c.donor {
        Some(p) => p.clone(),
        None => default_donor_path(c, &proxy_corpus(c)?),
    };
    if !path.is_file() {
        return Err(CliError::MissingDonor(format!(
            "{} not found; run pretrain-proxy or set donor",
            path.display()
        )));
    }
    Ok(path)
}

fn run_dir(c: &ExperimentConfig, step: u8, data: &GraphDataset, name: &str, extra: &str) -> (PathBuf, String) {
    let text = format!(
        "{}step={step}\ndataset={name}\ndata={}\n{extra}",
        c.hyperparameters(),
        dataset_digest(data)
    );
    let fp = fingerprint(&text);
    (c.out.join("runs").join(format!("step{step}_{name}_{fp}")), text)
}

fn write_run(dir: &Path, description: &str, records: &mut [RunRecord]) -> Result<(), CliError> {
    write_records(dir, records)?;
    write_text(&dir.join("curves.csv"), &export_curves(records)?)?;
    write_text(&dir.join("run.txt"), description)
}

/// Best checkpoint and best validation MAPE of each split in a run directory.
fn load_run(dir: &Path) -> Result<Vec<(ModelState, f64)>, CliError> {
    (0..crate::data::N_SPLITS)
        .map(|i| {
            let txt = dir.join(format!("split_{i}.txt"));
            let text = std::fs::read_to_string(&txt)
                .map_err(|_| CliError::MissingRuns(format!("{} is incomplete", dir.display())))?;
            let best = text
                .lines()
                .find_map(|l| l.strip_prefix("best_val_mape="))
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CliError::MissingRuns(format!("{}: no best_val_mape", txt.display())))?;
            Ok((load(&dir.join(format!("split_{i}.pai")))?, best))
        })
        .collect()
}

struct StepRun {
    dir: PathBuf,
    description: String,
    data: GraphDataset,
}

/// Resolves the run directory of `step` on `name` without training.
fn plan_run(c: &ExperimentConfig, step: u8, name: &str) -> Result<StepRun, CliError> {
    if step == 3 && name == "lowfid" {
        return Err(CliError::Validation("step 3 trains on the target datasets, not on lowfid".into()));
    }
    let data = c.graphs(name)?;
    let extra = match step {
        1 => String::new(),
        2 => format!("donor={}\n", file_digest(&donor_path(c)?)?),
        _ => {
            if c.lowfid.is_none() {
                return Err(CliError::MissingDonor("step 3 needs a lowfid manifest".into()));
            }
            let low = plan_run(c, 2, "lowfid")?;
            format!("start={}\n", low.dir.display())
        }
    };
    let (dir, description) = run_dir(c, step, &data, name, &extra);
    Ok(StepRun { dir, description, data })
}

pub fn cmd_train(c: &ExperimentConfig, step: u8, name: &str) -> Result<PathBuf, CliError> {
    let plan = plan_run(c, step, name)?;
    info!("step {step} on {name} ({} rows) → {}", plan.data.len(), plan.dir.display());
    let mut records = match step {
        1 => run_step1(&plan.data, &c.model, &c.train)?,
        2 => {
            let donor = load(&donor_path(c)?)?;
            run_step2(&plan.data, &donor, &c.model, &c.train)?
        }
        _ => {
            let low_dir = plan_run(c, 2, "lowfid")?.dir;
            if !low_dir.join("run.txt").is_file() {
                info!("no step 2 lowfid runs yet; training them first");
                cmd_train(c, 2, "lowfid")?;
            }
            let runs = load_run(&low_dir)?;
            // lowest best-epoch validation MAPE, lowest split on ties
            let mut best = 0;
            for (i, (_, v)) in runs.iter().enumerate() {
                if *v < runs[best].1 {
                    best = i;
                }
            }
            info!("step 3 starts from lowfid split {best}");
            run_step3_from(&plan.data, &runs[best].0, &c.train)?
        }
    };
    write_run(&plan.dir, &plan.description, &mut records)?;
    Ok(plan.dir)
}

pub fn cmd_matrix(c: &ExperimentConfig, step: u8) -> Result<PathBuf, CliError> {
    let names = c.dataset_names();
    let tests: Vec<(&str, GraphDataset)> = names
        .iter()
        .map(|n| Ok((*n, c.graphs(n)?)))
        .collect::<Result<_, CliError>>()?;
    let mut cells: Vec<EvalResult> = Vec::new();
    for &train in names.iter().filter(|n| step != 3 || **n != "lowfid") {
        let dir = plan_run(c, step, train)?.dir;
        if !dir.join("run.txt").is_file() {
            return Err(CliError::MissingRuns(format!(
                "step {step} on {train}: {} (run `train --step {step} --dataset {train}`)",
                dir.display()
            )));
        }
        let models: Vec<ModelState> = load_run(&dir)?.into_iter().map(|(m, _)| m).collect();
        for (test_name, test) in &tests {
            // model i is scored on validation split i of the test dataset
            let plan = make_splits(test.len(), c.train.seed)?;
            let rows: Vec<Vec<usize>> = plan.splits.iter().map(|s| s.validation.clone()).collect();
            let mut r = cross_eval(&format!("step{step}"), &models, test, Some(&rows))?;
            r.train_dataset = train.to_string();
            r.test_dataset = test_name.to_string();
            cells.push(r);
        }
    }
    std::fs::create_dir_all(&c.out).map_err(|e| io_err(&c.out, e))?;
    let csv = c.out.join(format!("matrix_step{step}.csv"));
    write_text(&csv, &matrix_csv(&cells))?;
    write_text(&c.out.join(format!("matrix_step{step}.txt")), &matrix_text(&cells))?;
    Ok(csv)
}

pub fn cmd_report(c: &ExperimentConfig) -> Result<String, CliError> {
    let runs = c.out.join("runs");
    let mut dirs: Vec<PathBuf> = match std::fs::read_dir(&runs) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("run.txt").is_file()).collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    let mut s = String::from("run,best_val_mape_mean,best_val_mape_std,best_epochs\n");
    let mut summary: BTreeMap<String, Stat> = BTreeMap::new();
    for d in &dirs {
        let mut vals = Vec::new();
        let mut epochs = Vec::new();
        for i in 0..crate::data::N_SPLITS {
            let text = std::fs::read_to_string(d.join(format!("split_{i}.txt"))).unwrap_or_default();
            for l in text.lines() {
                if let Some(v) = l.strip_prefix("best_val_mape=") {
                    vals.extend(v.parse::<f64>().ok());
                }
                if let Some(v) = l.strip_prefix("best_epoch=") {
                    epochs.push(v.to_string());
                }
            }
        }
        if vals.is_empty() {
            continue;
        }
        let st = Stat::of(&vals);
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(s, "{name},{:?},{:?},{}", st.mean, st.std, epochs.join(" "));
        summary.insert(name, st);
    }
    for step in 1..=3 {
        let t = c.out.join(format!("matrix_step{step}.txt"));
        if let Ok(text) = std::fs::read_to_string(&t) {
            s.push('\n');
            s.push_str(&text);
        }
    }
    std::fs::create_dir_all(&c.out).map_err(|e| io_err(&c.out, e))?;
    write_text(&c.out.join("report.txt"), &s)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let text = "# comment\ndataset1 = d1.csv\nmix = none\nmodel.block_hidden = 8, 4\ntrain.learning_rate = 0.001 # inline\ngraph.n_centers = 20\n";
        let c = ExperimentConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.dataset1, Some(PathBuf::from("/base/d1.csv")));
        assert!(!c.mix_auto);
        assert_eq!(c.model.block_hidden, vec![8, 4]);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.model.n_centers, 20);
        assert_eq!(c.out, PathBuf::from("/base/out"));

        let err = ExperimentConfig::parse("bogus = 1\n", Path::new("")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(ExperimentConfig::parse("train.epochs = many\n", Path::new("")).is_err());
        assert!(ExperimentConfig::parse("no equals sign\n", Path::new("")).is_err());
    }

    #[test]
    fn validation_checks_paths() {
        let c = ExperimentConfig::parse("dataset1 = /nonexistent/d1.csv\n", Path::new("")).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
    }
}
