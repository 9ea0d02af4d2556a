//! Mini-batch training with Adam and best-epoch selection, and the
//! three-step transfer protocol built on it.

mod protocol;

pub use protocol::{
    pretrain_backbone_proxy, proxy_target, run_step1, run_step2, run_step3, run_step3_from, select_best,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, GraphDataset};
use crate::graph::GraphConfig;
use crate::io::write_atomic;
use crate::model::{save, CompactGraph, GraphBatch, ModelConfig, ModelError, ModelState, ParamTag, Parameters};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: backbone norm {backbone_norm:.6e}, head norm {head_norm:.6e}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        backbone_norm: f64,
        head_norm: f64,
    },
    #[error("model has no target transform; fit one on the training rows first")]
    MissingTransform,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Only head tensors are updated when set.
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            seed: 42,
            batch_size: 32,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

/// Canonical `key=value` listing of every hyperparameter, one per line.
pub fn canonical_hyperparameters(train: &TrainConfig, model: &ModelConfig, graph: &GraphConfig) -> String {
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut s = String::new();
    let pairs: [(&str, String); 20] = [
        ("graph.cutoff", format!("{:?}", graph.cutoff)),
        ("graph.n_centers", graph.n_centers.to_string()),
        ("graph.center_max", format!("{:?}", graph.center_max)),
        ("graph.width", format!("{:?}", graph.width)),
        ("graph.state_dim", graph.state_dim.to_string()),
        ("model.embed_dim", model.embed_dim.to_string()),
        ("model.n_blocks", model.n_blocks.to_string()),
        ("model.block_hidden", list(&model.block_hidden)),
        ("model.head_layers", list(&model.head_layers)),
        ("model.n_centers", model.n_centers.to_string()),
        ("model.state_dim", model.state_dim.to_string()),
        ("train.epochs", train.epochs.to_string()),
        ("train.seed", train.seed.to_string()),
        ("train.batch_size", train.batch_size.to_string()),
        ("train.learning_rate", format!("{:?}", train.learning_rate)),
        ("train.beta1", format!("{:?}", train.beta1)),
        ("train.beta2", format!("{:?}", train.beta2)),
        ("train.adam_epsilon", format!("{:?}", train.adam_epsilon)),
        ("train.freeze_backbone", train.freeze_backbone.to_string()),
        ("loss.epsilon", format!("{:?}", crate::model::MAPE_EPSILON)),
    ];
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn fingerprint(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Adam with bias correction:
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`,
/// `θ ← θ - lr · m̂ / (sqrt(v̂) + ε)` with `m̂ = m / (1-β1^t)`, `v̂ = v / (1-β2^t)`.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Parameters,
    v: Parameters,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    freeze_backbone: bool,
}

impl Adam {
    pub fn new(params: &Parameters, config: &TrainConfig) -> Adam {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            freeze_backbone: config.freeze_backbone,
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            if self.freeze_backbone && p.tag == ParamTag::Backbone {
                continue;
            }
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(&mut m.value)
                .and(&mut v.value)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// One training run on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub split: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub provenance: String,
    /// Mean batch loss per epoch (transformed scale).
    pub train_mape: Vec<f64>,
    /// Full validation-set MAPE after each epoch (transformed scale).
    pub val_mape: Vec<f64>,
    /// 1-based epoch of the lowest validation MAPE, earliest on ties.
    pub best_epoch: usize,
    pub checkpoint: Option<PathBuf>,
    /// Model as it was at `best_epoch`.
    pub best_state: ModelState,
}

impl RunRecord {
    pub fn best_val_mape(&self) -> f64 {
        self.val_mape[self.best_epoch - 1]
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_mape,val_mape\n");
        for (e, (t, v)) in self.train_mape.iter().zip(&self.val_mape).enumerate() {
            let _ = writeln!(s, "{},{:?},{:?}", e + 1, t, v);
        }
        s
    }

    pub fn manifest_text(&self) -> String {
        let ckpt = self
            .checkpoint
            .as_ref()
            .map_or_else(|| "-".to_string(), |p| p.display().to_string());
        format!(
            "seed={}\nsplit={}\nfingerprint={}\ncheckpoint={}\nprovenance={}\nbest_epoch={}\nbest_val_mape={:?}\n",
            self.seed,
            self.split,
            self.fingerprint,
            ckpt,
            self.provenance,
            self.best_epoch,
            self.best_val_mape()
        )
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Writes `split_{i}.csv`, `split_{i}.pai` and `split_{i}.txt` per record
/// and fills in each record's checkpoint path.
pub fn write_records(dir: &Path, records: &mut [RunRecord]) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for r in records.iter_mut() {
        let ckpt = dir.join(format!("split_{}.pai", r.split));
        save(&r.best_state, &ckpt)?;
        r.checkpoint = Some(ckpt);
        let csv = dir.join(format!("split_{}.csv", r.split));
        write_atomic(&csv, r.curve_csv().as_bytes()).map_err(|e| io_err(&csv, e))?;
        let txt = dir.join(format!("split_{}.txt", r.split));
        write_atomic(&txt, r.manifest_text().as_bytes()).map_err(|e| io_err(&txt, e))?;
    }
    Ok(())
}

pub(crate) fn compact_all(data: &GraphDataset, config: &ModelConfig) -> Result<Vec<CompactGraph>, ModelError> {
    data.graphs.iter().map(|g| CompactGraph::new(g, config)).collect()
}

fn mape_over(state: &ModelState, graphs: &[CompactGraph], targets: &[f64], batch_size: usize) -> f64 {
    let net = state.network();
    let mut total = 0.0;
    for (gs, ts) in graphs.chunks(batch_size.max(64)).zip(targets.chunks(batch_size.max(64))) {
        let refs: Vec<&CompactGraph> = gs.iter().collect();
        let preds = net.predict(&GraphBatch::new(&refs));
        total += preds
            .iter()
            .zip(ts)
            .map(|(p, t)| (p - t).abs() / t.abs().max(crate::model::MAPE_EPSILON))
            .sum::<f64>();
    }
    total / targets.len() as f64
}

/// Trains `initial` on `train` with validation on `val` after every epoch.
/// Targets are mapped through the model's installed transform. Batches come
/// from a ChaCha8 shuffle seeded by `config.seed`, reshuffled each epoch.
pub fn train_one(
    initial: &ModelState,
    train: &GraphDataset,
    val: &GraphDataset,
    config: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    let transform = initial.transform.as_ref().ok_or(TrainError::MissingTransform)?;
    let train_t: Vec<f64> = train.ltc.iter().map(|&k| transform.apply(k)).collect();
    let val_t: Vec<f64> = val.ltc.iter().map(|&k| transform.apply(k)).collect();
    train_targets(
        initial,
        &compact_all(train, &initial.config)?,
        &train_t,
        &compact_all(val, &initial.config)?,
        &val_t,
        config,
    )
}

/// The training loop on already transformed targets.
pub(crate) fn train_targets(
    initial: &ModelState,
    train_graphs: &[CompactGraph],
    train_t: &[f64],
    val_graphs: &[CompactGraph],
    val_t: &[f64],
    config: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    if train_t.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_t.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let mut state = initial.clone();
    let mut adam = Adam::new(&state.params, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_t.len()).collect();
    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Parameters)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&CompactGraph> = idx.iter().map(|&i| &train_graphs[i]).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| train_t[i]).collect();
            let (loss, grads, _) = state.network().loss_and_gradients(&GraphBatch::new(&refs), &targets);
            if !loss.is_finite() || !grads.all_finite() {
                let (backbone, head) = state.split_params();
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    backbone_norm: backbone.l2_norm(),
                    head_norm: head.l2_norm(),
                });
            }
            epoch_loss += loss * idx.len() as f64;
            adam.step(&mut state.params, &grads);
        }
        train_curve.push(epoch_loss / train_t.len() as f64);
        let v = mape_over(&state, val_graphs, val_t, config.batch_size);
        if !v.is_finite() {
            let (backbone, head) = state.split_params();
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: 0,
                backbone_norm: backbone.l2_norm(),
                head_norm: head.l2_norm(),
            });
        }
        val_curve.push(v);
        if best.as_ref().is_none_or(|(_, bv, _)| v < *bv) {
            best = Some((epoch, v, state.params.clone()));
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    let best_state = ModelState {
        params: best_params,
        ..state
    };
    Ok(RunRecord {
        split: 0,
        seed: config.seed,
        fingerprint: String::new(),
        provenance: best_state.provenance.clone(),
        train_mape: train_curve,
        val_mape: val_curve,
        best_epoch,
        checkpoint: None,
        best_state,
    })
}
