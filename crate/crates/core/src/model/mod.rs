//! The regression network: species embedding and a stack of graph blocks
//! updating edges, nodes and the global state, read out by mean pooling into
//! a dense head.
//!
//! Every tensor is tagged as backbone or head so that transfer steps can
//! copy or redraw one part without touching the other.

mod checkpoint;
mod net;

pub use checkpoint::{load, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{CompactGraph, GraphBatch, Network, MAPE_EPSILON};

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::TargetTransform;
use crate::elements::MAX_Z;
use crate::graph::MaterialGraph;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("species Z={0} outside the embedding table")]
    SpeciesIndexOutOfRange(u8),
    #[error("graph does not match the model inputs: {0}")]
    InputMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("backbone configurations differ: {0}")]
    ConfigMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Width shared by node, edge and state features inside the backbone.
    pub embed_dim: usize,
    pub n_blocks: usize,
    /// Hidden widths of each edge/node/state update network.
    pub block_hidden: Vec<usize>,
    pub head_layers: Vec<usize>,
    /// Gaussian centers per edge, from the graph config.
    pub n_centers: usize,
    pub state_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            n_blocks: 3,
            block_hidden: vec![64, 32],
            head_layers: vec![350, 350],
            n_centers: 100,
            state_dim: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embed_dim == 0 || self.block_hidden.contains(&0) || self.head_layers.contains(&0) {
            return bad("all widths must be at least 1");
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1");
        }
        if self.head_layers.is_empty() {
            return bad("head_layers must not be empty");
        }
        if self.n_centers == 0 || self.state_dim == 0 {
            return bad("input widths must be at least 1");
        }
        Ok(())
    }

    /// Differences in anything that shapes a backbone tensor.
    pub fn backbone_mismatch(&self, other: &ModelConfig) -> Option<String> {
        let pairs = [
            ("embed_dim", self.embed_dim, other.embed_dim),
            ("n_blocks", self.n_blocks, other.n_blocks),
            ("n_centers", self.n_centers, other.n_centers),
            ("state_dim", self.state_dim, other.state_dim),
        ];
        for (name, a, b) in pairs {
            if a != b {
                return Some(format!("{name} {a} vs {b}"));
            }
        }
        (self.block_hidden != other.block_hidden)
            .then(|| format!("block_hidden {:?} vs {:?}", self.block_hidden, other.block_hidden))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamTag {
    Backbone,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub tag: ParamTag,
    pub value: Array2<f64>,
}

/// Named tensors in a fixed order. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    tag: t.tag,
                    value: Array2::zeros(t.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.value.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Only the tensors carrying `tag`, in order.
    pub fn with_tag(&self, tag: ParamTag) -> Parameters {
        Parameters {
            tensors: self.tensors.iter().filter(|t| t.tag == tag).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Parameters,
    /// Target transform of the rows this model was last trained on.
    pub transform: Option<TargetTransform>,
    /// Lineage such as `proxy→lowfid→dataset1 | split 4`.
    pub provenance: String,
}

/// Dense weight limit: entries are drawn from `U(-l, l)` with
/// `l = sqrt(INIT_SCALE / fan_in)`.
pub const INIT_SCALE: f64 = 1.0;
/// Embedding rows are drawn from `U(-1, 1)`.
pub const EMBEDDING_INIT_LIMIT: f64 = 1.0;

fn draw_tensor(t: &mut Tensor, rng: &mut ChaCha8Rng) {
    if t.name.ends_with(".b") {
        t.value.fill(0.0);
        return;
    }
    let limit = if t.name == "embedding" {
        EMBEDDING_INIT_LIMIT
    } else {
        (INIT_SCALE / t.value.nrows() as f64).sqrt()
    };
    let dist = Uniform::new_inclusive(-limit, limit);
    t.value.iter_mut().for_each(|x| *x = dist.sample(rng));
}

/// Fresh parameters with fan-in scaled uniform weights and zero biases.
/// Tensors are drawn in layout order from one ChaCha8 stream seeded by
/// `seed`, so equal seeds give bit-identical models.
pub fn init_random(config: &ModelConfig, seed: u64) -> Result<ModelState, ModelError> {
    config.validate()?;
    let mut params = net::Layout::new(config).zero_parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &mut params.tensors {
        draw_tensor(t, &mut rng);
    }
    Ok(ModelState {
        config: config.clone(),
        params,
        transform: None,
        provenance: String::new(),
    })
}

impl ModelState {
    pub fn split_params(&self) -> (Parameters, Parameters) {
        (self.params.with_tag(ParamTag::Backbone), self.params.with_tag(ParamTag::Head))
    }

    /// Redraws only the head tensors from a stream seeded by `seed`.
    pub fn reinit_head(&self, seed: u64) -> ModelState {
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in out.params.tensors.iter_mut().filter(|t| t.tag == ParamTag::Head) {
            draw_tensor(t, &mut rng);
        }
        out
    }

    /// Copies every backbone tensor from `donor`; head tensors are kept.
    pub fn load_backbone(&self, donor: &ModelState) -> Result<ModelState, ModelError> {
        if let Some(diff) = self.config.backbone_mismatch(&donor.config) {
            return Err(ModelError::ConfigMismatch(diff));
        }
        let mut out = self.clone();
        for (t, d) in out.params.tensors.iter_mut().zip(&donor.params.tensors) {
            if t.tag == ParamTag::Backbone {
                debug_assert_eq!(t.name, d.name);
                t.value.assign(&d.value);
            }
        }
        Ok(out)
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(&self.config, &self.params)
    }

    /// Prediction for one graph, in the transformed target space.
    pub fn forward(&self, graph: &MaterialGraph) -> Result<f64, ModelError> {
        Ok(self.predict(&[graph])?[0])
    }

    pub fn predict(&self, graphs: &[&MaterialGraph]) -> Result<Vec<f64>, ModelError> {
        let compact = graphs
            .iter()
            .map(|g| CompactGraph::new(g, &self.config))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&CompactGraph> = compact.iter().collect();
        Ok(self.network().predict(&GraphBatch::new(&refs)))
    }

    /// Mean guarded absolute percentage error over `batch` and its exact
    /// gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[(&MaterialGraph, f64)]) -> Result<(f64, Parameters), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let compact = batch
            .iter()
            .map(|(g, _)| CompactGraph::new(g, &self.config))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&CompactGraph> = compact.iter().collect();
        let targets: Vec<f64> = batch.iter().map(|(_, t)| *t).collect();
        let (loss, grads, _) = self.network().loss_and_gradients(&GraphBatch::new(&refs), &targets);
        Ok((loss, grads))
    }
}

pub(crate) fn check_species(z: u8) -> Result<usize, ModelError> {
    if z == 0 || z as usize > MAX_Z {
        return Err(ModelError::SpeciesIndexOutOfRange(z));
    }
    Ok(z as usize - 1)
}
