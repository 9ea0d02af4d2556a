//! Crystal graphs: one node per site, one directed edge per periodic
//! neighbor pair, Gaussian-expanded distances as edge features and a global
//! state vector.

use std::fmt::Write as _;

use ndarray::Array2;
use thiserror::Error;

use crate::crystal::{neighbors_within, CrystalError, CrystalStructure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no neighbors within {cutoff} Å in {source_id} (cutoff too small)")]
    NoEdgesWithinCutoff { source_id: String, cutoff: f64 },
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error("graph text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Crystal(#[from] CrystalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub cutoff: f64,
    pub n_centers: usize,
    pub center_max: f64,
    pub width: f64,
    pub state_dim: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            cutoff: 4.0,
            n_centers: 100,
            center_max: 5.0,
            width: 0.5,
            state_dim: 2,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidConfig(m.to_string()));
        if !(self.cutoff > 0.0) {
            return bad("cutoff must be positive");
        }
        if self.n_centers < 2 {
            return bad("n_centers must be at least 2");
        }
        if !(self.width > 0.0) {
            return bad("width must be positive");
        }
        if !(self.center_max >= self.cutoff) {
            return bad("center_max must be at least the cutoff");
        }
        Ok(())
    }

    pub fn center(&self, k: usize) -> f64 {
        self.center_max * k as f64 / (self.n_centers - 1) as f64
    }

    fn expand_into(&self, d: f64, out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.width * self.width);
        for (k, o) in out.iter_mut().enumerate() {
            let x = d - self.center(k);
            *o = (-x * x * inv).exp();
        }
    }
}

/// Gaussian basis expansion of a distance: component `k` is
/// `exp(-(d - mu_k)^2 / (2 width^2))` with centers evenly spaced on
/// `[0, center_max]`.
pub fn expand_distance(d: f64, config: &GraphConfig) -> Result<Vec<f64>, GraphError> {
    if !(d >= 0.0) {
        return Err(GraphError::NegativeDistance(d));
    }
    let mut out = vec![0.0; config.n_centers];
    config.expand_into(d, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGraph {
    pub config: GraphConfig,
    /// Atomic number per node.
    pub node_species: Vec<u8>,
    pub edges: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    /// `edges.len() × n_centers`.
    pub edge_features: Array2<f64>,
    pub state: Vec<f64>,
    pub source_id: String,
}

impl MaterialGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_species.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    fn from_parts(
        config: GraphConfig,
        node_species: Vec<u8>,
        edges: Vec<(usize, usize)>,
        distances: Vec<f64>,
        source_id: String,
    ) -> Result<Self, GraphError> {
        if edges.is_empty() {
            return Err(GraphError::NoEdgesWithinCutoff {
                source_id,
                cutoff: config.cutoff,
            });
        }
        let mut edge_features = Array2::zeros((edges.len(), config.n_centers));
        for (mut row, &d) in edge_features.rows_mut().into_iter().zip(&distances) {
            if !(d >= 0.0) {
                return Err(GraphError::NegativeDistance(d));
            }
            config.expand_into(d, row.as_slice_mut().expect("standard layout"));
        }
        Ok(MaterialGraph {
            config,
            node_species,
            edges,
            distances,
            edge_features,
            state: vec![0.0; config.state_dim],
            source_id,
        })
    }
}

pub fn build_graph(structure: &CrystalStructure, config: &GraphConfig) -> Result<MaterialGraph, GraphError> {
    config.validate()?;
    let pairs = neighbors_within(structure, config.cutoff)?;
    MaterialGraph::from_parts(
        *config,
        structure.sites().iter().map(|s| s.species()).collect(),
        pairs.iter().map(|p| (p.src, p.dst)).collect(),
        pairs.iter().map(|p| p.distance).collect(),
        structure.source_id().to_string(),
    )
}

const HEADER: &str = "# paraisite graph v1";

/// Line-oriented text form: header, source id, config echo, state, then
/// `nodes N` followed by one atomic number per line and `edges M` followed
/// by `src dst distance` lines. Features are recomputed on read.
pub fn write_graph_text(g: &MaterialGraph) -> String {
    let c = &g.config;
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "source_id {}", g.source_id);
    let _ = writeln!(
        out,
        "config cutoff={} n_centers={} center_max={} width={} state_dim={}",
        c.cutoff, c.n_centers, c.center_max, c.width, c.state_dim
    );
    let state: Vec<String> = g.state.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(out, "state {}", state.join(" "));
    let _ = writeln!(out, "nodes {}", g.n_nodes());
    for z in &g.node_species {
        let _ = writeln!(out, "{z}");
    }
    let _ = writeln!(out, "edges {}", g.n_edges());
    for (&(s, d), dist) in g.edges.iter().zip(&g.distances) {
        let _ = writeln!(out, "{s} {d} {dist}");
    }
    out
}

pub fn read_graph_text(text: &str) -> Result<MaterialGraph, GraphError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| GraphError::Parse {
            line: 0,
            msg: format!("unexpected end of input, expected {what}"),
        })
    };
    let err = |line: usize, msg: String| GraphError::Parse { line: line + 1, msg };

    let (n, l) = next("header")?;
    if l.trim() != HEADER {
        return Err(err(n, format!("bad header {l:?}")));
    }
    let (n, l) = next("source_id")?;
    let source_id = l
        .strip_prefix("source_id ")
        .ok_or_else(|| err(n, "expected source_id".into()))?
        .to_string();

    let (n, l) = next("config")?;
    let mut config = GraphConfig::default();
    for kv in l.strip_prefix("config ").ok_or_else(|| err(n, "expected config".into()))?.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(n, format!("bad config item {kv:?}")))?;
        let bad = |_| err(n, format!("bad value for {k}"));
        match k {
            "cutoff" => config.cutoff = v.parse().map_err(bad)?,
            "center_max" => config.center_max = v.parse().map_err(bad)?,
            "width" => config.width = v.parse().map_err(bad)?,
            "n_centers" => config.n_centers = v.parse().map_err(|_| err(n, format!("bad value for {k}")))?,
            "state_dim" => config.state_dim = v.parse().map_err(|_| err(n, format!("bad value for {k}")))?,
            _ => return Err(err(n, format!("unknown config key {k}"))),
        }
    }
    config.validate()?;

    let (n, l) = next("state")?;
    let state = l
        .strip_prefix("state")
        .ok_or_else(|| err(n, "expected state".into()))?
        .split_whitespace()
        .map(|x| x.parse::<f64>().map_err(|_| err(n, format!("bad state value {x:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if state.len() != config.state_dim {
        return Err(err(n, "state length differs from state_dim".into()));
    }

    let count = |n: usize, l: &str, key: &str| -> Result<usize, GraphError> {
        l.strip_prefix(key)
            .and_then(|x| x.trim().parse().ok())
            .ok_or_else(|| err(n, format!("expected `{key} N`")))
    };
    let (n, l) = next("nodes")?;
    let n_nodes = count(n, l, "nodes")?;
    let mut node_species = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (n, l) = next("node")?;
        node_species.push(l.trim().parse().map_err(|_| err(n, format!("bad node {l:?}")))?);
    }
    let (n, l) = next("edges")?;
    let n_edges = count(n, l, "edges")?;
    let mut edges = Vec::with_capacity(n_edges);
    let mut distances = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (n, l) = next("edge")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse::<usize>().ok()?, f[1].parse::<usize>().ok()?, f[2].parse::<f64>().ok()?)))
            .flatten()
            .ok_or_else(|| err(n, format!("bad edge {l:?}")))?;
        if parsed.0 >= n_nodes || parsed.1 >= n_nodes {
            return Err(err(n, "edge endpoint out of range".into()));
        }
        edges.push((parsed.0, parsed.1));
        distances.push(parsed.2);
    }
    let mut g = MaterialGraph::from_parts(config, node_species, edges, distances, source_id)?;
    g.state = state;
    Ok(g)
}
