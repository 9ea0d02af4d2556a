//! Batched forward pass and its hand-derived reverse pass.
//!
//! Per block, with `⊕` for concatenation and `mean_w` a multiplicity
//! weighted mean:
//!
//! ```text
//! e'_k = φe(v_src ⊕ v_dst ⊕ e_k ⊕ u)
//! v'_i = φv(mean_w{e'_k : dst(k) = i} ⊕ v_i ⊕ u)
//! u'   = φu(mean_w e' ⊕ mean v' ⊕ u)
//! (v, e, u) ← (v + v', e + e', u + u')
//! ```
//!
//! The readout `mean v ⊕ mean_w e ⊕ u` feeds the head. Every φ is a softplus
//! MLP; the head uses rectifiers and a linear scalar output.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::{check_species, ModelConfig, ModelError, ParamTag, Parameters, Tensor};
use crate::elements::MAX_Z;
use crate::graph::MaterialGraph;

/// Denominator guard of the loss: `|p - t| / max(|t|, MAPE_EPSILON)`.
pub const MAPE_EPSILON: f64 = 1e-2;

/// Periodic images of one pair at the same distance (within this many Å)
/// produce identical messages and are folded into one weighted edge.
const EDGE_MERGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Softplus,
    Relu,
    Identity,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Act {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Act::Softplus => z.mapv(softplus),
            Act::Relu => z.mapv(|x| x.max(0.0)),
            Act::Identity => z.clone(),
        }
    }

    fn backprop(self, grad: &mut Array2<f64>, pre: &Array2<f64>) {
        match self {
            Act::Softplus => grad.zip_mut_with(pre, |g, &z| *g *= sigmoid(z)),
            Act::Relu => grad.zip_mut_with(pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            }),
            Act::Identity => {}
        }
    }
}

/// Tensor indices for one configuration, plus the ordered tensor specs.
pub(crate) struct Layout {
    embed_dim: usize,
    emb: usize,
    edge_proj: Dense,
    state_proj: Dense,
    blocks: Vec<[Vec<Dense>; 3]>,
    head: Vec<Dense>,
    specs: Vec<(String, ParamTag, (usize, usize))>,
}

struct LayoutBuilder {
    specs: Vec<(String, ParamTag, (usize, usize))>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, tag: ParamTag, shape: (usize, usize)) -> usize {
        self.specs.push((name, tag, shape));
        self.specs.len() - 1
    }

    fn dense(&mut self, prefix: &str, tag: ParamTag, fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            w: self.push(format!("{prefix}.w"), tag, (fan_in, fan_out)),
            b: self.push(format!("{prefix}.b"), tag, (1, fan_out)),
        }
    }

    fn mlp(&mut self, prefix: &str, tag: ParamTag, fan_in: usize, widths: &[usize]) -> Vec<Dense> {
        let mut prev = fan_in;
        let mut layers = Vec::with_capacity(widths.len());
        for (l, &w) in widths.iter().enumerate() {
            layers.push(self.dense(&format!("{prefix}.{l}"), tag, prev, w));
            prev = w;
        }
        layers
    }
}

impl Layout {
    pub(crate) fn new(config: &ModelConfig) -> Layout {
        use ParamTag::{Backbone, Head};
        let d = config.embed_dim;
        let mut b = LayoutBuilder { specs: Vec::new() };
        let emb = b.push("embedding".into(), Backbone, (MAX_Z, d));
        let edge_proj = b.dense("edge_proj", Backbone, config.n_centers, d);
        let state_proj = b.dense("state_proj", Backbone, config.state_dim, d);
        let mut widths = config.block_hidden.clone();
        widths.push(d);
        let blocks = (0..config.n_blocks)
            .map(|k| {
                [
                    b.mlp(&format!("block{k}.edge"), Backbone, 4 * d, &widths),
                    b.mlp(&format!("block{k}.node"), Backbone, 3 * d, &widths),
                    b.mlp(&format!("block{k}.state"), Backbone, 3 * d, &widths),
                ]
            })
            .collect();
        let mut head_widths = config.head_layers.clone();
        head_widths.push(1);
        let head = b.mlp("head", Head, 3 * d, &head_widths);
        Layout {
            embed_dim: d,
            emb,
            edge_proj,
            state_proj,
            blocks,
            head,
            specs: b.specs,
        }
    }

    pub(crate) fn specs(&self) -> &[(String, ParamTag, (usize, usize))] {
        &self.specs
    }

    pub(crate) fn zero_parameters(&self) -> Parameters {
        Parameters {
            tensors: self
                .specs
                .iter()
                .map(|(name, tag, shape)| Tensor {
                    name: name.clone(),
                    tag: *tag,
                    value: Array2::zeros(*shape),
                })
                .collect(),
        }
    }
}

/// A graph reduced to model inputs, with coincident periodic images of the
/// same pair merged into one edge carrying their multiplicity as weight.
/// Mean aggregations use the weights, so outputs equal those of the full
/// edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactGraph {
    species: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
    weight: Vec<f64>,
    features: Array2<f64>,
    state: Vec<f64>,
}

impl CompactGraph {
    pub fn new(graph: &MaterialGraph, config: &ModelConfig) -> Result<Self, ModelError> {
        let species = graph
            .node_species
            .iter()
            .map(|&z| check_species(z))
            .collect::<Result<Vec<_>, _>>()?;
        if graph.edge_features.ncols() != config.n_centers {
            return Err(ModelError::InputMismatch(format!(
                "{} edge features, model expects {}",
                graph.edge_features.ncols(),
                config.n_centers
            )));
        }
        if graph.state.len() != config.state_dim {
            return Err(ModelError::InputMismatch(format!(
                "state of length {}, model expects {}",
                graph.state.len(),
                config.state_dim
            )));
        }
        let n = species.len();
        if n == 0 || graph.edges.is_empty() {
            return Err(ModelError::InputMismatch("graph has no nodes or no edges".into()));
        }
        if graph.edges.iter().any(|&(a, b)| a >= n || b >= n) || graph.distances.len() != graph.edges.len() {
            return Err(ModelError::InputMismatch("edge list inconsistent with nodes".into()));
        }

        let mut order: Vec<usize> = (0..graph.edges.len()).collect();
        order.sort_by(|&x, &y| {
            graph.edges[x]
                .cmp(&graph.edges[y])
                .then(graph.distances[x].total_cmp(&graph.distances[y]))
                .then(x.cmp(&y))
        });
        let mut reps: Vec<usize> = Vec::new();
        let mut weight: Vec<f64> = Vec::new();
        for &k in &order {
            match reps.last() {
                Some(&r)
                    if graph.edges[r] == graph.edges[k]
                        && (graph.distances[k] - graph.distances[r]).abs() <= EDGE_MERGE_TOLERANCE =>
                {
                    *weight.last_mut().expect("paired with reps") += 1.0;
                }
                _ => {
                    reps.push(k);
                    weight.push(1.0);
                }
            }
        }
        Ok(CompactGraph {
            species,
            src: reps.iter().map(|&k| graph.edges[k].0).collect(),
            dst: reps.iter().map(|&k| graph.edges[k].1).collect(),
            weight,
            features: graph.edge_features.select(Axis(0), &reps),
            state: graph.state.clone(),
        })
    }

    pub fn n_unique_edges(&self) -> usize {
        self.src.len()
    }
}

/// Several compact graphs laid out as one disjoint union.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    n_graphs: usize,
    species: Vec<usize>,
    node_graph: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
    weight: Vec<f64>,
    edge_graph: Vec<usize>,
    features: Array2<f64>,
    state: Array2<f64>,
    /// 1 / node count, per graph.
    inv_nodes: Vec<f64>,
    /// 1 / total edge weight, per graph.
    inv_edge_weight: Vec<f64>,
    /// 1 / total incoming edge weight per node, or 0 without incoming edges.
    inv_in_weight: Vec<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&CompactGraph]) -> GraphBatch {
        let n_nodes: usize = graphs.iter().map(|g| g.species.len()).sum();
        let n_edges: usize = graphs.iter().map(|g| g.src.len()).sum();
        let k = graphs.first().map_or(0, |g| g.features.ncols());
        let sd = graphs.first().map_or(0, |g| g.state.len());
        let mut b = GraphBatch {
            n_graphs: graphs.len(),
            species: Vec::with_capacity(n_nodes),
            node_graph: Vec::with_capacity(n_nodes),
            src: Vec::with_capacity(n_edges),
            dst: Vec::with_capacity(n_edges),
            weight: Vec::with_capacity(n_edges),
            edge_graph: Vec::with_capacity(n_edges),
            features: Array2::zeros((n_edges, k)),
            state: Array2::zeros((graphs.len(), sd)),
            inv_nodes: Vec::with_capacity(graphs.len()),
            inv_edge_weight: Vec::with_capacity(graphs.len()),
            inv_in_weight: vec![0.0; n_nodes],
        };
        let mut node_off = 0;
        let mut edge_off = 0;
        for (gi, g) in graphs.iter().enumerate() {
            b.species.extend(&g.species);
            b.node_graph.extend(std::iter::repeat_n(gi, g.species.len()));
            b.src.extend(g.src.iter().map(|&x| x + node_off));
            b.dst.extend(g.dst.iter().map(|&x| x + node_off));
            b.weight.extend(&g.weight);
            b.edge_graph.extend(std::iter::repeat_n(gi, g.src.len()));
            b.features
                .slice_mut(s![edge_off..edge_off + g.src.len(), ..])
                .assign(&g.features);
            b.state.row_mut(gi).iter_mut().zip(&g.state).for_each(|(o, &x)| *o = x);
            b.inv_nodes.push(1.0 / g.species.len() as f64);
            b.inv_edge_weight.push(1.0 / g.weight.iter().sum::<f64>());
            node_off += g.species.len();
            edge_off += g.src.len();
        }
        for (&d, &w) in b.dst.iter().zip(&b.weight) {
            b.inv_in_weight[d] += w;
        }
        for x in &mut b.inv_in_weight {
            if *x > 0.0 {
                *x = 1.0 / *x;
            }
        }
        b
    }

    pub fn n_graphs(&self) -> usize {
        self.n_graphs
    }
}

struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

struct BlockTape {
    edge: Vec<LayerCache>,
    node: Vec<LayerCache>,
    state: Vec<LayerCache>,
}

struct Tape {
    edge_proj: Vec<LayerCache>,
    state_proj: Vec<LayerCache>,
    blocks: Vec<BlockTape>,
    head: Vec<LayerCache>,
}

/// Borrowed view of a parameter set with its layout resolved.
pub struct Network<'a> {
    layout: Layout,
    params: &'a Parameters,
}

fn gather_rows(src: &Array2<f64>, idx: &[usize], out: &mut ndarray::ArrayViewMut2<f64>) {
    for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
        row.assign(&src.row(i));
    }
}

fn scatter_add_rows(from: &ArrayView2<f64>, idx: &[usize], scale: impl Fn(usize) -> f64, into: &mut Array2<f64>) {
    for (k, (row, &i)) in from.rows().into_iter().zip(idx).enumerate() {
        let c = scale(k);
        into.row_mut(i).scaled_add(c, &row);
    }
}

impl<'a> Network<'a> {
    pub fn new(config: &ModelConfig, params: &'a Parameters) -> Network<'a> {
        Network {
            layout: Layout::new(config),
            params,
        }
    }

    fn p(&self, i: usize) -> &Array2<f64> {
        &self.params.tensors[i].value
    }

    fn mlp_forward(&self, layers: &[Dense], mut x: Array2<f64>, hidden: Act, last: Act, tape: Option<&mut Vec<LayerCache>>) -> Array2<f64> {
        let mut caches = Vec::new();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = x.dot(self.p(layer.w));
            z += &self.p(layer.b).row(0);
            let act = if l + 1 == layers.len() { last } else { hidden };
            let a = act.apply(&z);
            if tape.is_some() {
                caches.push(LayerCache { input: x, pre: z });
            }
            x = a;
        }
        if let Some(t) = tape {
            *t = caches;
        }
        x
    }

    fn mlp_backward(
        &self,
        layers: &[Dense],
        caches: &[LayerCache],
        hidden: Act,
        last: Act,
        mut grad: Array2<f64>,
        grads: &mut Parameters,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        for (l, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
            let act = if l + 1 == layers.len() { last } else { hidden };
            act.backprop(&mut grad, &cache.pre);
            general_mat_mul(1.0, &cache.input.t(), &grad, 1.0, &mut grads.tensors[layer.w].value);
            grads.tensors[layer.b].value.row_mut(0).scaled_add(1.0, &grad.sum_axis(Axis(0)));
            if l > 0 || need_input {
                grad = grad.dot(&self.p(layer.w).t());
            }
        }
        need_input.then_some(grad)
    }

    fn run(&self, batch: &GraphBatch, mut tape: Option<&mut Tape>) -> Vec<f64> {
        let d = self.layout.embed_dim;
        let (n, m, g) = (batch.species.len(), batch.src.len(), batch.n_graphs);

        let mut v = Array2::zeros((n, d));
        gather_rows(self.p(self.layout.emb), &batch.species, &mut v.view_mut());
        let mut e = self.mlp_forward(
            &[self.layout.edge_proj],
            batch.features.clone(),
            Act::Softplus,
            Act::Softplus,
            tape.as_deref_mut().map(|t| &mut t.edge_proj),
        );
        let mut u = self.mlp_forward(
            &[self.layout.state_proj],
            batch.state.clone(),
            Act::Softplus,
            Act::Softplus,
            tape.as_deref_mut().map(|t| &mut t.state_proj),
        );

        for nets in &self.layout.blocks {
            let mut bt = tape.as_ref().map(|_| BlockTape {
                edge: Vec::new(),
                node: Vec::new(),
                state: Vec::new(),
            });

            let mut xe = Array2::zeros((m, 4 * d));
            gather_rows(&v, &batch.src, &mut xe.slice_mut(s![.., 0..d]));
            gather_rows(&v, &batch.dst, &mut xe.slice_mut(s![.., d..2 * d]));
            xe.slice_mut(s![.., 2 * d..3 * d]).assign(&e);
            gather_rows(&u, &batch.edge_graph, &mut xe.slice_mut(s![.., 3 * d..4 * d]));
            let e_new = self.mlp_forward(&nets[0], xe, Act::Softplus, Act::Softplus, bt.as_mut().map(|t| &mut t.edge));

            let mut xv = Array2::zeros((n, 3 * d));
            {
                let mut agg = xv.slice_mut(s![.., 0..d]);
                for (k, row) in e_new.rows().into_iter().enumerate() {
                    let i = batch.dst[k];
                    agg.row_mut(i).scaled_add(batch.weight[k] * batch.inv_in_weight[i], &row);
                }
            }
            xv.slice_mut(s![.., d..2 * d]).assign(&v);
            gather_rows(&u, &batch.node_graph, &mut xv.slice_mut(s![.., 2 * d..3 * d]));
            let v_new = self.mlp_forward(&nets[1], xv, Act::Softplus, Act::Softplus, bt.as_mut().map(|t| &mut t.node));

            let mut xu = Array2::zeros((g, 3 * d));
            {
                let mut me = xu.slice_mut(s![.., 0..d]);
                for (k, row) in e_new.rows().into_iter().enumerate() {
                    let gi = batch.edge_graph[k];
                    me.row_mut(gi).scaled_add(batch.weight[k] * batch.inv_edge_weight[gi], &row);
                }
            }
            {
                let mut mv = xu.slice_mut(s![.., d..2 * d]);
                for (i, row) in v_new.rows().into_iter().enumerate() {
                    let gi = batch.node_graph[i];
                    mv.row_mut(gi).scaled_add(batch.inv_nodes[gi], &row);
                }
            }
            xu.slice_mut(s![.., 2 * d..3 * d]).assign(&u);
            let u_new = self.mlp_forward(&nets[2], xu, Act::Softplus, Act::Softplus, bt.as_mut().map(|t| &mut t.state));

            v += &v_new;
            e += &e_new;
            u += &u_new;
            if let (Some(t), Some(bt)) = (tape.as_deref_mut(), bt) {
                t.blocks.push(bt);
            }
        }

        let mut r = Array2::zeros((g, 3 * d));
        for (i, row) in v.rows().into_iter().enumerate() {
            let gi = batch.node_graph[i];
            r.slice_mut(s![gi, 0..d]).scaled_add(batch.inv_nodes[gi], &row);
        }
        for (k, row) in e.rows().into_iter().enumerate() {
            let gi = batch.edge_graph[k];
            r.slice_mut(s![gi, d..2 * d]).scaled_add(batch.weight[k] * batch.inv_edge_weight[gi], &row);
        }
        r.slice_mut(s![.., 2 * d..3 * d]).assign(&u);
        let out = self.mlp_forward(&self.layout.head, r, Act::Relu, Act::Identity, tape.map(|t| &mut t.head));
        out.column(0).to_vec()
    }

    pub fn predict(&self, batch: &GraphBatch) -> Vec<f64> {
        self.run(batch, None)
    }

    /// Loss `mean |p - t| / max(|t|, MAPE_EPSILON)`, its gradient, and the
    /// predictions. The guard is a constant denominator; `sign(0) = 0`.
    pub fn loss_and_gradients(&self, batch: &GraphBatch, targets: &[f64]) -> (f64, Parameters, Vec<f64>) {
        assert_eq!(targets.len(), batch.n_graphs, "one target per graph");
        let mut tape = Tape {
            edge_proj: Vec::new(),
            state_proj: Vec::new(),
            blocks: Vec::new(),
            head: Vec::new(),
        };
        let preds = self.run(batch, Some(&mut tape));
        let bsz = targets.len() as f64;
        let mut loss = 0.0;
        let mut dy = Array2::zeros((targets.len(), 1));
        for (k, (&p, &t)) in preds.iter().zip(targets).enumerate() {
            let den = t.abs().max(MAPE_EPSILON);
            loss += (p - t).abs() / den;
            let sign = if p > t {
                1.0
            } else if p < t {
                -1.0
            } else {
                0.0
            };
            dy[[k, 0]] = sign / (den * bsz);
        }
        loss /= bsz;

        let mut grads = self.params.zeros_like();
        let d = self.layout.embed_dim;
        let (n, m) = (batch.species.len(), batch.src.len());
        let dr = self
            .mlp_backward(&self.layout.head, &tape.head, Act::Relu, Act::Identity, dy, &mut grads, true)
            .expect("input gradient requested");

        let mut dv = Array2::<f64>::zeros((n, d));
        let mut de = Array2::<f64>::zeros((m, d));
        let mut du = dr.slice(s![.., 2 * d..3 * d]).to_owned();
        for i in 0..n {
            let gi = batch.node_graph[i];
            dv.row_mut(i).scaled_add(batch.inv_nodes[gi], &dr.slice(s![gi, 0..d]));
        }
        for k in 0..m {
            let gi = batch.edge_graph[k];
            de.row_mut(k)
                .scaled_add(batch.weight[k] * batch.inv_edge_weight[gi], &dr.slice(s![gi, d..2 * d]));
        }

        for (nets, bt) in self.layout.blocks.iter().zip(&tape.blocks).rev() {
            let dxu = self
                .mlp_backward(&nets[2], &bt.state, Act::Softplus, Act::Softplus, du.clone(), &mut grads, true)
                .expect("input gradient requested");
            du += &dxu.slice(s![.., 2 * d..3 * d]);

            let mut dv_new = dv.clone();
            let dmv = dxu.slice(s![.., d..2 * d]);
            for i in 0..n {
                let gi = batch.node_graph[i];
                dv_new.row_mut(i).scaled_add(batch.inv_nodes[gi], &dmv.row(gi));
            }
            let mut de_new = de.clone();
            let dme = dxu.slice(s![.., 0..d]);
            for k in 0..m {
                let gi = batch.edge_graph[k];
                de_new.row_mut(k).scaled_add(batch.weight[k] * batch.inv_edge_weight[gi], &dme.row(gi));
            }

            let dxv = self
                .mlp_backward(&nets[1], &bt.node, Act::Softplus, Act::Softplus, dv_new, &mut grads, true)
                .expect("input gradient requested");
            dv += &dxv.slice(s![.., d..2 * d]);
            scatter_add_rows(&dxv.slice(s![.., 2 * d..3 * d]), &batch.node_graph, |_| 1.0, &mut du);
            let dagg = dxv.slice(s![.., 0..d]);
            for k in 0..m {
                let i = batch.dst[k];
                de_new.row_mut(k).scaled_add(batch.weight[k] * batch.inv_in_weight[i], &dagg.row(i));
            }

            let dxe = self
                .mlp_backward(&nets[0], &bt.edge, Act::Softplus, Act::Softplus, de_new, &mut grads, true)
                .expect("input gradient requested");
            scatter_add_rows(&dxe.slice(s![.., 0..d]), &batch.src, |_| 1.0, &mut dv);
            scatter_add_rows(&dxe.slice(s![.., d..2 * d]), &batch.dst, |_| 1.0, &mut dv);
            de += &dxe.slice(s![.., 2 * d..3 * d]);
            scatter_add_rows(&dxe.slice(s![.., 3 * d..4 * d]), &batch.edge_graph, |_| 1.0, &mut du);
        }

        self.mlp_backward(&[self.layout.edge_proj], &tape.edge_proj, Act::Softplus, Act::Softplus, de, &mut grads, false);
        self.mlp_backward(&[self.layout.state_proj], &tape.state_proj, Act::Softplus, Act::Softplus, du, &mut grads, false);
        scatter_add_rows(&dv.view(), &batch.species, |_| 1.0, &mut grads.tensors[self.layout.emb].value);

        (loss, grads, preds)
    }
}
