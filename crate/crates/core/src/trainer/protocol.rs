use rayon::prelude::*;

use super::{canonical_hyperparameters, compact_all, fingerprint, train_one, train_targets, RunRecord, TrainConfig, TrainError};
use crate::data::{make_splits, GraphDataset, TargetTransform};
use crate::elements::electronegativity;
use crate::graph::MaterialGraph;
use crate::model::{init_random, ModelConfig, ModelState};

/// Lineage part of a provenance string: `step2: proxy→lowfid | split 4`
/// gives `proxy→lowfid`.
fn lineage(provenance: &str) -> &str {
    let p = provenance.split(" | ").next().unwrap_or("");
    p.split_once(": ").map_or(p, |(_, rest)| rest)
}

fn run_fingerprint(data: &GraphDataset, model: &ModelConfig, config: &TrainConfig) -> String {
    let graph = data.graphs.first().map(|g| g.config).unwrap_or_default();
    fingerprint(&canonical_hyperparameters(config, model, &graph))
}

/// Trains one model per split of `data`, starting each from `initial(i)`
/// with a transform refitted on that split's training rows.
fn run_splits<F>(data: &GraphDataset, config: &TrainConfig, fp: &str, initial: F) -> Result<Vec<RunRecord>, TrainError>
where
    F: Fn(usize) -> Result<ModelState, TrainError> + Sync,
{
    config.validate()?;
    let plan = make_splits(data.len(), config.seed)?;
    plan.splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let train = data.subset(&split.train);
            let val = data.subset(&split.validation);
            let mut init = initial(i)?;
            init.transform = Some(TargetTransform::fit(train.ltc.iter().copied(), &data.name)?);
            let mut r = train_one(&init, &train, &val, config)?;
            r.split = i;
            r.fingerprint = fp.to_string();
            Ok(r)
        })
        .collect()
}

/// Step 1: random initialization on every split.
pub fn run_step1(data: &GraphDataset, model: &ModelConfig, config: &TrainConfig) -> Result<Vec<RunRecord>, TrainError> {
    let fp = run_fingerprint(data, model, config);
    run_splits(data, config, &fp, |i| {
        let mut s = init_random(model, config.seed)?;
        s.provenance = format!("step1: scratch→{} | split {i}", data.name);
        Ok(s)
    })
}

/// Step 2: backbone from `donor`, freshly drawn head.
pub fn run_step2(
    data: &GraphDataset,
    donor: &ModelState,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<RunRecord>, TrainError> {
    let fp = run_fingerprint(data, model, config);
    let base = init_random(model, config.seed)?.load_backbone(donor)?.reinit_head(config.seed);
    run_splits(data, config, &fp, |i| {
        let mut s = base.clone();
        s.provenance = format!("step2: {}→{} | split {i}", lineage(&donor.provenance), data.name);
        Ok(s)
    })
}

/// Lowest best-epoch validation MAPE; the lowest split index wins ties.
pub fn select_best(records: &[RunRecord]) -> Option<&RunRecord> {
    let mut best: Option<&RunRecord> = None;
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.split);
    for r in sorted {
        if best.is_none_or(|b| r.best_val_mape() < b.best_val_mape()) {
            best = Some(r);
        }
    }
    best
}

/// Step 3 from an already fine-tuned start model: every split continues
/// from `start`, head included.
pub fn run_step3_from(data: &GraphDataset, start: &ModelState, config: &TrainConfig) -> Result<Vec<RunRecord>, TrainError> {
    let fp = run_fingerprint(data, &start.config, config);
    run_splits(data, config, &fp, |i| {
        let mut s = start.clone();
        s.provenance = format!("step3: {}→{} | split {i}", lineage(&start.provenance), data.name);
        Ok(s)
    })
}

/// Step 3: fine-tune `donor` on `low_fidelity` over its own splits, pick the
/// best of those runs, then continue from it on every split of `data`.
/// Returns the low-fidelity runs and the target runs.
pub fn run_step3(
    data: &GraphDataset,
    donor: &ModelState,
    low_fidelity: &GraphDataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Vec<RunRecord>, Vec<RunRecord>), TrainError> {
    let low = run_step2(low_fidelity, donor, model, config)?;
    let best = select_best(&low).expect("nine runs");
    let target = run_step3_from(data, &best.best_state, config)?;
    Ok((low, target))
}

/// Formation-energy-like proxy: `ln(mean bond length) - 2 · mean_i |χ_i - χ̄|`
/// over Pauling electronegativities χ of the nodes.
pub fn proxy_target(graph: &MaterialGraph) -> f64 {
    let chi: Vec<f64> = graph
        .node_species
        .iter()
        .map(|&z| electronegativity(z).unwrap_or(0.0))
        .collect();
    let mean = chi.iter().sum::<f64>() / chi.len() as f64;
    let spread = chi.iter().map(|x| (x - mean).abs()).sum::<f64>() / chi.len() as f64;
    let bond = graph.distances.iter().sum::<f64>() / graph.distances.len() as f64;
    bond.ln() - 2.0 * spread
}

/// Trains a full model on the standardized proxy target over `corpus`,
/// validating on the first split. The returned model is the best epoch,
/// with provenance `proxy`.
pub fn pretrain_backbone_proxy(
    corpus: &GraphDataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<ModelState, TrainError> {
    config.validate()?;
    let raw: Vec<f64> = corpus.graphs.iter().map(proxy_target).collect();
    let n = raw.len() as f64;
    let mu = raw.iter().sum::<f64>() / n;
    let sigma = (raw.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    if !(sigma > 0.0) {
        return Err(crate::data::DataError::DegenerateSigma.into());
    }
    let y: Vec<f64> = raw.iter().map(|x| (x - mu) / sigma).collect();
    let split = &make_splits(corpus.len(), config.seed)?.splits[0];
    let mut init = init_random(model, config.seed)?;
    init.provenance = "proxy".to_string();
    let graphs = compact_all(corpus, model)?;
    let pick = |idx: &[usize]| {
        (
            idx.iter().map(|&i| graphs[i].clone()).collect::<Vec<_>>(),
            idx.iter().map(|&i| y[i]).collect::<Vec<_>>(),
        )
    };
    let (tg, ty) = pick(&split.train);
    let (vg, vy) = pick(&split.validation);
    let r = train_targets(&init, &tg, &ty, &vg, &vy, config)?;
    Ok(r.best_state)
}
