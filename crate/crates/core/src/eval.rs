//! MAPE on both target scales, aggregation over the split models, the
//! train-on/test-on matrix and loss-curve export.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{GraphDataset, TargetTransform};
use crate::model::{ModelError, ModelState};
use crate::trainer::RunRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("no values to evaluate")]
    EmptyInput,
    #[error("records have different epoch counts ({0} vs {1})")]
    InconsistentEpochCounts(usize, usize),
    #[error("model {0} carries no target transform")]
    MissingTransform(usize),
    #[error("{material_id}: {source}")]
    Model {
        material_id: String,
        #[source]
        source: ModelError,
    },
}

/// `mean |p - t| / max(|t|, epsilon)`.
pub fn mape(preds: &[f64], targets: &[f64], epsilon: f64) -> Result<f64, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs() / t.abs().max(epsilon))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        // shifted by the first value so identical inputs give exactly zero spread
        let x0 = values.first().copied().unwrap_or(f64::NAN);
        let mean = x0 + values.iter().map(|x| x - x0).sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

/// Table-style cell: `0.50 (0.10)`.
impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub step: String,
    pub train_dataset: String,
    pub test_dataset: String,
    pub mape_transformed: Stat,
    pub mape_raw: Stat,
    pub n_models: usize,
}

/// Per-model MAPE on both scales from predictions already made.
/// `preds[i]` are model `i`'s outputs (transformed by `transforms[i]`) for
/// rows whose raw targets are `raw_targets[i]`. The transformed scale maps
/// the raw targets through the model's transform; the raw scale inverts the
/// predictions instead. The guard applies on the transformed scale only.
pub fn evaluate_predictions(
    preds: &[Vec<f64>],
    transforms: &[TargetTransform],
    raw_targets: &[Vec<f64>],
    epsilon: f64,
) -> Result<(Stat, Stat), EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut transformed = Vec::with_capacity(preds.len());
    let mut raw = Vec::with_capacity(preds.len());
    for ((p, tr), t) in preds.iter().zip(transforms).zip(raw_targets) {
        let t_model: Vec<f64> = t.iter().map(|&k| tr.apply(k)).collect();
        transformed.push(mape(p, &t_model, epsilon)?);
        let p_raw: Vec<f64> = p.iter().map(|&y| tr.invert(y)).collect();
        raw.push(mape(&p_raw, t, 0.0)?);
    }
    Ok((Stat::of(&transformed), Stat::of(&raw)))
}

/// Evaluates every model on `test`. With `rows`, model `i` sees only the
/// rows `rows[i]` of `test`; otherwise all of it.
pub fn cross_eval(
    step: &str,
    models: &[ModelState],
    test: &GraphDataset,
    rows: Option<&[Vec<usize>]>,
) -> Result<EvalResult, EvalError> {
    let all: Vec<usize> = (0..test.len()).collect();
    let mut preds = Vec::with_capacity(models.len());
    let mut transforms = Vec::with_capacity(models.len());
    let mut targets = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let idx = rows.map_or(&all, |r| &r[i]);
        let graphs: Vec<_> = idx.iter().map(|&j| &test.graphs[j]).collect();
        let p = m.predict(&graphs).map_err(|source| {
            // locate the offending row for the message
            let bad = idx.iter().find(|&&j| m.forward(&test.graphs[j]).is_err());
            EvalError::Model {
                material_id: bad.map_or_else(String::new, |&j| test.material_ids[j].clone()),
                source,
            }
        })?;
        preds.push(p);
        transforms.push(m.transform.clone().ok_or(EvalError::MissingTransform(i))?);
        targets.push(idx.iter().map(|&j| test.ltc[j]).collect());
    }
    let (t, r) = evaluate_predictions(&preds, &transforms, &targets, crate::model::MAPE_EPSILON)?;
    Ok(EvalResult {
        step: step.to_string(),
        train_dataset: transforms.first().map(|t| t.dataset_name.clone()).unwrap_or_default(),
        test_dataset: test.name.clone(),
        mape_transformed: t,
        mape_raw: r,
        n_models: models.len(),
    })
}

/// Per-epoch mean and population std over runs:
/// `epoch,mean_val_mape,std_val_mape,mean_train_mape,std_train_mape`.
pub fn export_curves(records: &[RunRecord]) -> Result<String, EvalError> {
    let first = records.first().ok_or(EvalError::EmptyInput)?;
    let epochs = first.val_mape.len();
    for r in records {
        if r.val_mape.len() != epochs || r.train_mape.len() != epochs {
            return Err(EvalError::InconsistentEpochCounts(epochs, r.val_mape.len()));
        }
    }
    let mut s = String::from("epoch,mean_val_mape,std_val_mape,mean_train_mape,std_train_mape\n");
    for e in 0..epochs {
        let v = Stat::of(&records.iter().map(|r| r.val_mape[e]).collect::<Vec<_>>());
        let t = Stat::of(&records.iter().map(|r| r.train_mape[e]).collect::<Vec<_>>());
        let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", e + 1, v.mean, v.std, t.mean, t.std);
    }
    Ok(s)
}

pub const MATRIX_HEADER: &str = "step,train_on,test_on,scale,mape_mean,mape_std";

/// Long-form CSV with one row per cell and scale.
pub fn matrix_csv(cells: &[EvalResult]) -> String {
    let mut s = format!("{MATRIX_HEADER}\n");
    for c in cells {
        for (scale, st) in [("transformed", c.mape_transformed), ("raw", c.mape_raw)] {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{:?}",
                c.step, c.train_dataset, c.test_dataset, scale, st.mean, st.std
            );
        }
    }
    s
}

/// Train-on rows by test-on columns, one table per scale, in the order
/// datasets first appear in `cells`.
pub fn matrix_text(cells: &[EvalResult]) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for c in cells {
        if !rows.contains(&c.train_dataset.as_str()) {
            rows.push(&c.train_dataset);
        }
        if !cols.contains(&c.test_dataset.as_str()) {
            cols.push(&c.test_dataset);
        }
    }
    let width = cols.iter().chain(&rows).map(|s| s.len()).max().unwrap_or(0).max(14) + 2;
    let mut s = String::new();
    let step = cells.first().map_or("", |c| c.step.as_str());
    for (scale, pick) in [
        ("transformed scale", (|c: &EvalResult| c.mape_transformed) as fn(&EvalResult) -> Stat),
        ("raw scale (W/mK)", |c: &EvalResult| c.mape_raw),
    ] {
        let _ = writeln!(s, "{step} MAPE, {scale}, mean (std) over models");
        let _ = write!(s, "{:<width$}", "train \\ test");
        for c in &cols {
            let _ = write!(s, "{c:>width$}");
        }
        s.push('\n');
        for r in &rows {
            let _ = write!(s, "{r:<width$}");
            for c in &cols {
                let cell = cells
                    .iter()
                    .find(|x| x.train_dataset == *r && x.test_dataset == *c)
                    .map_or_else(|| "-".to_string(), |x| pick(x).to_string());
                let _ = write!(s, "{cell:>width$}");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
