//! Datasets: manifests, target transforms, split plans, dataset mixing and
//! the two-fidelity synthetic generator.

mod split;
mod synth;
mod transform;

pub use split::{make_splits, Split, SplitPlan, N_SPLITS};
pub use synth::{
    ground_truth_ln_k, rock_salt_primitive, synth_generate, synth_generate_with, SynthDataset, SynthEntry, SynthOptions,
    HIGH_FIDELITY_NOISE, LOW_FIDELITY_BIAS, LOW_FIDELITY_NOISE,
};
pub use transform::TargetTransform;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::crystal::CrystalStructure;
use crate::graph::{build_graph, GraphConfig, GraphError, MaterialGraph};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("material {material_id}: LTC {value} is not positive")]
    NonPositiveLtc { material_id: String, value: f64 },
    #[error("duplicate material id {0}")]
    DuplicateId(String),
    #[error("manifest is missing column {0}")]
    MissingColumn(String),
    #[error("material {material_id}: structure file {path} not found")]
    MissingStructure { material_id: String, path: String },
    #[error("material {0} appears with different LTC values")]
    ConflictingDuplicate(String),
    #[error("all targets are identical; standard deviation is zero")]
    DegenerateSigma,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {0} rows; at least 5 are needed for splitting")]
    DatasetTooSmall(usize),
    #[error("material {material_id}: {source}")]
    Structure {
        material_id: String,
        #[source]
        source: GraphError,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub material_id: String,
    pub structure_path: PathBuf,
    /// Lattice thermal conductivity in W/mK.
    pub ltc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub role: Fidelity,
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_HEADER: [&str; 3] = ["material_id", "structure_path", "ltc_w_per_mk"];

impl DatasetManifest {
    pub fn new(name: impl Into<String>, role: Fidelity, rows: Vec<ManifestRow>) -> Result<Self, DataError> {
        let mut seen = HashMap::new();
        for row in &rows {
            if !(row.ltc > 0.0) || !row.ltc.is_finite() {
                return Err(DataError::NonPositiveLtc {
                    material_id: row.material_id.clone(),
                    value: row.ltc,
                });
            }
            if seen.insert(row.material_id.as_str(), ()).is_some() {
                return Err(DataError::DuplicateId(row.material_id.clone()));
            }
        }
        Ok(DatasetManifest {
            name: name.into(),
            role,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ltc_range(&self) -> Option<(f64, f64)> {
        let mut it = self.rows.iter().map(|r| r.ltc);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    pub fn with_role(mut self, role: Fidelity) -> Self {
        self.role = role;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Writes the CSV with structure paths relative to the manifest's
    /// directory where possible.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).map_err(|e| DataError::io(path, e))?;
        for r in &self.rows {
            let rel = r.structure_path.strip_prefix(base).unwrap_or(&r.structure_path);
            w.write_record([r.material_id.as_str(), &rel.to_string_lossy(), &format!("{:?}", r.ltc)])
                .map_err(|e| DataError::io(path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| DataError::io(path, e))?;
        crate::io::write_atomic(path, &bytes).map_err(|e| DataError::io(path, e))
    }
}

/// Reads a `material_id,structure_path,ltc_w_per_mk` CSV. Relative structure
/// paths resolve against the manifest's directory; the file stem names the
/// dataset.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::io(path, e))?;
    let headers = reader.headers().map_err(|e| DataError::io(path, e))?.clone();
    let mut cols = [0usize; 3];
    for (c, name) in cols.iter_mut().zip(MANIFEST_HEADER) {
        *c = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::io(path, e))?;
        let id = record.get(cols[0]).unwrap_or_default().to_string();
        let structure_path = base.join(record.get(cols[1]).unwrap_or_default());
        let raw = record.get(cols[2]).unwrap_or_default();
        let ltc: f64 = raw
            .parse()
            .map_err(|_| DataError::Format(format!("material {id}: bad LTC {raw:?}")))?;
        if !(ltc > 0.0) {
            return Err(DataError::NonPositiveLtc { material_id: id, value: ltc });
        }
        if !structure_path.is_file() {
            return Err(DataError::MissingStructure {
                material_id: id,
                path: structure_path.display().to_string(),
            });
        }
        rows.push(ManifestRow {
            material_id: id,
            structure_path,
            ltc,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetManifest::new(name, Fidelity::High, rows)
}

/// Concatenates manifests under the name `MIX`. A material id present in
/// several parts with the same LTC is kept once; differing values are an
/// error.
pub fn mix(manifests: &[&DatasetManifest]) -> Result<DatasetManifest, DataError> {
    let mut rows: Vec<ManifestRow> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for m in manifests {
        for r in &m.rows {
            match index.get(&r.material_id) {
                Some(&k) if rows[k].ltc == r.ltc => {}
                Some(_) => return Err(DataError::ConflictingDuplicate(r.material_id.clone())),
                None => {
                    index.insert(r.material_id.clone(), rows.len());
                    rows.push(r.clone());
                }
            }
        }
    }
    let role = if manifests.iter().all(|m| m.role == Fidelity::Low) {
        Fidelity::Low
    } else {
        Fidelity::High
    };
    DatasetManifest::new("MIX", role, rows)
}

/// A dataset with its crystal graphs built, ready for training.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub name: String,
    pub material_ids: Vec<String>,
    pub ltc: Vec<f64>,
    pub graphs: Vec<MaterialGraph>,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.ltc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ltc.is_empty()
    }

    /// Loads every structure and builds its graph, in parallel.
    pub fn from_manifest(manifest: &DatasetManifest, config: &GraphConfig) -> Result<Self, DataError> {
        let graphs = manifest
            .rows
            .par_iter()
            .map(|r| {
                let wrap = |source: GraphError| DataError::Structure {
                    material_id: r.material_id.clone(),
                    source,
                };
                let s = CrystalStructure::from_file(&r.structure_path).map_err(|e| wrap(e.into()))?;
                build_graph(&s, config).map_err(wrap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GraphDataset {
            name: manifest.name.clone(),
            material_ids: manifest.rows.iter().map(|r| r.material_id.clone()).collect(),
            ltc: manifest.rows.iter().map(|r| r.ltc).collect(),
            graphs,
        })
    }

    pub fn from_structures(
        name: &str,
        items: &[(String, CrystalStructure, f64)],
        config: &GraphConfig,
    ) -> Result<Self, DataError> {
        let graphs = items
            .par_iter()
            .map(|(id, s, _)| {
                build_graph(s, config).map_err(|source| DataError::Structure {
                    material_id: id.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (id, _, ltc) in items {
            if !(*ltc > 0.0) {
                return Err(DataError::NonPositiveLtc {
                    material_id: id.clone(),
                    value: *ltc,
                });
            }
        }
        Ok(GraphDataset {
            name: name.to_string(),
            material_ids: items.iter().map(|(id, _, _)| id.clone()).collect(),
            ltc: items.iter().map(|(_, _, k)| *k).collect(),
            graphs,
        })
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> GraphDataset {
        GraphDataset {
            name: self.name.clone(),
            material_ids: indices.iter().map(|&i| self.material_ids[i].clone()).collect(),
            ltc: indices.iter().map(|&i| self.ltc[i]).collect(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
        }
    }

    pub fn concat(name: &str, parts: &[&GraphDataset]) -> GraphDataset {
        let mut out = GraphDataset {
            name: name.to_string(),
            material_ids: Vec::new(),
            ltc: Vec::new(),
            graphs: Vec::new(),
        };
        for p in parts {
            out.material_ids.extend(p.material_ids.iter().cloned());
            out.ltc.extend(&p.ltc);
            out.graphs.extend(p.graphs.iter().cloned());
        }
        out
    }
}
