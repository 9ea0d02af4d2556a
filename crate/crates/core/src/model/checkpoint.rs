//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "PAI1" | u32 version | u32 n_tensors
//! n_tensors × { u32 name_len, name, u8 tag, u32 ndim, ndim × u64 dim }
//! n_tensors × f64 payload, row-major
//! u8 has_transform [ f64 mu, f64 sigma, u32 len, dataset name ]
//! u32 len, provenance
//! ```
//!
//! The architecture is recovered from the tensor shapes and must reproduce
//! the stored manifest exactly.

use std::path::Path;

use ndarray::Array2;

use super::net::Layout;
use super::{ModelConfig, ModelError, ModelState, ParamTag, Parameters, Tensor};
use crate::data::TargetTransform;
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PAI1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u32).to_le_bytes());
    buf.extend(s.as_bytes());
}

pub fn encode(state: &ModelState) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * state.params.n_scalars());
    buf.extend(CHECKPOINT_MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    buf.extend((state.params.len() as u32).to_le_bytes());
    for t in &state.params.tensors {
        put_str(&mut buf, &t.name);
        buf.push(match t.tag {
            ParamTag::Backbone => 0,
            ParamTag::Head => 1,
        });
        buf.extend(2u32.to_le_bytes());
        buf.extend((t.value.nrows() as u64).to_le_bytes());
        buf.extend((t.value.ncols() as u64).to_le_bytes());
    }
    for t in &state.params.tensors {
        for x in t.value.iter() {
            buf.extend(x.to_le_bytes());
        }
    }
    match &state.transform {
        Some(tr) => {
            buf.push(1);
            buf.extend(tr.mu.to_le_bytes());
            buf.extend(tr.sigma.to_le_bytes());
            put_str(&mut buf, &tr.dataset_name);
        }
        None => buf.push(0),
    }
    put_str(&mut buf, &state.provenance);
    buf
}

pub fn save(state: &ModelState, path: &Path) -> Result<(), ModelError> {
    write_atomic(path, &encode(state)).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

fn infer_config(manifest: &[(String, ParamTag, (usize, usize))]) -> Result<ModelConfig, ModelError> {
    let shape = |name: &str| {
        manifest
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, s)| *s)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))
    };
    let widths = |prefix: &str| {
        let mut out = Vec::new();
        while let Ok((_, cols)) = shape(&format!("{prefix}.{}.w", out.len())) {
            out.push(cols);
        }
        out
    };
    let embed_dim = shape("embedding")?.1;
    let mut block_hidden = widths("block0.edge");
    let mut head_layers = widths("head");
    if block_hidden.pop().is_none() || head_layers.pop().is_none() {
        return Err(corrupt("missing block or head layers"));
    }
    let mut n_blocks = 0;
    while shape(&format!("block{n_blocks}.edge.0.w")).is_ok() {
        n_blocks += 1;
    }
    let config = ModelConfig {
        embed_dim,
        n_blocks,
        block_hidden,
        head_layers,
        n_centers: shape("edge_proj.w")?.0,
        state_dim: shape("state_proj.w")?.0,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;
    if Layout::new(&config).specs() != manifest {
        return Err(corrupt("tensor manifest does not match any architecture"));
    }
    Ok(config)
}

pub fn decode(bytes: &[u8]) -> Result<ModelState, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionUnsupported(version));
    }
    let n = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.string()?;
        let tag = match r.u8()? {
            0 => ParamTag::Backbone,
            1 => ParamTag::Head,
            t => return Err(corrupt(format!("unknown tag {t} on {name}"))),
        };
        if r.u32()? != 2 {
            return Err(corrupt(format!("{name} is not a matrix")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        manifest.push((name, tag, (rows, cols)));
    }
    let config = infer_config(&manifest)?;
    let mut tensors = Vec::with_capacity(n);
    for (name, tag, shape) in manifest {
        let values = (0..shape.0 * shape.1).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let value = Array2::from_shape_vec(shape, values).expect("length matches shape");
        tensors.push(Tensor { name, tag, value });
    }
    let transform = match r.u8()? {
        0 => None,
        1 => {
            let mu = r.f64()?;
            let sigma = r.f64()?;
            let name = r.string()?;
            Some(TargetTransform::new(mu, sigma, name).map_err(|e| corrupt(e.to_string()))?)
        }
        f => return Err(corrupt(format!("bad transform flag {f}"))),
    };
    let provenance = r.string()?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelState {
        config,
        params: Parameters { tensors },
        transform,
        provenance,
    })
}

pub fn load(path: &Path) -> Result<ModelState, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    decode(&bytes)
}
