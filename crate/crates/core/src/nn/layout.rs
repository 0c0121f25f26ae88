use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::NnError;

/// A named block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Allocation table for a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves a tensor and returns its offset.
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let info = TensorInfo {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        };
        self.len += info.size();
        self.tensors.push(info);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Parameters plus their layout and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    count: usize,
    layout: ParamLayout,
    meta: serde_json::Value,
}

const FORMAT: &str = "selfcol-params";

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

/// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (manifest).
pub fn save_checkpoint(dir: &Path, stem: &str, ckpt: &Checkpoint) -> Result<(), NnError> {
    if ckpt.params.len() != ckpt.layout.len {
        return Err(NnError::ShapeMismatch {
            what: "checkpoint params",
            expected: ckpt.layout.len,
            got: ckpt.params.len(),
        });
    }
    let (bin, json) = paths(dir, stem);
    let mut bytes = Vec::with_capacity(8 * ckpt.params.len());
    for p in &ckpt.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        count: ckpt.params.len(),
        layout: ckpt.layout.clone(),
        meta: ckpt.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    fs::write(json, text)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Checkpoint, NnError> {
    let (bin, json) = paths(dir, stem);
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(json)?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * manifest.count || manifest.count != manifest.layout.len {
        return Err(NnError::Checkpoint(format!(
            "expected {} values, file holds {} bytes",
            manifest.count,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        layout: manifest.layout,
        params,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut l = ParamLayout::new();
        assert_eq!(l.alloc("w", &[3, 2]), 0);
        assert_eq!(l.alloc("b", &[3]), 6);
        assert_eq!(l.len(), 9);
        assert_eq!(l.get("b").unwrap().offset, 6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut layout = ParamLayout::new();
        layout.alloc("w", &[2, 2]);
        let ckpt = Checkpoint {
            layout,
            params: vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300],
            meta: serde_json::json!({"k": 8}),
        };
        save_checkpoint(dir.path(), "det", &ckpt).unwrap();
        let back = load_checkpoint(dir.path(), "det").unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params[1].to_bits(), (-0.0f64).to_bits());
    }
}
