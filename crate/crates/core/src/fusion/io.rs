//! Parameter container: the magic `GZP1`, a little-endian `u32` manifest
//! length, a JSON manifest, then every tensor as row-major little-endian
//! `f32` in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FusionParams, HyperParams, Mat, MlpParams, ParamSet};

pub const MAGIC: &[u8; 4] = b"GZP1";

#[derive(Debug, Error)]
pub enum ParamIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("not a parameter file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("expected model kind {expected}, file holds {got}")]
    WrongKind { expected: String, got: String },
    #[error("tensor layout mismatch: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub hyperparams: HyperParams,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub tensors: Vec<Mat>,
}

impl Container {
    pub fn new(kind: &str, hp: HyperParams, named: Vec<(String, Mat)>) -> Self {
        let (entries, tensors): (Vec<_>, Vec<_>) = named
            .into_iter()
            .map(|(name, m)| {
                (
                    TensorEntry {
                        name,
                        shape: [m.nrows(), m.ncols()],
                    },
                    m,
                )
            })
            .unzip();
        Self {
            manifest: Manifest {
                kind: kind.to_string(),
                hyperparams: hp,
                tensors: entries,
                extra: serde_json::Value::Null,
            },
            tensors,
        }
    }

    pub fn from_params<P: ParamSet>(kind: &str, hp: HyperParams, p: &P) -> Self {
        let mut named = Vec::new();
        p.visit(&mut |n, m| named.push((n.to_string(), m.clone())));
        Self::new(kind, hp, named)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.manifest
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| &self.tensors[i])
    }

    /// Copies tensors into `p`, requiring identical names and shapes.
    pub fn fill<P: ParamSet>(&self, p: &mut P) -> Result<(), ParamIoError> {
        let want = p.names();
        let got: Vec<(String, (usize, usize))> = self
            .manifest
            .tensors
            .iter()
            .filter(|t| want.iter().any(|(n, _)| *n == t.name))
            .map(|t| (t.name.clone(), (t.shape[0], t.shape[1])))
            .collect();
        if got != want {
            return Err(ParamIoError::Layout(format!(
                "file has {} matching tensors, model needs {}",
                got.len(),
                want.len()
            )));
        }
        p.visit_mut(&mut |n, m| {
            if let Some(src) = self.get(n) {
                m.copy_from(src);
            }
        });
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ParamIoError> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&(manifest.len() as u32).to_le_bytes())?;
        w.write_all(&manifest)?;
        let mut buf = Vec::new();
        for m in &self.tensors {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    buf.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ParamIoError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ParamIoError::BadMagic(magic));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut manifest = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut manifest)?;
        let manifest: Manifest = serde_json::from_slice(&manifest)?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            let [rows, cols] = t.shape;
            let mut bytes = vec![0u8; rows * cols * 4];
            r.read_exact(&mut bytes)?;
            let vals: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.push(Mat::from_row_slice(rows, cols, &vals));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ParamIoError::Layout(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamIoError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ParamIoError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    fn expect_kind(&self, kind: &str) -> Result<(), ParamIoError> {
        if self.manifest.kind != kind {
            return Err(ParamIoError::WrongKind {
                expected: kind.into(),
                got: self.manifest.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn to_fusion(&self) -> Result<FusionParams, ParamIoError> {
        self.expect_kind(KIND_TRANSFORMER)?;
        let hp = self.manifest.hyperparams;
        let mut p = FusionParams::constant(&hp, [0.0, 0.0]).map_err(|e| ParamIoError::Layout(e.to_string()))?;
        self.fill(&mut p)?;
        Ok(p)
    }

    pub fn to_mlp(&self) -> Result<MlpParams, ParamIoError> {
        self.expect_kind(KIND_MLP)?;
        let hp = self.manifest.hyperparams;
        let mut p = MlpParams::constant(&hp, [0.0, 0.0]).map_err(|e| ParamIoError::Layout(e.to_string()))?;
        self.fill(&mut p)?;
        Ok(p)
    }
}

pub const KIND_TRANSFORMER: &str = "transformer";
pub const KIND_MLP: &str = "mlp";
