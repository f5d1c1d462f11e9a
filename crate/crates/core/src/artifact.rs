//! Versioned JSON model files and JSON Lines datasets with provenance
//! sidecars.
//!
//! A model file holds the format version, the model kind, its architecture,
//! the embedded standardizer, every parameter tensor (name, shape, row-major
//! data) and optionally the hash of the config and the seed that produced it.
//! Floats are written in shortest round-trip form, so saving is
//! deterministic and loading restores parameters bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fm_im::{ForwardModel, InverseModel, Standardizer};
use crate::nn::Parameters;
use crate::tm::{TmArchitecture, TrajectoryModel};

pub const FORMAT_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ForwardModel,
    InverseModel,
    TrajectoryModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hex SHA-256 of the canonical config document.
    pub config_hash: String,
    pub seed: u64,
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a serializable config, taken over its compact JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// MLP layout shared by the forward and inverse models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub dof: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: ModelKind,
    architecture: serde_json::Value,
    standardizer: Standardizer,
    tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

/// A model that can be stored as a versioned artifact.
pub trait ModelArtifact: Parameters + Sized {
    const KIND: ModelKind;

    fn architecture(&self) -> serde_json::Value;
    fn standardizer(&self) -> &Standardizer;
    /// Builds a model with the given layout and zero parameters.
    fn from_architecture(architecture: serde_json::Value, standardizer: Standardizer) -> Result<Self>;
}

fn arch_value<T: Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("architecture blocks are plain data")
}

fn mlp_arch(v: serde_json::Value, st: &Standardizer) -> Result<MlpArchitecture> {
    let a: MlpArchitecture = serde_json::from_value(v).map_err(|e| Error::Format(format!("bad architecture block: {e}")))?;
    if a.dof != st.dof() || a.hidden.is_empty() || a.hidden.contains(&0) {
        return Err(Error::Format(format!("inconsistent MLP architecture {a:?}")));
    }
    Ok(a)
}

impl ModelArtifact for ForwardModel {
    const KIND: ModelKind = ModelKind::ForwardModel;

    fn architecture(&self) -> serde_json::Value {
        arch_value(&MlpArchitecture { dof: self.standardizer.dof(), hidden: self.hidden_sizes() })
    }

    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn from_architecture(architecture: serde_json::Value, standardizer: Standardizer) -> Result<Self> {
        let a = mlp_arch(architecture, &standardizer)?;
        Ok(ForwardModel::new(standardizer, &a.hidden, 0)?.zeroed())
    }
}

impl ModelArtifact for InverseModel {
    const KIND: ModelKind = ModelKind::InverseModel;

    fn architecture(&self) -> serde_json::Value {
        arch_value(&MlpArchitecture { dof: self.standardizer.dof(), hidden: self.hidden_sizes() })
    }

    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn from_architecture(architecture: serde_json::Value, standardizer: Standardizer) -> Result<Self> {
        let a = mlp_arch(architecture, &standardizer)?;
        Ok(InverseModel::new(standardizer, &a.hidden, 0)?.zeroed())
    }
}

impl ModelArtifact for TrajectoryModel {
    const KIND: ModelKind = ModelKind::TrajectoryModel;

    fn architecture(&self) -> serde_json::Value {
        arch_value(&self.arch)
    }

    fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn from_architecture(architecture: serde_json::Value, standardizer: Standardizer) -> Result<Self> {
        let arch: TmArchitecture =
            serde_json::from_value(architecture).map_err(|e| Error::Format(format!("bad architecture block: {e}")))?;
        Ok(TrajectoryModel::new(arch, standardizer, 0)?.zeroed())
    }
}

/// Serializes a model to its artifact text.
pub fn model_to_string<M: ModelArtifact>(model: &M, provenance: Option<&Provenance>) -> Result<String> {
    let tensors = model
        .tensor_names()
        .into_iter()
        .zip(model.tensor_shapes())
        .zip(model.tensors())
        .map(|((name, shape), data)| TensorRecord { name, shape, data: data.to_vec() })
        .collect();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        kind: M::KIND,
        architecture: model.architecture(),
        standardizer: model.standardizer().clone(),
        tensors,
        provenance: provenance.cloned(),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    Ok(text)
}

/// Parses artifact text. The version is checked before the rest of the
/// document is interpreted.
pub fn model_from_str<M: ModelArtifact>(text: &str) -> Result<(M, Option<Provenance>)> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("corrupt or truncated model file: {e}")))?;
    let found = probe.format_version.ok_or_else(|| Error::Format("model file has no format_version".into()))?;
    if !SUPPORTED_VERSIONS.iter().any(|&v| u64::from(v) == found) {
        return Err(Error::Version { found, supported: SUPPORTED_VERSIONS.to_vec() });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed model file: {e}")))?;
    if file.kind != M::KIND {
        return Err(Error::Format(format!("expected a {:?} file, found {:?}", M::KIND, file.kind)));
    }
    let mut model = M::from_architecture(file.architecture, file.standardizer)?;
    let names = model.tensor_names();
    let shapes = model.tensor_shapes();
    if file.tensors.len() != names.len() {
        return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), file.tensors.len())));
    }
    for (((slot, name), shape), rec) in model.tensors_mut().into_iter().zip(&names).zip(&shapes).zip(&file.tensors) {
        if &rec.name != name || &rec.shape != shape || rec.data.len() != slot.len() {
            return Err(Error::Format(format!(
                "tensor {} {:?} ({} values) does not match expected {name} {shape:?}",
                rec.name,
                rec.shape,
                rec.data.len()
            )));
        }
        if rec.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("tensor {name} contains non-finite values")));
        }
        slot.copy_from_slice(&rec.data);
    }
    Ok((model, file.provenance))
}

pub fn save_model<M: ModelArtifact>(model: &M, provenance: Option<&Provenance>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(model, provenance)?)?;
    Ok(())
}

pub fn load_model<M: ModelArtifact>(path: impl AsRef<Path>) -> Result<(M, Option<Provenance>)> {
    model_from_str(&fs::read_to_string(path)?)
}

/// Sidecar written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Record type, e.g. `transition`, `trajectory`, `endpoint_pair`.
    pub kind: String,
    pub count: usize,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// `data.jsonl` → `data.jsonl.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes one JSON record per line plus the provenance sidecar.
pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>, kind: &str, provenance: &Provenance) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let meta = DatasetMeta { kind: kind.to_string(), count: records.len(), provenance: provenance.clone() };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Reads a JSON Lines file; blank lines are skipped and a bad line is
/// reported with its 1-based number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
