//! Checkpoint directories: `manifest.toml` plus one tensor file per parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::tensorfile::{load_real, save_real};
use crate::net::{ModelConfig, ParamStore, PtychoDVModel};

const FORMAT: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    /// Free-form provenance such as seeds and training settings.
    #[serde(default)]
    pub info: BTreeMap<String, String>,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &PtychoDVModel, info: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        let file = format!("{name}.ptyt");
        save_real(&dir.join(&file), t)?;
        params.push(ParamEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT,
        info: info.clone(),
        model: model.config.clone(),
        params,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest =
        toml::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(Error::Load(format!("checkpoint format {} is not supported", m.format)));
    }
    Ok(m)
}

/// Loads a checkpoint, checking every tensor against the shapes its own
/// architecture implies.
pub fn load_checkpoint(dir: &Path) -> Result<PtychoDVModel> {
    let m = read_manifest(dir)?;
    m.model.validate().map_err(|e| Error::Load(format!("checkpoint model config: {e}")))?;
    let expected = ParamStore::init(&m.model, 0);
    let mut map = BTreeMap::new();
    for entry in &m.params {
        let want = expected
            .get(&entry.name)
            .map_err(|_| Error::Load(format!("unexpected parameter '{}'", entry.name)))?;
        let t = load_real(&dir.join(&entry.file))?;
        if t.shape() != want.shape() || entry.shape != want.shape() {
            return Err(Error::Load(format!(
                "parameter '{}' has shape {:?} (manifest {:?}), architecture needs {:?}",
                entry.name,
                t.shape(),
                entry.shape,
                want.shape()
            )));
        }
        if map.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Load(format!("parameter '{}' listed twice", entry.name)));
        }
    }
    if let Some(missing) = expected.names().find(|n| !map.contains_key(*n)) {
        return Err(Error::Load(format!("parameter '{missing}' is missing")));
    }
    Ok(PtychoDVModel {
        config: m.model,
        params: ParamStore::from_map(map),
    })
}

/// Like [`load_checkpoint`], but the stored architecture must equal `config`.
pub fn load_checkpoint_for(dir: &Path, config: &ModelConfig) -> Result<PtychoDVModel> {
    let model = load_checkpoint(dir)?;
    if &model.config != config {
        return Err(Error::Load(format!(
            "checkpoint architecture {:?} does not match the requested {:?}",
            model.config, config
        )));
    }
    Ok(model)
}
