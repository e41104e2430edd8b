use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Architecture metadata kept next to the container. Field names follow the
/// Hugging Face `config.json` convention; unrecognised keys are preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_hidden_layers: usize,
    pub hidden_size: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_norm_eps: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// Sidecar location for a container: `model.safetensors` -> `model.config.json`.
pub fn config_path_for(container: &Path) -> PathBuf {
    container.with_extension("config.json")
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
            .map_err(|e| Error::MalformedConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Looks for `<stem>.config.json`, then `config.json` in the same
    /// directory. Returns `None` when neither exists.
    pub fn load_sidecar(container: &Path) -> Result<Option<Self>> {
        let own = config_path_for(container);
        if own.is_file() {
            return Self::load(own).map(Some);
        }
        let shared = container.with_file_name("config.json");
        if shared.is_file() {
            return Self::load(shared).map(Some);
        }
        Ok(None)
    }
}
