use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::gpr::GprConfig;
use crate::lcd::LcdConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Mimbfd,
    Gcn,
}

/// Switches that remove the reachability signal while keeping the
/// architecture: uniform propagation weights and a frozen 0.5 gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmrAblation {
    pub uniform_propagation: bool,
    pub freeze_beta: bool,
}

impl TmrAblation {
    pub fn without_tmr() -> Self {
        TmrAblation {
            uniform_propagation: true,
            freeze_beta: true,
        }
    }
}

/// Locations that do not influence results and are excluded from the hash.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Free-form run name; not part of the hash.
    pub label: String,
    pub seed: u64,
    /// Train/val/test proportions of the labeled nodes.
    pub split: [f64; 3],
    pub gpr: GprConfig,
    pub model: ModelKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    /// Weight of the decorrelation loss in the total objective.
    pub eta: f64,
    pub lcd: LcdConfig,
    pub ablation: TmrAblation,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            label: String::new(),
            seed: 0,
            split: [0.4, 0.2, 0.4],
            gpr: GprConfig::default(),
            model: ModelKind::Mimbfd,
            num_layers: 2,
            hidden_dim: 64,
            adam: AdamConfig::default(),
            epochs: 200,
            patience: 30,
            eta: 0.5,
            lcd: LcdConfig::default(),
            ablation: TmrAblation::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.adam.lr)));
        }
        self.gpr.validate()?;
        self.lcd.validate()
    }

    /// Whether the decorrelation term contributes to the objective.
    pub fn lcd_active(&self) -> bool {
        self.model == ModelKind::Mimbfd && self.lcd.enabled && self.eta > 0.0
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// The configuration as canonical JSON (sorted keys) without `label` and
    /// `paths`.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("label");
            obj.remove("paths");
        }
        value.to_string()
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), hex encoded.
    pub fn config_hash(&self) -> String {
        sha256_hex(&self.canonical_json())
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_label_and_paths() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.label = "ablate-lcd".into();
        b.paths.out = Some("/tmp/x".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.eta = 0.0;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn hash_is_stable_under_key_reordering() {
        let a: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 3, "eta": 0.1, "lcd": {"lambda2": 2.0, "lambda1": 0.5}}"#)
                .unwrap();
        let b: ExperimentConfig =
            serde_json::from_str(r#"{"lcd": {"lambda1": 0.5, "lambda2": 2.0}, "eta": 0.1, "seed": 3}"#)
                .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.lcd.lambda1, 0.5);
        assert!(a.lcd.enabled);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.eta = -0.1;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.num_layers = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
