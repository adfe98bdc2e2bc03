//! Experiment configuration: a flat, sectioned TOML file in which every key
//! has a default and every key can be overridden on the command line by a
//! flag of the same dotted name (`--gnn.dropout 0.3`). The config hash
//! recorded in run artifacts is a digest of the fully resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gnn::GnnArch;
use crate::pred_features::ProjectionMode;

/// Accepts either a scalar or a list where a list is expected, so overrides
/// like `--run.sources pred` work without bracket syntax.
fn one_or_many<'de, D, T>(deserializer: D) -> Result<Vec<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::<T>::deserialize(deserializer)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    })
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(String),
    #[error("override {key:?}: {msg}")]
    BadOverride { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub prompt: PromptSection,
    pub llm: LlmSection,
    pub encoder: EncoderSection,
    pub pred: PredSection,
    pub gnn: GnnSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Directory holding edges.tsv, texts.jsonl, labels.csv,
    /// label_space.json and optionally splits.json.
    pub dir: String,
    /// Short name used in cache file names; defaults to the dir basename.
    pub name: String,
    pub split_ratios: [f64; 3],
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            dir: String::new(),
            name: String::new(),
            split_ratios: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    /// Built-in or file-provided template id; empty picks a generic template
    /// synthesized from the dataset's label space.
    pub template_id: String,
    /// Optional JSON file with extra templates.
    pub templates_file: String,
    /// Template ids swept by `prompt-sweep`; empty uses the arXiv family.
    #[serde(deserialize_with = "one_or_many")]
    pub sweep_template_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    pub mock: bool,
    pub mock_accuracy: f64,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub max_in_flight: usize,
    pub retry_limit: usize,
    pub timeout_secs: u64,
    pub api_key_env: String,
    /// Skip corrupt cache lines instead of failing.
    pub cache_repair: bool,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            mock: false,
            mock_accuracy: 0.735,
            endpoint_url: String::new(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            max_in_flight: 4,
            retry_limit: 3,
            timeout_secs: 60,
            api_key_env: "TAPE_API_KEY".into(),
            cache_repair: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub dim: usize,
    pub hidden_dim: usize,
    pub max_features: usize,
    pub min_df: usize,
    pub min_token_len: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub patience: usize,
    /// Non-empty switches the text front end to a remote embeddings API.
    pub remote_endpoint: String,
    pub remote_model: String,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            dim: 256,
            hidden_dim: 256,
            max_features: 20_000,
            min_df: 5,
            min_token_len: 2,
            learning_rate: 1e-3,
            epochs: 500,
            patience: 30,
            remote_endpoint: String::new(),
            remote_model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PredSection {
    /// Ranks to keep; 0 derives it from the template's expected_k (capped at
    /// the number of classes).
    pub k: usize,
    pub d_p: usize,
    pub projection: ProjectionMode,
}

impl Default for PredSection {
    fn default() -> Self {
        Self {
            k: 0,
            d_p: 256,
            projection: ProjectionMode::Seeded,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnSection {
    pub arch: GnnArch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f32,
    pub learning_rate: f32,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for GnnSection {
    fn default() -> Self {
        Self {
            arch: GnnArch::Gcn,
            num_layers: 3,
            hidden_dim: 256,
            dropout: 0.5,
            learning_rate: 0.01,
            max_epochs: 1000,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Drives every stage-level stream (enrichment mock, encoders,
    /// projections). GNN repetitions use `seeds`.
    pub master_seed: u64,
    #[serde(deserialize_with = "one_or_many")]
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Feature families to train on.
    #[serde(deserialize_with = "one_or_many")]
    pub sources: Vec<String>,
    /// "logits" averages raw logits; "probs" averages softmax outputs.
    pub ensemble: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 42,
            seeds: vec![0, 1, 2, 3],
            out_dir: "runs/exp".into(),
            sources: vec!["orig".into(), "expl".into(), "pred".into()],
            ensemble: "logits".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        PathBuf::from(&self.dataset.dir)
    }

    /// Cache-friendly dataset name.
    pub fn dataset_name(&self) -> String {
        if !self.dataset.name.is_empty() {
            return self.dataset.name.clone();
        }
        self.dataset_dir()
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.seeds.is_empty() {
            return Err(ConfigError::Invalid("run.seeds must be nonempty".into()));
        }
        if self.run.sources.is_empty() {
            return Err(ConfigError::Invalid("run.sources must be nonempty".into()));
        }
        for s in &self.run.sources {
            if !matches!(s.as_str(), "orig" | "expl" | "pred") {
                return Err(ConfigError::Invalid(format!(
                    "unknown source {s:?} (expected orig, expl or pred)"
                )));
            }
        }
        if !matches!(self.run.ensemble.as_str(), "logits" | "probs") {
            return Err(ConfigError::Invalid(format!(
                "run.ensemble must be \"logits\" or \"probs\", got {:?}",
                self.run.ensemble
            )));
        }
        if self.dataset.dir.is_empty() {
            return Err(ConfigError::Invalid("dataset.dir is required".into()));
        }
        if !(0.0..=1.0).contains(&self.llm.mock_accuracy) {
            return Err(ConfigError::Invalid(format!(
                "llm.mock_accuracy {} outside [0, 1]",
                self.llm.mock_accuracy
            )));
        }
        if self.llm.max_in_flight == 0 {
            return Err(ConfigError::Invalid("llm.max_in_flight must be >= 1".into()));
        }
        if self.llm.temperature < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "llm.temperature {} must be >= 0",
                self.llm.temperature
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the fully resolved config (first 8 bytes of SHA-256, hex).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Loads the config file (all keys optional) and applies dotted-key
/// overrides on top.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut value: toml::Value = match path {
        Some(p) => {
            let body = fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            toml::from_str(&body).map_err(|e| ConfigError::Toml(e.to_string()))?
        }
        None => toml::Value::Table(Default::default()),
    };
    for (key, raw) in overrides {
        set_dotted(&mut value, key, raw)?;
    }
    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e| ConfigError::Toml(e.to_string()))?;
    Ok(config)
}

fn set_dotted(root: &mut toml::Value, dotted: &str, raw: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride {
            key: dotted.to_string(),
            msg: "empty path segment".into(),
        });
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| ConfigError::BadOverride {
            key: dotted.to_string(),
            msg: format!("{part} is not a table"),
        })?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur.as_table_mut().ok_or_else(|| ConfigError::BadOverride {
        key: dotted.to_string(),
        msg: "parent is not a table".into(),
    })?;
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Interprets an override value: TOML literal first, then comma lists, then
/// a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(v) = toml::from_str::<toml::value::Table>(&format!("v = {raw}")) {
        if let Some(inner) = v.get("v") {
            return inner.clone();
        }
    }
    if raw.contains(',') {
        let items: Vec<toml::Value> = raw
            .split(',')
            .map(|item| parse_scalar(item.trim()))
            .collect();
        return toml::Value::Array(items);
    }
    toml::Value::String(raw.to_string())
}
