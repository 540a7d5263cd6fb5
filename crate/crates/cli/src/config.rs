use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skipnet::data::{FeatureSchema, SplitFractions};
use skipnet::model::{Feedback, ModelConfig};
use skipnet::synthgen::GenConfig;
use skipnet::train::TrainConfig;

use crate::error::CliError;

/// Hidden sizes and initialization; input widths come from the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub track_fc_dim: usize,
    pub interaction_fc_dim: usize,
    pub sessrep_hidden: usize,
    pub enc_fc_dim: usize,
    pub enc_hidden: usize,
    pub dec_final_hidden: usize,
    pub seed: u64,
    pub feedback: Feedback,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSection {
            track_fc_dim: d.track_fc_dim,
            interaction_fc_dim: d.interaction_fc_dim,
            sessrep_hidden: d.sessrep_hidden,
            enc_fc_dim: d.enc_fc_dim,
            enc_hidden: d.enc_hidden,
            dec_final_hidden: d.dec_final_hidden,
            seed: d.seed,
            feedback: d.feedback,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    All,
    Train,
    Validation,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub split: EvalSplit,
}

/// File names, relative to the data directory (inputs) or the output
/// directory (outputs) unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilesSection {
    /// Feature schema TOML; the built-in schema when unset.
    pub schema: Option<PathBuf>,
    pub sessions: PathBuf,
    pub tracks: PathBuf,
    pub unlabeled_sessions: PathBuf,
    /// Read by `score`, relative to the output directory.
    pub predictions: PathBuf,
}

impl Default for FilesSection {
    fn default() -> Self {
        FilesSection {
            schema: None,
            sessions: "sessions.csv".into(),
            tracks: "tracks.csv".into(),
            unlabeled_sessions: "sessions_unlabeled.csv".into(),
            predictions: "predictions.txt".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides every per-section seed when set.
    pub seed: Option<u64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub split: SplitFractions,
    /// Seed of the train/validation/test partition.
    pub split_seed: u64,
    pub evaluate: EvaluateSection,
    pub files: FilesSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            data_dir: ".".into(),
            out_dir: ".".into(),
            checkpoint: None,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            gen: GenConfig::default(),
            split: SplitFractions::default(),
            split_seed: 0,
            evaluate: EvaluateSection::default(),
            files: FilesSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml_str(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = Some(s);
        }
        if let Some(d) = &overrides.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(c) = &overrides.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(w) = overrides.workers {
            cfg.train.workers = w;
        }
        if let Some(s) = cfg.seed {
            cfg.model.seed = s;
            cfg.train.seed = s;
            cfg.gen.seed = s;
            cfg.split_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the schema file.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: skipnet::Error| CliError::Config(e.to_string());
        self.train.validate().map_err(cfg_err)?;
        self.gen.validate().map_err(cfg_err)?;
        self.split
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model_config(&FeatureSchema::default())
            .validate()
            .map_err(cfg_err)?;
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema, CliError> {
        match &self.files.schema {
            Some(p) => FeatureSchema::load(&resolve(&self.data_dir, p))
                .map_err(|e| CliError::Config(e.to_string())),
            None => Ok(FeatureSchema::default()),
        }
    }

    pub fn model_config(&self, schema: &FeatureSchema) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            track_feat_dim: schema.track_width(),
            interaction_feat_dim: schema.interaction_width(),
            track_fc_dim: m.track_fc_dim,
            interaction_fc_dim: m.interaction_fc_dim,
            sessrep_hidden: m.sessrep_hidden,
            enc_fc_dim: m.enc_fc_dim,
            enc_hidden: m.enc_hidden,
            dec_final_hidden: m.dec_final_hidden,
            seed: m.seed,
            feedback: m.feedback,
        }
    }

    pub fn input(&self, p: &Path) -> PathBuf {
        resolve(&self.data_dir, p)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Checkpoint to read: the explicit one, else `best.ckpt` in the output
    /// directory.
    pub fn checkpoint_or_best(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output("best.ckpt"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        resolve(&self.out_dir, &self.files.predictions)
    }
}
