//! Layered run configuration: profile preset, then file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use fgmdm_core::dataset::DatasetConfig;
use fgmdm_core::denoiser::DenoiserConfig;
use fgmdm_core::diffusion::DiffusionConfig;
use fgmdm_core::embed::TextEmbedder;
use fgmdm_core::eval::EvaluatorConfig;
use fgmdm_core::normalize::Normalizer;
use fgmdm_core::skeleton::Skeleton;
use fgmdm_core::training::{RunConfigBlock, TrainingConfig};
use fgmdm_paraphrase::LlmClientConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid config key `{key}`: {message}")]
    Key { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small model and short schedule that trains on a laptop CPU.
    Desk,
    /// Full-size model, 1000 diffusion steps, batch 64.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSection {
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub evaluator: EvaluatorConfig,
    /// Disjoint pairs drawn for the diversity metric.
    pub pair_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    pub num_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphraseSection {
    pub offline: bool,
    pub cache: Option<PathBuf>,
    pub client: LlmClientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub skeleton: SkeletonSection,
    pub dataset: DatasetConfig,
    pub model: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
    pub embedder: TextEmbedder,
    pub evaluation: EvaluationSection,
    pub sampling: SamplingSection,
    pub paraphrase: ParaphraseSection,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        let desk = Self {
            profile,
            skeleton: SkeletonSection {
                preset: "desk".into(),
            },
            dataset: DatasetConfig {
                variations_per_template: 16,
                ..DatasetConfig::default()
            },
            model: DenoiserConfig::desk(),
            diffusion: DiffusionConfig {
                steps: 100,
                ..DiffusionConfig::default()
            },
            training: TrainingConfig {
                batch: 16,
                steps: 2000,
                lr: 5e-4,
                seed: 1,
                checkpoint_interval: 500,
                ..TrainingConfig::default()
            },
            embedder: TextEmbedder::default(),
            evaluation: EvaluationSection {
                evaluator: EvaluatorConfig::default(),
                pair_count: 16,
                seed: 0,
            },
            sampling: SamplingSection {
                frames: 32,
                fps: 20.0,
                seed: 0,
                num_samples: 1,
            },
            paraphrase: ParaphraseSection {
                offline: true,
                cache: None,
                client: LlmClientConfig::default(),
            },
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => Self {
                model: DenoiserConfig::default(),
                diffusion: DiffusionConfig::default(),
                training: TrainingConfig {
                    seed: 1,
                    checkpoint_interval: 500,
                    ..TrainingConfig::default()
                },
                ..desk
            },
        }
    }

    /// Preset for `profile` (or the file's `profile` key, or desk) with the
    /// file's values merged over it. A command manifest is accepted in place
    /// of a config file.
    pub fn load(file: Option<&Path>, profile: Option<Profile>) -> Result<Self, ConfigError> {
        let overlay = match file {
            Some(path) => read_overlay(path)?,
            None => Value::Object(Default::default()),
        };
        let from_file = match overlay.get("profile") {
            Some(v) => Some(serde_json::from_value::<Profile>(v.clone()).map_err(|e| {
                ConfigError::Key {
                    key: "profile".into(),
                    message: e.to_string(),
                }
            })?),
            None => None,
        };
        let profile = profile.or(from_file).unwrap_or(Profile::Desk);
        let mut merged = serde_json::to_value(Self::preset(profile)).expect("config serializes");
        merge(&mut merged, overlay);
        merged["profile"] = serde_json::to_value(profile).expect("profile serializes");
        serde_path_to_error::deserialize(merged).map_err(|e| ConfigError::Key {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let key = |k: &str| {
            let k = k.to_string();
            move |e: fgmdm_core::Error| ConfigError::Key {
                key: k,
                message: e.to_string(),
            }
        };
        let bad = |k: &str, m: String| ConfigError::Key {
            key: k.into(),
            message: m,
        };
        if self.skeleton.preset != "desk" {
            return Err(bad(
                "skeleton.preset",
                format!("unknown preset {:?}", self.skeleton.preset),
            ));
        }
        let skel = self.skeleton();
        self.model.validate().map_err(key("model"))?;
        self.diffusion.validate().map_err(key("diffusion"))?;
        self.training.validate().map_err(key("training"))?;
        if self.model.d_flat != skel.flat_width() {
            return Err(bad(
                "model.d_flat",
                format!("skeleton needs {} features per frame", skel.flat_width()),
            ));
        }
        if self.model.d_text != self.embedder.dim {
            return Err(bad(
                "model.d_text",
                format!("must equal embedder.dim ({})", self.embedder.dim),
            ));
        }
        if self.embedder.dim == 0 {
            return Err(bad("embedder.dim", "must be positive".into()));
        }
        if self.dataset.variations_per_template == 0 {
            return Err(bad(
                "dataset.variations_per_template",
                "must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dataset.test_fraction) {
            return Err(bad("dataset.test_fraction", "must be in [0, 1)".into()));
        }
        if self.dataset.frames < 2 || self.dataset.frames > self.model.max_frames {
            return Err(bad(
                "dataset.frames",
                format!(
                    "must be in [2, model.max_frames = {}]",
                    self.model.max_frames
                ),
            ));
        }
        if self.sampling.frames < 2 || self.sampling.frames > self.model.max_frames {
            return Err(bad(
                "sampling.frames",
                format!(
                    "must be in [2, model.max_frames = {}]",
                    self.model.max_frames
                ),
            ));
        }
        if !(self.sampling.fps > 0.0) || !(self.dataset.fps > 0.0) {
            return Err(bad("sampling.fps", "fps must be positive".into()));
        }
        if self.sampling.num_samples == 0 {
            return Err(bad("sampling.num_samples", "must be positive".into()));
        }
        if self.evaluation.pair_count == 0 {
            return Err(bad("evaluation.pair_count", "must be positive".into()));
        }
        let ev = &self.evaluation.evaluator;
        if ev.d_eval == 0
            || ev.hidden == 0
            || ev.batch < 2
            || ev.steps == 0
            || !(ev.lr > 0.0)
            || !(ev.temperature > 0.0)
        {
            return Err(bad(
                "evaluation.evaluator",
                "dimensions and steps must be positive, batch >= 2, lr and temperature > 0".into(),
            ));
        }
        self.paraphrase
            .client
            .validate()
            .map_err(|e| ConfigError::Key {
                key: "paraphrase.client".into(),
                message: e.to_string(),
            })?;
        Ok(())
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton::desk()
    }

    pub fn run_block(&self) -> RunConfigBlock {
        RunConfigBlock {
            model: self.model.clone(),
            diffusion: self.diffusion.clone(),
            training: self.training.clone(),
            embedder: self.embedder.clone(),
            normalizer: Normalizer::identity(),
        }
    }
}

fn read_overlay(path: &Path) -> Result<Value, ConfigError> {
    let file_err = |message: String| ConfigError::File {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| file_err(e.to_string()))?
    };
    if !value.is_object() {
        return Err(file_err("top level must be a table".into()));
    }
    match value.get("config") {
        Some(inner) if value.get("command").is_some() => Ok(inner.clone()),
        _ => Ok(value),
    }
}

/// Recursively overwrites `base` with `overlay`; tables merge, other values
/// replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn presets_validate() {
        RunConfig::preset(Profile::Desk).validate().unwrap();
        RunConfig::preset(Profile::Paper).validate().unwrap();
    }

    #[test]
    fn file_overrides_profile_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.toml",
            "[training]\nsteps = 7\n[model]\nlayers = 1\n",
        );
        let c = RunConfig::load(Some(&p), None).unwrap();
        assert_eq!(c.training.steps, 7);
        assert_eq!(c.model.layers, 1);
        assert_eq!(c.model.d_model, DenoiserConfig::desk().d_model);
        let c = RunConfig::load(Some(&p), Some(Profile::Paper)).unwrap();
        assert_eq!(c.model.d_model, 512);
        assert_eq!(c.training.steps, 7);
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.toml", "[training]\nstepz = 7\n");
        let err = RunConfig::load(Some(&p), None).unwrap_err().to_string();
        assert!(err.contains("training") && err.contains("stepz"), "{err}");
        let p = write(&dir, "d.toml", "[model]\nlayers = \"two\"\n");
        let err = RunConfig::load(Some(&p), None).unwrap_err().to_string();
        assert!(err.contains("model.layers"), "{err}");
    }

    #[test]
    fn validation_names_key() {
        let mut c = RunConfig::preset(Profile::Desk);
        c.model.d_text = 3;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("model.d_text"));
        let mut c = RunConfig::preset(Profile::Desk);
        c.diffusion.cond_dropout = 2.0;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("`diffusion`"));
    }

    #[test]
    fn manifest_is_a_valid_config_source() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::preset(Profile::Desk);
        c.training.steps = 3;
        let manifest = serde_json::json!({"command": "train", "config": c});
        let p = write(&dir, "m.json", &manifest.to_string());
        assert_eq!(RunConfig::load(Some(&p), None).unwrap(), c);
    }
}
