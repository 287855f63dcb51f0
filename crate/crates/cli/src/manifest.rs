//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], config: &RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("dataset".to_string(), config.dataset.seed),
            ("training".to_string(), config.training.seed),
            ("sampling".to_string(), config.sampling.seed),
            ("evaluation".to_string(), config.evaluation.seed),
            ("evaluator".to_string(), config.evaluation.evaluator.seed),
        ]);
        let versions = BTreeMap::from([
            ("fgmdm".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            (
                "checkpoint_format".to_string(),
                fgmdm_core::checkpoint::VERSION.to_string(),
            ),
            (
                "prompt".to_string(),
                fgmdm_paraphrase::PROMPT_VERSION.to_string(),
            ),
            (
                "dataset_layout".to_string(),
                fgmdm_core::dataset::LAYOUT.to_string(),
            ),
        ]);
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            config: config.clone(),
            seeds,
            versions,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}

/// `<file>.manifest.json` for file outputs, `<dir>/manifest.json` for
/// directory outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}
