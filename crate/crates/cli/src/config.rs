use std::path::{Path, PathBuf};

use monge_core::datasets::Geometry;
use monge_core::eval::{BarycentricConfig, ExperimentConfig, MethodKind, Problem};
use monge_core::w2gan::TrainingConfig;
use monge_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "MONGE_LAB_OUT";

/// The JSON config file. Every field is optional and unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: Option<Problem>,
    /// Output root, below `--out` and `MONGE_LAB_OUT` in precedence.
    pub out: Option<PathBuf>,
    pub training: TrainingConfig,
    pub experiment: ExperimentSection,
    pub barycentric: BarycentricConfig,
    pub geometry: Geometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            methods: e.methods,
            seeds: e.seeds,
            n_eval: e.n_eval,
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", p.display())))
            }
        }
    }

    /// `flag`, else `$MONGE_LAB_OUT`, else the config value, else `out`.
    pub fn out_root(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(v) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(v);
        }
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn experiment(&self, dataset: Problem, out_dir: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            methods: self.experiment.methods.clone(),
            n_train: self.training.n_train,
            n_eval: self.experiment.n_eval,
            seeds: self.experiment.seeds.clone(),
            out_dir,
            training: self.training.clone(),
            barycentric: self.barycentric.clone(),
            geometry: self.geometry.clone(),
            write_checkpoints: false,
        }
    }
}
