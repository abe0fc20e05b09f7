//! Pipeline configuration file: TOML, every key optional, flags win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssd_core::augment::AugmentConfig;
use ssd_core::dataset::ValidationPolicy;
use ssd_core::features::FeaturePreset;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub jobs: usize,
    pub paths: Paths,
    pub features: Features,
    pub augment: AugmentConfig,
    pub train: TrainSection,
    pub folds: FoldSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Audio paths in the manifest are relative to this; defaults to the
    /// manifest's directory.
    pub audio_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub preset: Option<FeaturePreset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub experiment: Option<String>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub class_weighted: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            experiment: None,
            batch_size: 128,
            epochs: 15,
            lr: 1e-4,
            class_weighted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSection {
    pub k: usize,
    pub validation: ValidationPolicy,
}

impl Default for FoldSection {
    fn default() -> Self {
        Self {
            k: 5,
            validation: ValidationPolicy::default(),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            jobs: 1,
            paths: Paths::default(),
            features: Features::default(),
            augment: AugmentConfig::default(),
            train: TrainSection::default(),
            folds: FoldSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.manifest, &mut cfg.paths.audio_root, &mut cfg.paths.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.jobs == 0 {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        if self.folds.k < 2 {
            return Err(CliError::Validation(format!("folds.k must be at least 2, got {}", self.folds.k)));
        }
        if let ValidationPolicy::InnerSplit { val_fraction } = self.folds.validation {
            if !(0.0..1.0).contains(&val_fraction) || val_fraction.is_nan() {
                return Err(CliError::Validation(format!("val_fraction {val_fraction} outside [0, 1)")));
            }
        }
        self.augment.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
