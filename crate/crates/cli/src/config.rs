use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weaksed::data::LabelMap;
use weaksed::dsp::FeatureConfig;
use weaksed::loss::LossRegistry;
use weaksed::model::ModelConfig;
use weaksed::synth::SynthConfig;
use weaksed::train::TrainConfig;

use crate::error::CliError;

/// File locations. Relative paths are resolved against the directory of
/// the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    /// Strong labels for the validation recordings.
    pub validation_strong: Option<PathBuf>,
    /// Base for audio paths in manifests; defaults to each manifest's directory.
    pub audio_root: Option<PathBuf>,
    pub feature_cache: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_manifest: None,
            validation_manifest: None,
            validation_strong: None,
            audio_root: None,
            feature_cache: "cache".into(),
            output_dir: "run".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Without a map, any non-empty label set counts as positive.
    pub label_map: Option<LabelMap>,
    pub threshold: f64,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            label_map: None,
            threshold: 0.5,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn validate(&self, registry: &LossRegistry) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        registry.get(&self.train.loss)?;
        if self.model.n_mels != self.features.n_mels {
            return Err(CliError::Usage(format!(
                "model.n_mels = {} but features.n_mels = {}",
                self.model.n_mels, self.features.n_mels
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Usage(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.train_manifest,
            &mut self.validation_manifest,
            &mut self.validation_strong,
            &mut self.audio_root,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.feature_cache);
        fix(&mut self.output_dir);
    }

    pub fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        p.as_deref()
            .ok_or_else(|| CliError::Usage(format!("paths.{key} is not set")))
    }
}
