//! Experiment configuration file (TOML).
//!
//! Every section is optional and falls back to the library defaults;
//! unknown keys anywhere are rejected. The global `seed` overrides the
//! per-section seeds so that one number pins the whole experiment.
//!
//! ```toml
//! seed = 3
//!
//! [data]
//! preset = "cohort"   # or "benchmark" (default)
//!
//! [ssl]
//! max_epochs = 10
//!
//! [federation]
//! local_epochs = 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use fssl_core::augment::AugmentConfig;
use fssl_core::data::{SiteConfig, SyntheticConfig};
use fssl_core::eval::DEFAULT_THRESHOLD;
use fssl_core::federation::FederationConfig;
use fssl_core::finetune::FinetuneConfig;
use fssl_core::model::BackboneConfig;
use fssl_core::ssl::SslConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Benchmark,
    Cohort,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub preset: Preset,
    pub image_size: Option<usize>,
    pub lesion_strength: Option<f64>,
    pub pixel_noise: Option<f64>,
    pub illumination_jitter: Option<f64>,
    /// Replaces the preset's site definitions entirely.
    pub sites: Option<Vec<SiteConfig>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub threshold: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Results root; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub augment: AugmentConfig,
    pub backbone: BackboneConfig,
    pub ssl: SslConfig,
    pub federation: FederationConfig,
    pub finetune: FinetuneConfig,
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse {
            path: origin.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigParse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// The synthetic generator settings this config describes.
    pub fn synthetic(&self) -> SyntheticConfig {
        let mut cfg = match self.data.preset {
            Preset::Benchmark => SyntheticConfig::benchmark(),
            Preset::Cohort => SyntheticConfig::cohort(),
        };
        let d = &self.data;
        cfg.image_size = d.image_size.unwrap_or(cfg.image_size);
        cfg.lesion_strength = d.lesion_strength.unwrap_or(cfg.lesion_strength);
        cfg.pixel_noise = d.pixel_noise.unwrap_or(cfg.pixel_noise);
        cfg.illumination_jitter = d.illumination_jitter.unwrap_or(cfg.illumination_jitter);
        if let Some(sites) = &d.sites {
            cfg.sites = sites.clone();
        }
        cfg.seed = self.seed;
        cfg
    }

    /// Copy with the global seed pushed into every section and the data
    /// section expanded, so the file alone reproduces the run.
    pub fn resolved(&self, seed_override: Option<u64>, out_override: Option<&Path>) -> Self {
        let mut cfg = self.clone();
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = out_override {
            cfg.out = Some(out.to_owned());
        }
        let synthetic = cfg.synthetic();
        cfg.data = DataSection {
            preset: cfg.data.preset,
            image_size: Some(synthetic.image_size),
            lesion_strength: Some(synthetic.lesion_strength),
            pixel_noise: Some(synthetic.pixel_noise),
            illumination_jitter: Some(synthetic.illumination_jitter),
            sites: Some(synthetic.sites),
        };
        cfg.backbone.seed = cfg.seed;
        cfg.backbone.image_size = synthetic.image_size;
        cfg.ssl.seed = cfg.seed;
        cfg.federation.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        cfg
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic().validate()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.ssl.validate()?;
        self.federation.validate(2)?;
        self.finetune.validate()?;
        if !(0.0..=1.0).contains(&self.evaluation.threshold) {
            return Err(CliError::Usage(format!(
                "evaluation.threshold must lie in [0, 1], got {}",
                self.evaluation.threshold
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = ExperimentConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.finetune.momentum, 0.09);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sed = 1", "[ssl]\nlearning_rate = 0.1", "[bogus]\nx = 1", "[data]\npreset = \"table2\""] {
            let err = ExperimentConfig::parse(text, Path::new("x.toml")).unwrap_err();
            assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG, "{text}");
        }
    }

    #[test]
    fn resolved_round_trips_and_pins_seeds() {
        let cfg = ExperimentConfig::parse("seed = 4\n[data]\npreset = \"cohort\"", Path::new("x.toml")).unwrap();
        let resolved = cfg.resolved(Some(9), None);
        assert_eq!(resolved.ssl.seed, 9);
        assert_eq!(resolved.synthetic(), cfg.resolved(Some(9), None).synthetic());
        let back = ExperimentConfig::parse(&resolved.to_toml(), Path::new("r.toml")).unwrap();
        assert_eq!(back, resolved);
        assert_eq!(back.synthetic(), SyntheticConfig { seed: 9, ..SyntheticConfig::cohort() });
    }
}
