//! TOML configuration shared by the CLI and the HTTP service.
//!
//! Every key is optional; a missing section takes its defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{FallbackMode, PromptTemplateSet, TemplateError};
use crate::generation::GenerationConfig;
use crate::masking::MaskConfig;
use crate::protocol::{Backends, Endpoints, RetryPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Templates(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Prompt template file; the bundled templates when absent.
    pub templates: Option<PathBuf>,
    pub fallback: FallbackMode,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            templates: None,
            fallback: FallbackMode::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub out_dir: PathBuf,
    /// Jobs executing at once.
    pub parallelism: usize,
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            parallelism: 4,
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backends: Endpoints,
    pub retry: RetryPolicy,
    pub mask: MaskConfig,
    pub generation: GenerationConfig,
    pub analysis: AnalysisConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &cfg.analysis.templates {
            cfg.analysis.templates = Some(base.join(t));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mask.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.service.parallelism == 0 {
            return Err(ConfigError::Invalid("service.parallelism must be at least 1".into()));
        }
        for (name, url) in [
            ("chat", &self.backends.chat),
            ("ground", &self.backends.ground),
            ("inpaint", &self.backends.inpaint),
            ("global_edit", &self.backends.global_edit),
        ] {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(ConfigError::Invalid(format!("backends.{name} must be an http(s) URL, got {url:?}")));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplateSet, ConfigError> {
        match &self.analysis.templates {
            Some(p) => Ok(PromptTemplateSet::load(p)?),
            None => Ok(PromptTemplateSet::default()),
        }
    }

    pub fn backends(&self) -> Backends {
        Backends::new(self.backends.clone(), self.retry.clone())
    }
}
