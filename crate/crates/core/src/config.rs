//! Run configuration: one TOML file with `[data]`, `[frontend]`, `[model]`
//! and `[train]` sections.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::FrontendConfig;
use crate::data::{FilterConfig, SplitRatios};
use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::text::CharSet;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub charset: PathBuf,
    pub train_manifest: PathBuf,
    /// When absent, the training manifest is split by `split`.
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub filter: FilterConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses without touching the filesystem beyond `path`; relative data
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_path(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.charset);
        fix(&mut self.data.train_manifest);
        fix(&mut self.data.output_dir);
        self.data.val_manifest.as_mut().map(fix);
        self.data.test_manifest.as_mut().map(fix);
    }

    /// Fills `n_mels` and `charset_size` left at 0 and checks every section.
    pub fn finalize(&mut self, cs: &CharSet) -> Result<()> {
        self.frontend.validate()?;
        if self.model.n_mels == 0 {
            self.model.n_mels = self.frontend.n_mels;
        } else if self.model.n_mels != self.frontend.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels = {} but the frontend produces {} mel bands",
                self.model.n_mels, self.frontend.n_mels
            )));
        }
        if self.model.charset_size == 0 {
            self.model.charset_size = cs.len();
        } else if self.model.charset_size != cs.len() {
            return Err(Error::Config(format!(
                "model.charset_size = {} but {} has {} symbols",
                self.model.charset_size,
                self.data.charset.display(),
                cs.len()
            )));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// SHA-256 over the frontend, model and training sections.
    pub fn hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Hashed<'a> {
            frontend: &'a FrontendConfig,
            model: &'a ModelConfig,
            train: &'a TrainConfig,
        }
        let s = toml::to_string(&Hashed {
            frontend: &self.frontend,
            model: &self.model,
            train: &self.train,
        })?;
        Ok(hex::encode(Sha256::digest(s.as_bytes())))
    }
}
