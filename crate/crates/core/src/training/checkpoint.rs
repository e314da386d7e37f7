use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::FrontendConfig;
use crate::error::{Error, IoContext, Result};
use crate::model::{AcousticModel, ModelConfig};
use crate::tensor::ParamStore;
use crate::text::CharSet;

use super::optim::{Optimizer, OptimizerConfig};

pub const PARAMS_FILE: &str = "params.okwp";
pub const OPTIMIZER_FILE: &str = "optimizer.okwp";
pub const META_FILE: &str = "checkpoint.toml";
pub const CHARSET_FILE: &str = "charset.txt";
/// Holds the directory name of the best checkpoint inside a run directory.
pub const BEST_MARKER: &str = "best";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub val_wer: f64,
    pub val_cer: f64,
    pub val_loss: f64,
    pub config_hash: String,
    pub charset_hash: String,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub optimizer_state: ParamStore,
    pub charset: CharSet,
}

pub fn epoch_dir_name(epoch: usize) -> String {
    format!("epoch_{epoch:05}")
}

impl Checkpoint {
    pub fn capture(meta: CheckpointMeta, model: &AcousticModel, opt: &Optimizer, charset: &CharSet) -> Result<Self> {
        Ok(Self {
            optimizer_state: opt.to_store(model.params())?,
            params: model.params().clone(),
            meta,
            charset: charset.clone(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_path(dir)?;
        let p = dir.join(PARAMS_FILE);
        self.params.write(BufWriter::new(File::create(&p).with_path(&p)?))?;
        let p = dir.join(OPTIMIZER_FILE);
        self.optimizer_state.write(BufWriter::new(File::create(&p).with_path(&p)?))?;
        let p = dir.join(META_FILE);
        fs::write(&p, toml::to_string(&self.meta)?).with_path(&p)?;
        let p = dir.join(CHARSET_FILE);
        fs::write(&p, self.charset.to_file_string()).with_path(&p)
    }

    /// Loads a checkpoint directory, or the best checkpoint of a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = resolve_checkpoint_dir(path)?;
        let p = dir.join(META_FILE);
        let meta: CheckpointMeta = toml::from_str(&fs::read_to_string(&p).with_path(&p)?)?;
        let charset = CharSet::load(&dir.join(CHARSET_FILE))?;
        if charset.hash() != meta.charset_hash {
            return Err(Error::Incompatible(format!(
                "{} does not match the charset hash recorded in {META_FILE}",
                dir.join(CHARSET_FILE).display()
            )));
        }
        let p = dir.join(PARAMS_FILE);
        let params = ParamStore::read(BufReader::new(File::open(&p).with_path(&p)?))?;
        let p = dir.join(OPTIMIZER_FILE);
        let optimizer_state = ParamStore::read(BufReader::new(File::open(&p).with_path(&p)?))?;
        Ok(Self {
            meta,
            params,
            optimizer_state,
            charset,
        })
    }

    pub fn model(&self) -> Result<AcousticModel> {
        AcousticModel::from_params(self.meta.model.clone(), &self.params)
    }

    pub fn optimizer(&self, model: &AcousticModel) -> Result<Optimizer> {
        Optimizer::from_store(self.meta.optimizer, self.meta.step, model.params(), &self.optimizer_state)
    }

    /// Refuses a charset other than the one the checkpoint was trained with.
    pub fn check_charset(&self, cs: &CharSet) -> Result<()> {
        if cs.hash() != self.meta.charset_hash {
            return Err(Error::Incompatible(format!(
                "charset hash {} differs from checkpoint's {}",
                cs.hash(),
                self.meta.charset_hash
            )));
        }
        Ok(())
    }
}

/// A checkpoint directory itself, or the target of a run directory's `best` marker.
pub fn resolve_checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.join(META_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let marker = path.join(BEST_MARKER);
    if marker.is_file() {
        let name = fs::read_to_string(&marker).with_path(&marker)?;
        let dir = path.join(name.trim());
        if dir.join(META_FILE).is_file() {
            return Ok(dir);
        }
        return Err(Error::Incompatible(format!("{} points at missing {}", marker.display(), dir.display())));
    }
    Err(Error::Incompatible(format!(
        "{} is neither a checkpoint nor a run directory with a {BEST_MARKER} marker",
        path.display()
    )))
}

pub fn write_best_marker(run_dir: &Path, checkpoint_name: &str) -> Result<()> {
    let p = run_dir.join(BEST_MARKER);
    fs::write(&p, format!("{checkpoint_name}\n")).with_path(&p)
}
