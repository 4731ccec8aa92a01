use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffcore::{Checkpoint, Real};
use crate::model::{Arch, ModelConfig, ModelError, Network};

pub const MODEL_CHECKPOINT: &str = "model.ckpt";
pub const MODEL_META: &str = "model.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    arch: Arch,
    model: ModelConfig,
}

/// Writes `model.ckpt` and `model.json` into `dir`.
pub fn save_model<T: Real>(net: &Network<T>, dir: impl AsRef<Path>) -> Result<(), TrainError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    net.to_checkpoint().save(dir.join(MODEL_CHECKPOINT))?;
    let meta = ModelMeta { arch: net.arch(), model: net.config().clone() };
    std::fs::write(dir.join(MODEL_META), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn load_model<T: Real>(dir: impl AsRef<Path>) -> Result<Network<T>, TrainError> {
    let dir = dir.as_ref();
    let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(MODEL_META))?)?;
    let ck = Checkpoint::load(dir.join(MODEL_CHECKPOINT))?;
    let net = Network::from_checkpoint(meta.model, &ck)?;
    if net.arch() != meta.arch {
        return Err(ModelError::Input(format!("checkpoint holds a {:?} network, metadata says {:?}", net.arch(), meta.arch)).into());
    }
    Ok(net)
}
