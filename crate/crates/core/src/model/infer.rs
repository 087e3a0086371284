use serde::{Deserialize, Serialize};

use super::{CueSequence, LayoutModel, ModelConfig};
use crate::error::{Error, Result};
use crate::layout::{manhattanize, CornerParams, LayoutPrediction, RoomLayout};
use crate::numcore::Checkpoint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostProc {
    #[default]
    None,
    Manhattan,
}

impl std::str::FromStr for PostProc {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PostProc::None),
            "manhattan" => Ok(PostProc::Manhattan),
            _ => Err(Error::Config(format!(
                "unknown postproc {s:?}; expected none or manhattan"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub prediction: LayoutPrediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<RoomLayout>,
}

/// Loads a model for inference. When `expected` is given its hash must
/// equal the checkpoint's.
pub fn load_model(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<LayoutModel> {
    if let Some(cfg) = expected {
        let want = cfg.hash();
        if want != ckpt.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, expected {want}",
                ckpt.config_hash
            )));
        }
    }
    LayoutModel::from_checkpoint(ckpt)
}

/// Forward pass without dropout, optionally followed by Manhattan snapping.
pub fn infer(
    model: &LayoutModel,
    cues: &CueSequence,
    camera_height: f64,
    postproc: PostProc,
    corners: CornerParams,
) -> Result<Inference> {
    let n = model.config().seq.n;
    if cues.n() != n {
        return Err(Error::shape(
            "infer",
            format!("{} cue columns for a model with N = {n}", cues.n()),
        ));
    }
    let prediction = model.predict(cues, camera_height)?;
    let layout = match postproc {
        PostProc::None => None,
        PostProc::Manhattan => Some(manhattanize(&prediction, corners)?),
    };
    Ok(Inference { prediction, layout })
}
