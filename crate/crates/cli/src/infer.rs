use std::fs;
use std::path::{Path, PathBuf};

use panolayout::error::{Error, Result};
use panolayout::layout::{CornerParams, RoomLayout};
use panolayout::model::{
    derive_seed, infer, load_model, make_cues, CueSequence, LayoutModel, PostProc, CUE_CHANNELS,
};
use panolayout::numcore::{Checkpoint, Tensor};

use crate::config::RunConfig;

pub struct Args {
    pub checkpoint: PathBuf,
    pub layout: Option<PathBuf>,
    pub cues: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub camera_height: f64,
    pub postproc: PostProc,
    pub out: Option<PathBuf>,
}

/// Cues the model would see for `layout`, at the model's noise level.
pub fn cues_for_layout(
    model: &LayoutModel,
    layout: &RoomLayout,
    seed: Option<u64>,
) -> Result<CueSequence> {
    let cfg = model.config();
    let seed = seed.unwrap_or_else(|| derive_seed(cfg.seed, 0));
    make_cues(layout, cfg.seq.n, cfg.seq.window, cfg.cue_noise, seed)
}

fn read_cues(path: &Path) -> Result<CueSequence> {
    let rows: Vec<[f64; CUE_CHANNELS]> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = rows.len();
    CueSequence::new(Tensor::new(vec![n, CUE_CHANNELS], rows.concat())?)
}

pub fn run(args: Args) -> Result<()> {
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let expected = cfg.as_ref().map(RunConfig::effective_model).transpose()?;
    let corners = cfg.as_ref().map_or(CornerParams::default(), |c| c.corners);
    let model = load_model(&Checkpoint::load(&args.checkpoint)?, expected.as_ref())?;
    let (cues, camera_height) = match (&args.layout, &args.cues) {
        (Some(path), _) => {
            let layout = RoomLayout::read(path)?;
            (
                cues_for_layout(&model, &layout, args.seed)?,
                layout.camera_height(),
            )
        }
        (None, Some(path)) => {
            if !(args.camera_height > 0.0 && args.camera_height.is_finite()) {
                return Err(Error::Config("camera height must be positive".into()));
            }
            (read_cues(path)?, args.camera_height)
        }
        (None, None) => {
            return Err(Error::Config(
                "one of --layout or --cues is required".into(),
            ))
        }
    };
    let result = infer(&model, &cues, camera_height, args.postproc, corners)?;
    let mut text = serde_json::to_string_pretty(&result)?;
    text.push('\n');
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
