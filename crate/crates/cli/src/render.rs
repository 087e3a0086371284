use std::fs;
use std::path::Path;

use panolayout::error::Result;
use panolayout::layout::{render_boundaries, RenderOptions, RoomLayout};
use panolayout::model::load_model;
use panolayout::numcore::Checkpoint;

use crate::infer::cues_for_layout;

pub fn run(
    input: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    show_gradients: bool,
    width: usize,
    height: usize,
) -> Result<()> {
    let opts = RenderOptions {
        width,
        height,
        show_gradients,
    };
    let layout = RoomLayout::read(input)?;
    let svg = match checkpoint {
        Some(path) => {
            let model = load_model(&Checkpoint::load(path)?, None)?;
            let cues = cues_for_layout(&model, &layout, None)?;
            render_boundaries(&model.predict(&cues, layout.camera_height())?, &opts)?
        }
        None => render_boundaries(&layout, &opts)?,
    };
    fs::write(out, svg)?;
    Ok(())
}
