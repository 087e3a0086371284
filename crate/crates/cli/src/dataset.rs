//! Generated datasets on disk: `manifest.json` plus one layout document per
//! room under `rooms/`.

use std::fs;
use std::path::{Path, PathBuf};

use panolayout::error::{Error, Result};
use panolayout::layout::{generate_synthetic, GeneratorSpec, RoomLayout, ShapeKind};
use panolayout::model::{derive_seed, Dataset, ModelConfig};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const ROOMS: &str = "rooms";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub shapes: Vec<ShapeKind>,
    /// Cue noise standard deviation for every consumer of this dataset.
    pub noise: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!(
                "unknown split {name:?}; expected one of {}",
                SPLITS.join(", ")
            ))),
        }
    }
}

pub fn room_name(i: usize) -> String {
    format!("room-{i:04}")
}

/// Train, val and test sizes: 80/10/10 rounded down, remainder to test.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    let train = count * 8 / 10;
    let val = count / 10;
    (train, val, count - train - val)
}

/// All rooms and the manifest, built in memory.
pub fn generate(
    count: usize,
    seed: u64,
    shapes: &[ShapeKind],
    noise: f64,
) -> Result<(Manifest, Vec<RoomLayout>)> {
    if count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    if shapes.is_empty() {
        return Err(Error::Config("at least one shape is required".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    let specs: Vec<GeneratorSpec> = shapes.iter().map(|&s| GeneratorSpec::new(s)).collect();
    for spec in &specs {
        spec.validate()?;
    }
    let rooms = (0..count)
        .map(|i| generate_synthetic(derive_seed(seed, i as u64), &specs[i % specs.len()]))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = (0..count).map(room_name).collect();
    let (train, val, _) = split_sizes(count);
    let manifest = Manifest {
        seed,
        count,
        shapes: shapes.to_vec(),
        noise,
        train: names[..train].to_vec(),
        val: names[train..train + val].to_vec(),
        test: names[train + val..].to_vec(),
    };
    Ok((manifest, rooms))
}

pub fn write(dir: &Path, manifest: &Manifest, rooms: &[RoomLayout]) -> Result<()> {
    fs::create_dir_all(dir.join(ROOMS))?;
    for (i, room) in rooms.iter().enumerate() {
        room.write(&room_path(dir, &room_name(i)))?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn room_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(ROOMS).join(format!("{name}.json"))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    Ok(serde_json::from_str(&text)?)
}

/// Named layouts of one split, in manifest order.
pub fn load_split(
    dir: &Path,
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<(String, RoomLayout)>> {
    manifest
        .split(split)?
        .iter()
        .map(|name| Ok((name.clone(), RoomLayout::read(&room_path(dir, name))?)))
        .collect()
}

/// One split with cues synthesized at the dataset's noise level.
pub fn build(dir: &Path, manifest: &Manifest, split: &str, model: &ModelConfig) -> Result<Dataset> {
    let layouts = load_split(dir, manifest, split)?;
    let config = ModelConfig {
        cue_noise: manifest.noise,
        ..model.clone()
    };
    Dataset::from_layouts(layouts, &config)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
