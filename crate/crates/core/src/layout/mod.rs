//! Room layouts: data model, JSON documents, synthetic generation, corner
//! extraction, Manhattan post-processing, rasterization and rendering.

mod corners;
mod generate;
mod manhattan;
mod raster;
mod render;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use corners::{extract_corners, reconstruct, Corner, CornerParams};
pub use generate::{generate_synthetic, GeneratorSpec, ShapeKind};
pub use manhattan::{dominant_orientation, manhattanize};
pub use raster::{rasterize, EquirectMask, Surface};
pub use render::{render_boundaries, RenderOptions};

use crate::error::{Error, Result};
use crate::geometry::{self, polygon, HorizonDepthSeq, Xz};

/// Floor polygon around the camera plus the vertical extents of the room.
///
/// Invariants, checked by [`RoomLayout::new`]: the polygon is simple,
/// counter-clockwise and strictly contains the origin; `0 < h_f < h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutDoc", into = "LayoutDoc")]
pub struct RoomLayout {
    floor: Vec<Xz>,
    room_height: f64,
    camera_height: f64,
}

/// On-disk JSON document for a [`RoomLayout`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDoc {
    pub camera_height_m: f64,
    pub room_height_m: f64,
    pub floor_polygon_xz: Vec<[f64; 2]>,
}

impl TryFrom<LayoutDoc> for RoomLayout {
    type Error = Error;
    fn try_from(doc: LayoutDoc) -> Result<Self> {
        RoomLayout::new(doc.floor_polygon_xz, doc.room_height_m, doc.camera_height_m)
    }
}

impl From<RoomLayout> for LayoutDoc {
    fn from(l: RoomLayout) -> Self {
        LayoutDoc {
            camera_height_m: l.camera_height,
            room_height_m: l.room_height,
            floor_polygon_xz: l.floor,
        }
    }
}

impl RoomLayout {
    /// Validates and stores a layout; clockwise input is reversed.
    pub fn new(mut floor: Vec<Xz>, room_height: f64, camera_height: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidLayout(m));
        if floor.len() < 3 {
            return bad(format!("polygon needs 3+ vertices, got {}", floor.len()));
        }
        if floor.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite vertex".into());
        }
        if !(camera_height.is_finite() && camera_height > 0.0) {
            return bad(format!(
                "camera height must be positive, got {camera_height}"
            ));
        }
        if !(room_height.is_finite() && room_height > camera_height) {
            return bad(format!(
                "room height {room_height} must exceed camera height {camera_height}"
            ));
        }
        if !polygon::is_simple(&floor) {
            return bad("floor polygon is not simple".into());
        }
        if !polygon::contains(&floor, [0.0, 0.0])
            || polygon::distance_to_boundary(&floor, [0.0, 0.0]) < 1e-9
        {
            return bad("camera (origin) is not strictly inside the floor polygon".into());
        }
        if polygon::signed_area(&floor) < 0.0 {
            floor.reverse();
        }
        Ok(Self {
            floor,
            room_height,
            camera_height,
        })
    }

    pub fn floor(&self) -> &[Xz] {
        &self.floor
    }

    pub fn room_height(&self) -> f64 {
        self.room_height
    }

    pub fn camera_height(&self) -> f64 {
        self.camera_height
    }

    /// Distance from the camera up to the ceiling.
    pub fn ceiling_offset(&self) -> f64 {
        self.room_height - self.camera_height
    }

    pub fn floor_area(&self) -> f64 {
        polygon::area(&self.floor)
    }

    /// Horizon-depths at `n` equal longitude intervals.
    pub fn sample(&self, n: usize) -> Result<HorizonDepthSeq> {
        geometry::sample_polygon_boundary(&self.floor, n)
    }

    /// Every linear dimension multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let floor = self.floor.iter().map(|p| [p[0] * c, p[1] * c]).collect();
        Self::new(floor, self.room_height * c, self.camera_height * c)
    }

    /// Rotated about the vertical axis so longitudes increase by `angle`.
    pub fn rotated(&self, angle: f64) -> Result<Self> {
        // a point at longitude θ moves to θ + angle: (x, z) = d (sin, cos)
        let floor = self
            .floor
            .iter()
            .map(|p| polygon::rotate(*p, -angle))
            .collect();
        Self::new(floor, self.room_height, self.camera_height)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Network output: one horizon-depth per longitude and a room height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPrediction {
    pub depths: HorizonDepthSeq,
    pub room_height: f64,
    /// Camera height the depths are expressed against.
    pub camera_height: f64,
    pub provenance: String,
}

impl LayoutPrediction {
    pub fn new(
        depths: HorizonDepthSeq,
        room_height: f64,
        camera_height: f64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if !(room_height.is_finite() && room_height > 0.0) {
            return Err(Error::Geometry(format!(
                "predicted height must be positive, got {room_height}"
            )));
        }
        Ok(Self {
            depths,
            room_height,
            camera_height,
            provenance: provenance.into(),
        })
    }

    /// The error-free prediction of `layout` at `n` samples.
    pub fn from_layout(layout: &RoomLayout, n: usize) -> Result<Self> {
        Self::new(
            layout.sample(n)?,
            layout.room_height(),
            layout.camera_height(),
            "ground-truth",
        )
    }

    pub fn n(&self) -> usize {
        self.depths.len()
    }

    /// Floor plan through the sample points, counter-clockwise.
    pub fn floor_polygon(&self) -> Vec<Xz> {
        self.depths.polygon()
    }
}

/// Anything with a floor plan and vertical extents.
pub trait RoomShape {
    fn floor_plan(&self) -> Vec<Xz>;
    fn room_height(&self) -> f64;
    fn camera_height(&self) -> f64;
}

impl RoomShape for RoomLayout {
    fn floor_plan(&self) -> Vec<Xz> {
        self.floor.clone()
    }
    fn room_height(&self) -> f64 {
        self.room_height
    }
    fn camera_height(&self) -> f64 {
        self.camera_height
    }
}

impl RoomShape for LayoutPrediction {
    fn floor_plan(&self) -> Vec<Xz> {
        self.floor_polygon()
    }
    fn room_height(&self) -> f64 {
        self.room_height
    }
    fn camera_height(&self) -> f64 {
        self.camera_height
    }
}
