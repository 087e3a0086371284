use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::RoomShape;
use crate::error::{Error, Result};
use crate::geometry::cast_ray;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Surface {
    Ceiling = 0,
    Wall = 1,
    Floor = 2,
}

/// Per-pixel surface labels of an equirectangular panorama, row-major with
/// row 0 at the top (latitude +π/2) and column 0 at longitude −π.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquirectMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Surface>,
}

impl EquirectMask {
    pub fn get(&self, row: usize, col: usize) -> Surface {
        self.labels[row * self.width + col]
    }

    /// Fraction of pixels whose labels differ.
    pub fn disagreement(&self, other: &EquirectMask) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                "mask comparison",
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        let diff = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count();
        Ok(diff as f64 / self.labels.len() as f64)
    }
}

/// Labels each pixel by the surface its ray meets first. Pixel centres are
/// used: column `c` looks along `θ = 2π((c + ½)/W − ½)` and row `r` at
/// latitude `π/2 − π(r + ½)/H`. A predicted ceiling at or below the camera
/// puts the ceiling boundary at or below the horizon; the mask is still
/// defined so such predictions score instead of failing.
pub fn rasterize(shape: &impl RoomShape, width: usize, height: usize) -> Result<EquirectMask> {
    if width == 0 || height == 0 {
        return Err(Error::Config("mask must be at least 1x1".into()));
    }
    let plan = shape.floor_plan();
    let h_f = shape.camera_height();
    let h_c = shape.room_height() - h_f;
    if !(h_f > 0.0 && h_c.is_finite()) {
        return Err(Error::Geometry(format!(
            "camera height must be positive, got {h_f}"
        )));
    }
    let mut labels = vec![Surface::Wall; width * height];
    for c in 0..width {
        let theta = 2.0 * PI * ((c as f64 + 0.5) / width as f64 - 0.5);
        let (d, _) = cast_ray(&plan, theta)
            .ok_or_else(|| Error::Geometry(format!("column {c} ray misses the floor plan")))?;
        let floor_lat = (h_f / d).atan();
        let ceil_lat = (h_c / d).atan();
        for r in 0..height {
            let lat = PI / 2.0 - PI * (r as f64 + 0.5) / height as f64;
            labels[r * width + c] = if lat > ceil_lat {
                Surface::Ceiling
            } else if lat < -floor_lat {
                Surface::Floor
            } else {
                Surface::Wall
            };
        }
    }
    Ok(EquirectMask {
        width,
        height,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayoutPrediction, RoomLayout};

    #[test]
    fn cuboid_mask_is_banded() {
        let l = RoomLayout::new(
            vec![[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]],
            3.2,
            1.6,
        )
        .unwrap();
        let m = rasterize(&l, 64, 32).unwrap();
        // top row ceiling, bottom row floor, horizon row wall
        for c in 0..64 {
            assert_eq!(m.get(0, c), Surface::Ceiling);
            assert_eq!(m.get(31, c), Surface::Floor);
            assert_eq!(m.get(16, c), Surface::Wall);
        }
        // symmetric room: ceiling and floor cover the same pixel count
        let count = |s| m.labels.iter().filter(|&&l| l == s).count();
        assert_eq!(count(Surface::Ceiling), count(Surface::Floor));
    }

    #[test]
    fn corner_aligned_prediction_matches_layout() {
        // square corners at ±π/4, ±3π/4 fall on sample longitudes when 8 | N
        let l = RoomLayout::new(
            vec![[1.5, 1.5], [-1.5, 1.5], [-1.5, -1.5], [1.5, -1.5]],
            2.9,
            1.6,
        )
        .unwrap();
        let p = LayoutPrediction::from_layout(&l, 256).unwrap();
        let a = rasterize(&l, 256, 128).unwrap();
        let b = rasterize(&p, 256, 128).unwrap();
        assert_eq!(a.disagreement(&b).unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let l = RoomLayout::new(
            vec![[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]],
            3.0,
            1.6,
        )
        .unwrap();
        let a = rasterize(&l, 8, 4).unwrap();
        let b = rasterize(&l, 16, 8).unwrap();
        assert!(a.disagreement(&b).is_err());
        assert!(rasterize(&l, 0, 4).is_err());
    }

    #[test]
    fn low_predicted_ceiling_still_rasterizes() {
        use crate::layout::LayoutPrediction;
        let l = RoomLayout::new(
            vec![[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]],
            3.0,
            1.6,
        )
        .unwrap();
        let mut p = LayoutPrediction::from_layout(&l, 16).unwrap();
        p.room_height = 1.2;
        let m = rasterize(&p, 8, 8).unwrap();
        // the ceiling boundary now lies below the horizon
        assert!((0..8).all(|c| m.get(4, c) == Surface::Ceiling));
        p.camera_height = 0.0;
        assert!(rasterize(&p, 8, 8).is_err());
    }
}
