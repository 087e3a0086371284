use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RoomLayout;
use crate::error::{Error, Result};
use crate::geometry::{polygon, Xz, DEFAULT_CAMERA_HEIGHT};

/// Rectilinear floor shapes. `Rectilinear(k)` has `k` vertices, `k` even in `4..=12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Cuboid,
    L,
    T,
    Rectilinear(usize),
}

impl ShapeKind {
    pub fn vertex_count(self) -> usize {
        match self {
            ShapeKind::Cuboid => 4,
            ShapeKind::L => 6,
            ShapeKind::T => 8,
            ShapeKind::Rectilinear(k) => k,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeKind::Cuboid => write!(f, "cuboid"),
            ShapeKind::L => write!(f, "L"),
            ShapeKind::T => write!(f, "T"),
            ShapeKind::Rectilinear(k) => write!(f, "rectilinear-{k}"),
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cuboid" => Ok(ShapeKind::Cuboid),
            "L" | "l" => Ok(ShapeKind::L),
            "T" | "t" => Ok(ShapeKind::T),
            _ => {
                let k = s
                    .strip_prefix("rectilinear-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown shape {s:?}")))?;
                Ok(ShapeKind::Rectilinear(k))
            }
        }
    }
}

impl Serialize for ShapeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ShapeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub shape: ShapeKind,
    /// Range of the bounding-rectangle side lengths, meters.
    pub extent_min: f64,
    pub extent_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    /// Rotation of the Manhattan frame about the vertical axis, radians.
    #[serde(default)]
    pub rotation: f64,
}

fn default_camera_height() -> f64 {
    DEFAULT_CAMERA_HEIGHT
}

impl GeneratorSpec {
    pub fn new(shape: ShapeKind) -> Self {
        Self {
            shape,
            extent_min: 2.0,
            extent_max: 6.0,
            height_min: 2.4,
            height_max: 3.2,
            camera_height: DEFAULT_CAMERA_HEIGHT,
            rotation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.extent_min > 0.0 && self.extent_max >= self.extent_min) {
            return bad(format!(
                "extents must satisfy 0 < min <= max, got {}..{}",
                self.extent_min, self.extent_max
            ));
        }
        if !(self.camera_height > 0.0 && self.height_min <= self.height_max) {
            return bad("camera height must be positive and height range ordered".into());
        }
        if self.height_min <= self.camera_height {
            return bad(format!(
                "room height {} does not clear camera height {}",
                self.height_min, self.camera_height
            ));
        }
        if let ShapeKind::Rectilinear(k) = self.shape {
            if !(4..=12).contains(&k) || k % 2 != 0 {
                return bad(format!("rectilinear-{k}: k must be even in 4..=12"));
            }
        }
        Ok(())
    }
}

// Corners of the bounding rectangle, counter-clockwise from (0, 0).
const BL: usize = 0;
const BR: usize = 1;
const TR: usize = 2;
const TL: usize = 3;

/// Deterministic rectilinear room for `seed`.
///
/// The room is a rectangle with rectangular notches cut from some of its
/// corners. Each notch spans less than half of either side, so the region
/// from which every wall is visible is a non-empty box; the camera is placed
/// inside that box (away from its edges) and becomes the origin.
pub fn generate_synthetic(seed: u64, spec: &GeneratorSpec) -> Result<RoomLayout> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let w = uniform(spec.extent_min, spec.extent_max);
    let d = uniform(spec.extent_min, spec.extent_max);
    let height = uniform(spec.height_min, spec.height_max);

    let notched: Vec<usize> = match spec.shape {
        ShapeKind::Cuboid => vec![],
        ShapeKind::L => vec![(uniform(0.0, 4.0) as usize).min(3)],
        ShapeKind::T => {
            let side = (uniform(0.0, 4.0) as usize).min(3);
            vec![side, (side + 1) % 4]
        }
        ShapeKind::Rectilinear(k) => {
            let mut corners = vec![BL, BR, TR, TL];
            // partial Fisher-Yates
            for i in 0..3 {
                let j = i + (uniform(0.0, (4 - i) as f64) as usize).min(3 - i);
                corners.swap(i, j);
            }
            corners.truncate((k - 4) / 2);
            corners.sort_unstable();
            corners
        }
    };
    let mut notch = [None::<(f64, f64)>; 4];
    for &c in &notched {
        notch[c] = Some((uniform(0.2, 0.35) * w, uniform(0.2, 0.35) * d));
    }

    let rect = [[0.0, 0.0], [w, 0.0], [w, d], [0.0, d]];
    let mut poly: Vec<Xz> = Vec::with_capacity(spec.shape.vertex_count());
    for c in 0..4 {
        let corner = rect[c];
        let Some((nx, nz)) = notch[c] else {
            poly.push(corner);
            continue;
        };
        let incoming = polygon::sub(corner, rect[(c + 3) % 4]);
        let outgoing = polygon::sub(rect[(c + 1) % 4], corner);
        let unit = |v: Xz| {
            let l = polygon::norm(v);
            [v[0] / l, v[1] / l]
        };
        let (ein, eout) = (unit(incoming), unit(outgoing));
        let (a, b) = if ein[0] != 0.0 { (nx, nz) } else { (nz, nx) };
        let p1 = [corner[0] - ein[0] * a, corner[1] - ein[1] * a];
        let p2 = [p1[0] + eout[0] * b, p1[1] + eout[1] * b];
        let p3 = [corner[0] + eout[0] * b, corner[1] + eout[1] * b];
        poly.extend([p1, p2, p3]);
    }

    let nx = |c: usize| notch[c].map_or(0.0, |n| n.0);
    let nz = |c: usize| notch[c].map_or(0.0, |n| n.1);
    let (x_lo, x_hi) = (nx(BL).max(nx(TL)), w - nx(BR).max(nx(TR)));
    let (z_lo, z_hi) = (nz(BL).max(nz(BR)), d - nz(TL).max(nz(TR)));
    if !(x_hi > x_lo && z_hi > z_lo) {
        return Err(Error::Config("no camera position sees every wall".into()));
    }
    let mx = 0.25 * (x_hi - x_lo);
    let mz = 0.25 * (z_hi - z_lo);
    let cam = [uniform(x_lo + mx, x_hi - mx), uniform(z_lo + mz, z_hi - mz)];

    let floor = poly
        .iter()
        .map(|p| polygon::rotate(polygon::sub(*p, cam), spec.rotation))
        .collect();
    RoomLayout::new(floor, height, spec.camera_height)
}
