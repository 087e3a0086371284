//! Panoramic geometry.
//!
//! Conventions used throughout the crate:
//!
//! * The camera sits at the origin. `y` is vertical and increases downward,
//!   so the floor plane is `y = h_f` with `h_f > 0` the camera height.
//! * Longitude `θ` is measured in the horizontal plane from `+z` toward `+x`;
//!   the horizontal direction of longitude `θ` is `(sin θ, cos θ)` in `(x, z)`.
//! * Sample `i` (1-based, `1..=N`) sits at `θ_i = 2π(i/N − 0.5)`. In code the
//!   sequence is stored 0-based, so slot `k` holds sample `i = k + 1`.
//! * Floor polygons are counter-clockwise, i.e. positive shoelace area in
//!   `(x, z)`. Increasing longitude sweeps the boundary clockwise.

pub mod polygon;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use polygon::Xz;

/// Camera height used by evaluation and the synthetic generator.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanoCoord {
    pub lon: f64,
    pub lat: f64,
}

impl PanoCoord {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-PI..PI).contains(&lon) || lat.abs() >= PI / 2.0 {
            return Err(Error::Geometry(format!(
                "pano coordinate out of range: lon {lon}, lat {lat}"
            )));
        }
        Ok(Self { lon, lat })
    }
}

/// Positive horizontal distances sampled at the `N` equally spaced longitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HorizonDepthSeq(Vec<f64>);

impl HorizonDepthSeq {
    pub fn new(depths: Vec<f64>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::Geometry("empty depth sequence".into()));
        }
        if let Some(d) = depths.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Geometry(format!("depth must be positive, got {d}")));
        }
        Ok(Self(depths))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Horizontal sample points `(x, z)`.
    pub fn points(&self) -> Vec<Xz> {
        longitudes(self.len())
            .iter()
            .zip(&self.0)
            .map(|(t, d)| [d * t.sin(), d * t.cos()])
            .collect()
    }

    /// The sample points as a counter-clockwise polygon.
    pub fn polygon(&self) -> Vec<Xz> {
        let mut p = self.points();
        p.reverse();
        p
    }
}

impl TryFrom<Vec<f64>> for HorizonDepthSeq {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HorizonDepthSeq> for Vec<f64> {
    fn from(s: HorizonDepthSeq) -> Self {
        s.0
    }
}

/// Unit wall normals in the horizontal plane, `[x, z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSeq(pub Vec<Xz>);

impl NormalSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `θ_i = 2π(i/N − 0.5)` for 1-based `i`.
pub fn longitude_of_index(i: usize, n: usize) -> Result<f64> {
    if i == 0 || i > n {
        return Err(Error::Geometry(format!("index {i} outside 1..={n}")));
    }
    Ok(2.0 * PI * (i as f64 / n as f64 - 0.5))
}

/// All `N` sample longitudes, 0-based storage order.
pub fn longitudes(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 2.0 * PI * (i as f64 / n as f64 - 0.5))
        .collect()
}

pub fn horizon_depth(p: Point3) -> f64 {
    p.x.hypot(p.z)
}

pub fn depth_to_point(d: f64, theta: f64, floor_offset: f64) -> Result<Point3> {
    if !(d > 0.0) {
        return Err(Error::Geometry(format!("depth must be positive, got {d}")));
    }
    Ok(Point3 {
        x: d * theta.sin(),
        y: floor_offset,
        z: d * theta.cos(),
    })
}

/// Horizon-depth of a boundary point seen at latitude magnitude `lat` on a
/// plane `offset` meters above or below the camera: `d = offset / tan φ`.
pub fn depth_from_latitude(lat: f64, offset: f64) -> Result<f64> {
    let lat = lat.abs();
    if lat == 0.0 || lat >= PI / 2.0 {
        return Err(Error::Geometry(format!(
            "latitude {lat} does not intersect the plane"
        )));
    }
    Ok(offset / lat.tan())
}

/// Inverse of [`depth_from_latitude`]: `φ = atan(offset / d)`.
pub fn latitude_from_depth(d: f64, offset: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Geometry(format!("depth must be positive, got {d}")));
    }
    Ok((offset / d).atan())
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// First hit of each sample ray with the polygon boundary.
///
/// Edges are swept in angle: every edge visits only the sample rays its
/// angular span can reach, and each candidate ray is confirmed with exact
/// cone tests before the hit distance is taken.
pub fn sample_polygon_boundary(poly: &[Xz], n: usize) -> Result<HorizonDepthSeq> {
    if n == 0 {
        return Err(Error::Geometry("need at least one sample".into()));
    }
    if !polygon::contains(poly, [0.0, 0.0]) {
        return Err(Error::Geometry(
            "camera is outside the floor polygon".into(),
        ));
    }
    let thetas = longitudes(n);
    let rays: Vec<Xz> = thetas.iter().map(|t| [t.sin(), t.cos()]).collect();
    let step = 2.0 * PI / n as f64;
    let frac_index = |t: f64| (t / (2.0 * PI) + 0.5) * n as f64 - 1.0;
    let mut best = vec![f64::INFINITY; n];

    let m = poly.len();
    for e in 0..m {
        let (a, b) = (poly[e], poly[(e + 1) % m]);
        let span_sign = polygon::cross(a, b);
        if span_sign == 0.0 {
            continue;
        }
        let ta = a[0].atan2(a[1]);
        let tb = b[0].atan2(b[1]);
        let sweep = wrap_angle(tb - ta);
        let start = if sweep > 0.0 { ta } else { tb };
        let lo = frac_index(start).floor() as i64 - 1;
        let hi = lo + (sweep.abs() / step).ceil() as i64 + 3;
        let dir = polygon::sub(b, a);
        for k in lo..=hi {
            let idx = k.rem_euclid(n as i64) as usize;
            let r = rays[idx];
            let (ca, cb) = (polygon::cross(a, r), polygon::cross(r, b));
            let inside_cone = if span_sign > 0.0 {
                ca >= 0.0 && cb >= 0.0
            } else {
                ca <= 0.0 && cb <= 0.0
            };
            if !inside_cone {
                continue;
            }
            let denom = polygon::cross(r, dir);
            if denom == 0.0 {
                continue;
            }
            let t = span_sign / denom;
            if t > 0.0 && t < best[idx] {
                best[idx] = t;
            }
        }
    }
    if let Some(i) = best.iter().position(|d| !d.is_finite()) {
        return Err(Error::Geometry(format!(
            "ray {i} misses the polygon boundary"
        )));
    }
    HorizonDepthSeq::new(best)
}

/// Nearest boundary hit along the ray at longitude `theta`, as
/// `(distance, edge index)`. Edge `e` runs from vertex `e` to `e + 1`.
pub fn cast_ray(poly: &[Xz], theta: f64) -> Option<(f64, usize)> {
    let r = [theta.sin(), theta.cos()];
    let m = poly.len();
    let mut best: Option<(f64, usize)> = None;
    for e in 0..m {
        let (a, b) = (poly[e], poly[(e + 1) % m]);
        let dir = polygon::sub(b, a);
        let denom = polygon::cross(r, dir);
        if denom == 0.0 {
            continue;
        }
        // solve t r = a + s (b - a)
        let t = polygon::cross(a, dir) / denom;
        let s = polygon::cross(a, r) / denom;
        if t > 0.0 && (0.0..=1.0).contains(&s) && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, e));
        }
    }
    best
}

/// Horizontal wall normals: the direction to the next sample point rotated
/// by +π/2 about the vertical axis, `(x, z) -> (z, -x)`. Circular.
pub fn compute_normals(depths: &HorizonDepthSeq, floor_offset: f64) -> Result<NormalSeq> {
    let thetas = longitudes(depths.len());
    let pts = depths
        .as_slice()
        .iter()
        .zip(&thetas)
        .map(|(&d, &t)| depth_to_point(d, t, floor_offset))
        .collect::<Result<Vec<_>>>()?;
    let n = pts.len();
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let (p, q) = (pts[i], pts[(i + 1) % n]);
        let (ex, ez) = (q.x - p.x, q.z - p.z);
        // same arithmetic as the loss graph, so exact predictions give g_i
        // bit-identical to the targets
        let len = (ex * ex + ez * ez).sqrt();
        if len == 0.0 {
            return Err(Error::Geometry(format!(
                "coincident boundary points at index {i}"
            )));
        }
        normals.push([ez / len, -ex / len]);
    }
    Ok(NormalSeq(normals))
}

/// `g_i = acos(n_{i-1} · n_{i+1})` with circular neighbours and a clamped dot.
pub fn compute_normal_gradients(normals: &NormalSeq) -> Vec<f64> {
    let n = normals.len();
    (0..n)
        .map(|i| {
            let a = normals.0[(i + n - 1) % n];
            let b = normals.0[(i + 1) % n];
            polygon::dot(a, b).clamp(-1.0, 1.0).acos()
        })
        .collect()
}
