use serde::{Deserialize, Serialize};

use super::{LayoutPrediction, RoomLayout};
use crate::error::{Error, Result};
use crate::geometry::{self, longitudes, polygon, Xz};

/// Corner detection thresholds on the normal-angle gradient signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CornerParams {
    /// Minimum gradient, radians.
    pub threshold: f64,
    /// Half-width of the circular non-maximum suppression window, in samples.
    pub nms_window: usize,
    /// A fitted wall whose worst point lies further than this fraction of
    /// its mean depth from the line is split at its sharpest sample. This
    /// recovers corners closer together than the suppression window.
    pub split_tolerance: f64,
}

impl Default for CornerParams {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            nms_window: 5,
            split_tolerance: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    /// 0-based sample slot.
    pub index: usize,
    pub theta: f64,
    pub depth: f64,
}

pub(crate) fn corner_signal(pred: &LayoutPrediction) -> Result<Vec<f64>> {
    let normals = geometry::compute_normals(&pred.depths, pred.camera_height)?;
    Ok(geometry::compute_normal_gradients(&normals))
}

/// Samples whose normal-angle gradient exceeds the threshold and is the
/// maximum of its circular window, sorted by longitude. Ties go to the
/// earliest sample.
pub fn extract_corners(pred: &LayoutPrediction, params: CornerParams) -> Result<Vec<Corner>> {
    if !(params.threshold > 0.0) {
        return Err(Error::Config("corner threshold must be positive".into()));
    }
    let g = corner_signal(pred)?;
    let thetas = longitudes(pred.n());
    let n = g.len() as isize;
    let w = params.nms_window as isize;
    let mut out = Vec::new();
    for i in 0..n {
        let gi = g[i as usize];
        if gi <= params.threshold {
            continue;
        }
        let is_max = (1..=w.min(n - 1)).all(|k| {
            let before = g[(i - k).rem_euclid(n) as usize];
            let after = g[(i + k).rem_euclid(n) as usize];
            gi > before && gi >= after
        });
        if is_max {
            let index = i as usize;
            out.push(Corner {
                index,
                theta: thetas[index],
                depth: pred.depths.as_slice()[index],
            });
        }
    }
    Ok(out)
}

/// A wall fitted to the sample points between two corners.
#[derive(Clone, Debug)]
pub(crate) struct Wall {
    pub indices: Vec<usize>,
    pub centroid: Xz,
    /// Unit direction, oriented along increasing longitude.
    pub dir: Xz,
    pub length: f64,
    /// Corner-adjacent samples were dropped before fitting.
    pub trimmed: bool,
}

impl Wall {
    pub fn fit(points: &[Xz], indices: Vec<usize>) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::Geometry("wall needs at least two points".into()));
        }
        let k = indices.len() as f64;
        let (mut cx, mut cz) = (0.0, 0.0);
        for &i in &indices {
            cx += points[i][0];
            cz += points[i][1];
        }
        let c = [cx / k, cz / k];
        let (mut sxx, mut sxz, mut szz) = (0.0, 0.0, 0.0);
        for &i in &indices {
            let p = polygon::sub(points[i], c);
            sxx += p[0] * p[0];
            sxz += p[0] * p[1];
            szz += p[1] * p[1];
        }
        // principal axis of the 2x2 scatter matrix
        let angle = 0.5 * (2.0 * sxz).atan2(sxx - szz);
        let mut dir = [angle.cos(), angle.sin()];
        let first = points[indices[0]];
        let last = points[*indices.last().expect("non-empty")];
        if polygon::dot(dir, polygon::sub(last, first)) < 0.0 {
            dir = [-dir[0], -dir[1]];
        }
        let proj: Vec<f64> = indices
            .iter()
            .map(|&i| polygon::dot(polygon::sub(points[i], c), dir))
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            indices,
            centroid: c,
            dir,
            length: hi - lo,
            trimmed: false,
        })
    }
}

/// Splits the circular sample sequence into walls at the corner indices.
///
/// A corner at slot `k` separates sample `k` (previous wall) from `k + 1`
/// (next wall). One sample is trimmed at each end of a wall when enough
/// remain, since the corner position is only known to about one sample.
pub(crate) fn segment_walls(
    points: &[Xz],
    gradients: &[f64],
    corners: &[Corner],
    split_tolerance: f64,
    min_turn: f64,
) -> Result<Vec<Wall>> {
    let n = points.len();
    let m = corners.len();
    let mut walls = Vec::with_capacity(m);
    for j in 0..m {
        let start = corners[j].index + 1;
        let end = corners[(j + 1) % m].index;
        let span = (end + n - start) % n + 1;
        let all: Vec<usize> = (0..span).map(|o| (start + o) % n).collect();
        split_bent(
            points,
            gradients,
            all,
            split_tolerance,
            min_turn,
            &mut walls,
        )?;
    }
    Ok(walls)
}

fn trimmed(indices: &[usize]) -> Vec<usize> {
    if indices.len() >= 4 {
        indices[1..indices.len() - 1].to_vec()
    } else {
        indices.to_vec()
    }
}

fn split_bent(
    points: &[Xz],
    gradients: &[f64],
    all: Vec<usize>,
    tolerance: f64,
    min_turn: f64,
    out: &mut Vec<Wall>,
) -> Result<()> {
    let mut wall = Wall::fit(points, trimmed(&all))?;
    wall.trimmed = all.len() >= 4;
    let depth = all.iter().map(|&i| polygon::norm(points[i])).sum::<f64>() / all.len() as f64;
    let worst = all
        .iter()
        .map(|&i| polygon::cross(polygon::sub(points[i], wall.centroid), wall.dir).abs())
        .fold(0.0, f64::max);
    if worst <= tolerance * depth || all.len() < 6 {
        out.push(wall);
        return Ok(());
    }
    let k = (2..all.len() - 2)
        .max_by(|&a, &b| {
            gradients[all[a]]
                .total_cmp(&gradients[all[b]])
                .then(b.cmp(&a))
        })
        .expect("at least two candidates");
    let tail = all[k + 1..].to_vec();
    let head = all[..k + 1].to_vec();
    // a bend too shallow to be a corner is noise
    let turn = polygon::cross(
        Wall::fit(points, trimmed(&head))?.dir,
        Wall::fit(points, trimmed(&tail))?.dir,
    );
    if turn.abs() < min_turn.sin() {
        out.push(wall);
        return Ok(());
    }
    split_bent(points, gradients, head, tolerance, min_turn, out)?;
    split_bent(points, gradients, tail, tolerance, min_turn, out)
}

pub(crate) fn intersect_lines(p: Xz, d: Xz, q: Xz, e: Xz) -> Option<Xz> {
    let denom = polygon::cross(d, e);
    if denom.abs() < 1e-9 {
        return None;
    }
    let s = polygon::cross(polygon::sub(q, p), e) / denom;
    Some([p[0] + s * d[0], p[1] + s * d[1]])
}

/// Rebuilds a polygon from a prediction by fitting a line to every wall
/// between detected corners and intersecting consecutive walls. Walls are
/// not snapped to any orientation.
pub fn reconstruct(pred: &LayoutPrediction, params: CornerParams) -> Result<RoomLayout> {
    let corners = extract_corners(pred, params)?;
    if corners.len() < 3 {
        return Err(Error::Geometry(format!(
            "need at least 3 corners, found {}",
            corners.len()
        )));
    }
    let points = pred.depths.points();
    let g = corner_signal(pred)?;
    let mut walls = segment_walls(
        &points,
        &g,
        &corners,
        params.split_tolerance,
        params.threshold,
    )?;

    // merge neighbours that are effectively the same wall
    let mut i = 0;
    while walls.len() >= 3 && i < walls.len() {
        let j = (i + 1) % walls.len();
        let (a, b) = (walls[i].dir, walls[j].dir);
        if polygon::dot(a, b) > 0.0 && polygon::cross(a, b).abs() < params.threshold.sin() {
            let mut idx = walls[i].indices.clone();
            idx.extend_from_slice(&walls[j].indices);
            walls[i] = Wall::fit(&points, idx)?;
            walls.remove(j);
            if j < i {
                i -= 1;
            }
        } else {
            i += 1;
        }
    }
    if walls.len() < 3 {
        return Err(Error::Geometry("fewer than 3 distinct walls".into()));
    }

    let m = walls.len();
    let mut verts = Vec::with_capacity(m);
    let mut boundary = Vec::with_capacity(m);
    for j in 0..m {
        let (a, b) = (&walls[j], &walls[(j + 1) % m]);
        let last = points[*a.indices.last().expect("non-empty wall")];
        let first = points[b.indices[0]];
        let mid = [0.5 * (last[0] + first[0]), 0.5 * (last[1] + first[1])];
        let reach = polygon::norm(mid);
        // shallow turns intersect far from the samples; keep the corner local
        let v = intersect_lines(a.centroid, a.dir, b.centroid, b.dir)
            .filter(|v| polygon::norm(polygon::sub(*v, mid)) <= 0.5 * reach)
            .unwrap_or(mid);
        verts.push(v);
        boundary.push(mid);
    }
    verts.reverse();
    boundary.reverse();
    RoomLayout::new(verts, pred.room_height, pred.camera_height)
        .or_else(|_| RoomLayout::new(boundary, pred.room_height, pred.camera_height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{generate_synthetic, GeneratorSpec, ShapeKind};
    use std::f64::consts::PI;

    fn cuboid_pred(n: usize) -> (RoomLayout, LayoutPrediction) {
        let l = RoomLayout::new(
            vec![[2.2, 1.3], [-1.1, 1.3], [-1.1, -2.7], [2.2, -2.7]],
            2.8,
            1.6,
        )
        .unwrap();
        let p = LayoutPrediction::from_layout(&l, n).unwrap();
        (l, p)
    }

    fn circular_index_distance(a: usize, b: usize, n: usize) -> usize {
        let d = (a + n - b) % n;
        d.min(n - d)
    }

    #[test]
    fn cuboid_has_four_corners_at_true_longitudes() {
        let (l, p) = cuboid_pred(256);
        let corners = extract_corners(&p, CornerParams::default()).unwrap();
        assert_eq!(corners.len(), 4);
        for v in l.floor() {
            let theta = v[0].atan2(v[1]);
            // fractional slot of the vertex longitude
            let slot = ((theta / (2.0 * PI) + 0.5) * 256.0 - 1.0).rem_euclid(256.0);
            let nearest = corners
                .iter()
                .map(|c| circular_index_distance(c.index, slot.round() as usize % 256, 256))
                .min()
                .unwrap();
            assert!(nearest <= 1, "vertex at slot {slot}");
        }
        assert!(corners.windows(2).all(|w| w[0].theta < w[1].theta));
    }

    #[test]
    fn circle_has_no_corners() {
        let depths = crate::geometry::HorizonDepthSeq::new(vec![3.0; 256]).unwrap();
        let p = LayoutPrediction::new(depths, 2.8, 1.6, "test").unwrap();
        assert!(extract_corners(&p, CornerParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn l_rooms_reconstruct_with_six_vertices() {
        // some generated L rooms put two corners within the suppression
        // window; wall splitting has to recover the missing one
        let spec = GeneratorSpec::new(ShapeKind::L);
        let mut merged = 0;
        for seed in 0..20 {
            let l = generate_synthetic(seed, &spec).unwrap();
            let p = LayoutPrediction::from_layout(&l, 256).unwrap();
            let found = extract_corners(&p, CornerParams::default()).unwrap().len();
            assert!((4..=6).contains(&found), "seed {seed}: {found}");
            merged += usize::from(found < 6);
            let r = reconstruct(&p, CornerParams::default()).unwrap();
            assert_eq!(r.floor().len(), 6, "seed {seed}");
        }
        assert!(merged > 0);
    }

    #[test]
    fn reconstruct_recovers_cuboid() {
        let (l, p) = cuboid_pred(256);
        let r = reconstruct(&p, CornerParams::default()).unwrap();
        assert_eq!(r.floor().len(), 4);
        for v in r.floor() {
            let best = l
                .floor()
                .iter()
                .map(|w| polygon::norm(polygon::sub(*v, *w)))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{v:?}");
        }
    }
}
