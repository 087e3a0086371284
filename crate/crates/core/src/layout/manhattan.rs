use std::f64::consts::{FRAC_PI_2, PI};

use super::corners::{corner_signal, extract_corners, segment_walls, Wall};
use super::{CornerParams, LayoutPrediction, RoomLayout};
use crate::error::{Error, Result};
use crate::geometry::{cast_ray, polygon, Xz};

const BINS: usize = 90;
const REFINE_WINDOW: f64 = 5.0 * PI / 180.0;
const REFINE_ITERS: usize = 3;

fn fold_quarter(a: f64) -> f64 {
    let r = a.rem_euclid(FRAC_PI_2);
    // rem_euclid can round up to the modulus for tiny negative inputs
    if r >= FRAC_PI_2 {
        0.0
    } else {
        r
    }
}

/// Wall direction modulo a quarter turn, from a length-weighted histogram of
/// wall directions refined by a circular mean around the peak.
fn orientation_of(walls: &[Wall]) -> f64 {
    let bin_width = FRAC_PI_2 / BINS as f64;
    let trimmed: Vec<Wall> = walls.iter().filter(|w| w.trimmed).cloned().collect();
    let walls = if trimmed.is_empty() { walls } else { &trimmed };
    let angles: Vec<f64> = walls
        .iter()
        .map(|w| fold_quarter(w.dir[1].atan2(w.dir[0])))
        .collect();
    let mut hist = [0.0; BINS];
    for (a, w) in angles.iter().zip(walls) {
        hist[((a / bin_width) as usize).min(BINS - 1)] += w.length.max(1e-12);
    }
    let smooth: Vec<f64> = (0..BINS)
        .map(|b| hist[(b + BINS - 1) % BINS] + 2.0 * hist[b] + hist[(b + 1) % BINS])
        .collect();
    let peak = (0..BINS)
        .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let centre = (peak as f64 + 0.5) * bin_width;

    // angles live on a circle of period π/2, so average 4α
    let (mut s, mut c) = (0.0, 0.0);
    for (a, w) in angles.iter().zip(walls) {
        let off = fold_quarter(a - centre + FRAC_PI_2 / 2.0) - FRAC_PI_2 / 2.0;
        if off.abs() <= REFINE_WINDOW {
            s += w.length * (4.0 * a).sin();
            c += w.length * (4.0 * a).cos();
        }
    }
    if s == 0.0 && c == 0.0 {
        return centre;
    }
    fold_quarter(s.atan2(c) / 4.0)
}

fn detect_walls(pred: &LayoutPrediction, params: CornerParams) -> Result<(Vec<Xz>, Vec<Wall>)> {
    let corners = extract_corners(pred, params)?;
    if corners.len() < 4 {
        return Err(Error::Geometry(format!(
            "Manhattan fit needs at least 4 corners, found {}",
            corners.len()
        )));
    }
    let points = pred.depths.points();
    let g = corner_signal(pred)?;
    let walls = segment_walls(
        &points,
        &g,
        &corners,
        params.split_tolerance,
        params.threshold,
    )?;
    Ok((points, walls))
}

/// Dominant wall direction in `[0, π/2)`, as the angle of the wall
/// direction from the +x axis towards +z.
pub fn dominant_orientation(pred: &LayoutPrediction, params: CornerParams) -> Result<f64> {
    let (_, walls) = detect_walls(pred, params)?;
    Ok(orientation_of(&walls))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Axis {
    /// Runs along x: the wall is `z = offset`.
    X,
    /// Runs along z: the wall is `x = offset`.
    Z,
}

struct SnappedWall {
    axis: Axis,
    indices: Vec<usize>,
    offset: f64,
}

fn offset_of(axis: Axis, points: &[Xz], indices: &[usize]) -> Option<f64> {
    if indices.is_empty() {
        return None;
    }
    let coord = match axis {
        Axis::X => 1,
        Axis::Z => 0,
    };
    Some(indices.iter().map(|&i| points[i][coord]).sum::<f64>() / indices.len() as f64)
}

/// Vertex `j` joins wall `j` to wall `j + 1`, in order of increasing longitude.
fn vertices(walls: &[SnappedWall]) -> Vec<Xz> {
    let m = walls.len();
    (0..m)
        .map(|j| {
            let (a, b) = (&walls[j], &walls[(j + 1) % m]);
            match a.axis {
                Axis::X => [b.offset, a.offset],
                Axis::Z => [a.offset, b.offset],
            }
        })
        .collect()
}

/// Snaps a prediction to a rectilinear polygon aligned with its dominant
/// wall direction.
///
/// Walls between detected corners are assigned to the nearer of the two
/// frame axes, consecutive walls on the same axis are merged, and each wall
/// offset is the mean perpendicular coordinate of its samples. Samples are
/// then reassigned to the wall their ray hits and offsets re-estimated.
pub fn manhattanize(pred: &LayoutPrediction, params: CornerParams) -> Result<RoomLayout> {
    let (points, walls) = detect_walls(pred, params)?;
    let psi = orientation_of(&walls);
    let local: Vec<Xz> = points.iter().map(|p| polygon::rotate(*p, -psi)).collect();

    let mut snapped: Vec<SnappedWall> = Vec::new();
    for w in &walls {
        let d = polygon::rotate(w.dir, -psi);
        let axis = if d[0].abs() >= d[1].abs() {
            Axis::X
        } else {
            Axis::Z
        };
        match snapped.last_mut() {
            Some(last) if last.axis == axis => last.indices.extend_from_slice(&w.indices),
            _ => snapped.push(SnappedWall {
                axis,
                indices: w.indices.clone(),
                offset: 0.0,
            }),
        }
    }
    if snapped.len() > 1 && snapped[0].axis == snapped[snapped.len() - 1].axis {
        let last = snapped.pop().expect("len > 1");
        let mut idx = last.indices;
        idx.extend_from_slice(&snapped[0].indices);
        snapped[0].indices = idx;
    }
    if snapped.len() < 4 {
        return Err(Error::Geometry(format!(
            "only {} axis-aligned walls after merging",
            snapped.len()
        )));
    }
    for w in &mut snapped {
        w.offset = offset_of(w.axis, &local, &w.indices).expect("walls are non-empty");
    }

    for _ in 0..REFINE_ITERS {
        let verts = vertices(&snapped);
        if !polygon::is_simple(&verts) || !polygon::contains(&verts, [0.0, 0.0]) {
            break;
        }
        let m = snapped.len();
        let n = local.len();
        let hit: Vec<Option<usize>> = local
            .iter()
            .map(|q| cast_ray(&verts, q[0].atan2(q[1])).map(|(_, e)| (e + 1) % m))
            .collect();
        // samples next to a corner may sit on either wall; leave them out
        let mut clean = vec![Vec::new(); m];
        let mut any = vec![Vec::new(); m];
        for i in 0..n {
            if let Some(w) = hit[i] {
                any[w].push(i);
                if hit[(i + n - 1) % n] == Some(w) && hit[(i + 1) % n] == Some(w) {
                    clean[w].push(i);
                }
            }
        }
        for ((w, c), a) in snapped.iter_mut().zip(clean).zip(any) {
            let idx = if c.is_empty() { a } else { c };
            if let Some(off) = offset_of(w.axis, &local, &idx) {
                w.offset = off;
                w.indices = idx;
            }
        }
    }

    let verts = vertices(&snapped)
        .into_iter()
        .map(|v| polygon::rotate(v, psi))
        .collect();
    RoomLayout::new(verts, pred.room_height, pred.camera_height)
}
