//! Layout evaluation: floor and volume IoU, depth error, corner error and
//! pixel error.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon, HorizonDepthSeq, Xz, DEFAULT_CAMERA_HEIGHT};
use crate::layout::{rasterize, EquirectMask, LayoutPrediction, RoomLayout, RoomShape};

pub const DEFAULT_GRID: usize = 1024;
pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Cell counts of two polygons rasterized on a shared grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Coverage {
    a: u64,
    b: u64,
    both: u64,
}

/// Column index ranges `[lo, hi)` of the cells in one grid row whose centres
/// lie inside `poly` (even-odd rule, half-open crossings).
fn row_spans(poly: &[Xz], z: f64, x0: f64, dx: f64, g: usize) -> Vec<(usize, usize)> {
    let n = poly.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > z) != (b[1] > z) {
            xs.push(a[0] + (z - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
        }
    }
    xs.sort_by(f64::total_cmp);
    let col = |x: f64| ((x - x0) / dx - 0.5).ceil().clamp(0.0, g as f64) as usize;
    xs.chunks_exact(2)
        .map(|p| (col(p[0]), col(p[1])))
        .filter(|(lo, hi)| hi > lo)
        .collect()
}

fn overlap(a: &[(usize, usize)], b: &[(usize, usize)]) -> u64 {
    let (mut i, mut j, mut total) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += (hi - lo) as u64;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn coverage(a: &[Xz], b: &[Xz], grid: usize) -> Result<Coverage> {
    if grid == 0 {
        return Err(Error::Config("IoU grid must be positive".into()));
    }
    for p in [a, b] {
        if p.len() < 3 || polygon::area(p) == 0.0 {
            return Err(Error::Geometry("IoU of a zero-area polygon".into()));
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in a.iter().chain(b) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let dx = (hi[0] - lo[0]) / grid as f64;
    let dz = (hi[1] - lo[1]) / grid as f64;
    let mut c = Coverage {
        a: 0,
        b: 0,
        both: 0,
    };
    for r in 0..grid {
        let z = lo[1] + (r as f64 + 0.5) * dz;
        let sa = row_spans(a, z, lo[0], dx, grid);
        let sb = row_spans(b, z, lo[0], dx, grid);
        c.a += sa.iter().map(|(l, h)| (h - l) as u64).sum::<u64>();
        c.b += sb.iter().map(|(l, h)| (h - l) as u64).sum::<u64>();
        c.both += overlap(&sa, &sb);
    }
    Ok(c)
}

/// Floor-plan intersection over union on a `grid × grid` raster of the
/// joint bounding box.
pub fn iou2d_grid(a: &[Xz], b: &[Xz], grid: usize) -> Result<f64> {
    let c = coverage(a, b, grid)?;
    let union = c.a + c.b - c.both;
    Ok(if union == 0 {
        0.0
    } else {
        c.both as f64 / union as f64
    })
}

pub fn iou2d(a: &[Xz], b: &[Xz]) -> Result<f64> {
    iou2d_grid(a, b, DEFAULT_GRID)
}

/// Volume IoU of two rooms extruded from a shared floor plane.
pub fn iou3d_grid(a: &impl RoomShape, b: &impl RoomShape, grid: usize) -> Result<f64> {
    let (ha, hb) = (a.room_height(), b.room_height());
    if !(ha > 0.0 && hb > 0.0) {
        return Err(Error::Geometry(format!(
            "room heights must be positive: {ha}, {hb}"
        )));
    }
    let c = coverage(&a.floor_plan(), &b.floor_plan(), grid)?;
    let inter = c.both as f64 * ha.min(hb);
    let union = c.a as f64 * ha + c.b as f64 * hb - inter;
    Ok(if union <= 0.0 { 0.0 } else { inter / union })
}

pub fn iou3d(a: &impl RoomShape, b: &impl RoomShape) -> Result<f64> {
    iou3d_grid(a, b, DEFAULT_GRID)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub delta1: f64,
}

/// RMSE and δ₁ after rescaling each sequence so its camera sits 1.6 m above
/// the floor.
pub fn depth_metrics(
    pred: &HorizonDepthSeq,
    pred_camera_height: f64,
    gt: &HorizonDepthSeq,
    gt_camera_height: f64,
) -> Result<DepthMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "depth_metrics",
            format!("lengths {} and {}", pred.len(), gt.len()),
        ));
    }
    if !(pred_camera_height > 0.0 && gt_camera_height > 0.0) {
        return Err(Error::Geometry("camera heights must be positive".into()));
    }
    let sp = DEFAULT_CAMERA_HEIGHT / pred_camera_height;
    let sg = DEFAULT_CAMERA_HEIGHT / gt_camera_height;
    let n = pred.len() as f64;
    let (mut sq, mut hits) = (0.0, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (p, g) = (p * sp, g * sg);
        sq += (p - g) * (p - g);
        if (p / g).max(g / p) < DELTA1_THRESHOLD {
            hits += 1;
        }
    }
    Ok(DepthMetrics {
        rmse: (sq / n).sqrt(),
        delta1: hits as f64 / n,
    })
}

/// Pixel positions `[u, v]` of the ceiling and floor corner above and below
/// every floor-plan vertex on a `width × height` panorama.
pub fn corner_pixels(shape: &impl RoomShape, width: usize, height: usize) -> Vec<[f64; 2]> {
    let (w, h) = (width as f64, height as f64);
    let h_f = shape.camera_height();
    let h_c = shape.room_height() - h_f;
    let mut out = Vec::new();
    for v in shape.floor_plan() {
        let d = polygon::norm(v);
        let u = (v[0].atan2(v[1]) / (2.0 * PI) + 0.5) * w;
        let row = |lat: f64| (0.5 - lat / PI) * h;
        out.push([u, row((h_c / d).atan())]);
        out.push([u, row(-(h_f / d).atan())]);
    }
    out
}

/// Minimum-cost perfect assignment of rows to columns of a square matrix.
/// Returns the column chosen for every row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // potentials and matching over 1-based indices, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Corner error on a `width × height` panorama.
///
/// Corners are matched one-to-one at minimum total distance, with horizontal
/// distance measured around the seam. Each corner left unmatched because the
/// sets differ in size costs one image diagonal. The total is divided by the
/// diagonal and by the size of the larger set.
pub fn corner_error(
    pred: &[[f64; 2]],
    gt: &[[f64; 2]],
    width: usize,
    height: usize,
) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Geometry(
            "corner error needs ground-truth corners".into(),
        ));
    }
    let w = width as f64;
    let diag = w.hypot(height as f64);
    let dist = |a: [f64; 2], b: [f64; 2]| {
        let du = (a[0] - b[0]).abs().rem_euclid(w);
        du.min(w - du).hypot(a[1] - b[1])
    };
    let k = pred.len().max(gt.len());
    // pad the smaller side with dummies costing one diagonal
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| match (pred.get(i), gt.get(j)) {
                    (Some(&p), Some(&g)) => dist(p, g),
                    _ => diag,
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(total / (diag * k as f64))
}

pub fn pixel_error(pred: &EquirectMask, gt: &EquirectMask) -> Result<f64> {
    pred.disagreement(gt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub grid: usize,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            image_width: 1024,
            image_height: 512,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou2d: f64,
    pub iou3d: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub ce: f64,
    pub pe: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 6] = ["iou2d", "iou3d", "rmse", "delta1", "ce", "pe"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.iou2d,
            self.iou3d,
            self.rmse,
            self.delta1,
            self.ce,
            self.pe,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            iou2d: v[0],
            iou3d: v[1],
            rmse: v[2],
            delta1: v[3],
            ce: v[4],
            pe: v[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// All metrics of one prediction. The floor shape used for IoU, corner and
/// pixel error is `shape` when given (for example a Manhattan fit),
/// otherwise the polygon through the predicted samples.
pub fn evaluate(
    pred: &LayoutPrediction,
    shape: Option<&RoomLayout>,
    gt: &RoomLayout,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let gt_depths = gt.sample(pred.n())?;
    let depth = depth_metrics(
        &pred.depths,
        pred.camera_height,
        &gt_depths,
        gt.camera_height(),
    )?;
    let (w, h) = (opts.image_width, opts.image_height);
    let gt_mask = rasterize(gt, w, h)?;
    let gt_corners = corner_pixels(gt, w, h);
    let (iou2d, iou3d, ce, pe) = match shape {
        Some(s) => (
            iou2d_grid(s.floor(), gt.floor(), opts.grid)?,
            iou3d_grid(s, gt, opts.grid)?,
            corner_error(&corner_pixels(s, w, h), &gt_corners, w, h)?,
            pixel_error(&rasterize(s, w, h)?, &gt_mask)?,
        ),
        None => {
            let plan = pred.floor_polygon();
            // corners of a raw prediction come from its corner detector
            let pred_shape = crate::layout::reconstruct(pred, Default::default()).ok();
            let corners = pred_shape
                .as_ref()
                .map(|s| corner_pixels(s, w, h))
                .unwrap_or_default();
            (
                iou2d_grid(&plan, gt.floor(), opts.grid)?,
                iou3d_grid(pred, gt, opts.grid)?,
                corner_error(&corners, &gt_corners, w, h)?,
                pixel_error(&rasterize(pred, w, h)?, &gt_mask)?,
            )
        }
    };
    Ok(MetricReport {
        iou2d,
        iou3d,
        rmse: depth.rmse,
        delta1: depth.delta1,
        ce,
        pe,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: MetricReport,
    pub median: MetricReport,
}

/// Column means (summed in row order) and medians.
pub fn summarize(rows: &[MetricReport]) -> Result<MetricSummary> {
    if rows.is_empty() {
        return Err(Error::Config("no metric rows to summarize".into()));
    }
    let mut mean = [0.0; 6];
    let mut median = [0.0; 6];
    for c in 0..6 {
        let mut col: Vec<f64> = rows.iter().map(|r| r.values()[c]).collect();
        mean[c] = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        let m = col.len();
        median[c] = if m % 2 == 1 {
            col[m / 2]
        } else {
            0.5 * (col[m / 2 - 1] + col[m / 2])
        };
    }
    Ok(MetricSummary {
        count: rows.len(),
        mean: MetricReport::from_values(mean),
        median: MetricReport::from_values(median),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Surface;

    fn square(x0: f64, z0: f64, s: f64) -> Vec<Xz> {
        vec![[x0, z0], [x0 + s, z0], [x0 + s, z0 + s], [x0, z0 + s]]
    }

    #[test]
    fn iou2d_closed_forms() {
        let a = square(-1.0, -1.0, 2.0);
        assert_eq!(iou2d(&a, &a).unwrap(), 1.0);
        let b = square(0.0, -1.0, 2.0);
        assert!((iou2d(&a, &b).unwrap() - 1.0 / 3.0).abs() < 5e-3);
        assert_eq!(iou2d(&a, &square(5.0, 5.0, 1.0)).unwrap(), 0.0);
        assert!(iou2d(&a, &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
    }

    #[test]
    fn iou2d_is_symmetric() {
        let a = square(-1.0, -1.3, 2.2);
        let b = vec![[-0.5, -2.0], [1.7, -1.0], [0.9, 1.5], [-1.6, 0.4]];
        assert_eq!(iou2d(&a, &b).unwrap(), iou2d(&b, &a).unwrap());
    }

    #[test]
    fn prism_iou3d() {
        let a = RoomLayout::new(square(-1.0, -1.0, 2.0), 2.0, 1.6).unwrap();
        let b = RoomLayout::new(square(-1.0, -1.0, 2.0), 3.0, 1.6).unwrap();
        assert_eq!(iou3d(&a, &b).unwrap(), 2.0 / 3.0);
        assert_eq!(iou3d(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn depth_metric_examples() {
        let gt = HorizonDepthSeq::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let same = depth_metrics(&gt, 1.6, &gt, 1.6).unwrap();
        assert_eq!((same.rmse, same.delta1), (0.0, 1.0));
        let far = HorizonDepthSeq::new(gt.as_slice().iter().map(|d| d * 1.3).collect()).unwrap();
        assert_eq!(depth_metrics(&far, 1.6, &gt, 1.6).unwrap().delta1, 0.0);
        // rescaling both by the same camera height is a no-op
        let a = depth_metrics(&far, 1.6, &gt, 1.6).unwrap();
        let gt2 = HorizonDepthSeq::new(gt.as_slice().iter().map(|d| d * 2.0).collect()).unwrap();
        let far2 = HorizonDepthSeq::new(far.as_slice().iter().map(|d| d * 2.0).collect()).unwrap();
        let b = depth_metrics(&far2, 3.2, &gt2, 3.2).unwrap();
        assert!((a.rmse - b.rmse).abs() < 1e-12);
    }

    #[test]
    fn corner_error_examples() {
        let gt = [[100.0, 200.0]];
        assert_eq!(corner_error(&gt, &gt, 1024, 512).unwrap(), 0.0);
        let off = corner_error(&[[103.0, 204.0]], &gt, 1024, 512).unwrap();
        assert!((off - 5.0 / 1024f64.hypot(512.0)).abs() < 1e-15);
        // across the seam
        let wrap = corner_error(&[[1023.0, 200.0]], &[[1.0, 200.0]], 1024, 512).unwrap();
        assert!((wrap - 2.0 / 1024f64.hypot(512.0)).abs() < 1e-15);
        let four = [[10.0, 10.0], [300.0, 10.0], [600.0, 10.0], [900.0, 10.0]];
        let three = &four[..3];
        let missing = corner_error(three, &four, 1024, 512).unwrap();
        assert!((missing - 0.25).abs() < 1e-15);
        assert!(corner_error(&four, &[], 1024, 512).is_err());
    }

    #[test]
    fn hungarian_finds_optimum() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn pixel_error_counts_labels() {
        let mut a = EquirectMask {
            width: 10,
            height: 10,
            labels: vec![Surface::Wall; 100],
        };
        let b = a.clone();
        assert_eq!(pixel_error(&a, &b).unwrap(), 0.0);
        for i in 0..10 {
            a.labels[i * 10] = Surface::Floor;
        }
        assert_eq!(pixel_error(&a, &b).unwrap(), 0.1);
    }

    #[test]
    fn summary_mean_and_median() {
        let rows: Vec<MetricReport> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&v| MetricReport::from_values([v; 6]))
            .collect();
        let s = summarize(&rows).unwrap();
        assert_eq!(s.mean.iou2d, 7.0 / 3.0);
        assert_eq!(s.median.rmse, 2.0);
    }
}
