//! Depth, height, normal and normal-gradient losses and their weighted sum.
//!
//! The plain functions work on geometry values and serve as references. The
//! training objective is built by [`loss_graph`], which recomputes normals
//! and gradients from the predicted depths inside a [`Graph`] so the whole
//! objective is differentiable with respect to the depths and the height.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, longitudes, HorizonDepthSeq, NormalSeq};
use crate::layout::{LayoutPrediction, RoomLayout};
use crate::numcore::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Depth weight λ.
    pub lambda: f64,
    /// Height weight μ.
    pub mu: f64,
    /// Normal and gradient weight ν.
    pub nu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            mu: 0.1,
            nu: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda, self.mu, self.nu]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights must be >= 0: {self:?}"
            )))
        }
    }
}

/// Which terms enter the objective. Disabled terms are reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossToggles {
    pub height: bool,
    pub normal: bool,
    pub gradient: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            height: true,
            normal: true,
            gradient: true,
        }
    }
}

impl LossToggles {
    pub fn without_height() -> Self {
        Self {
            height: false,
            ..Self::default()
        }
    }

    pub fn without_normal_and_gradient() -> Self {
        Self {
            normal: false,
            gradient: false,
            ..Self::default()
        }
    }

    pub fn without_gradient() -> Self {
        Self {
            gradient: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_d")]
    pub depth: f64,
    #[serde(rename = "L_h")]
    pub height: f64,
    #[serde(rename = "L_n")]
    pub normal: f64,
    #[serde(rename = "L_g")]
    pub gradient: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

impl LossReport {
    /// `λ L_d + μ L_h + ν (L_n + L_g)` from the component fields.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda * self.depth + w.mu * self.height + w.nu * (self.normal + self.gradient)
    }

    /// Component-wise mean, accumulated in slice order.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let k = reports.len().max(1) as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.depth += r.depth;
            m.height += r.height;
            m.normal += r.normal;
            m.gradient += r.gradient;
            m.total += r.total;
        }
        LossReport {
            depth: m.depth / k,
            height: m.height / k,
            normal: m.normal / k,
            gradient: m.gradient / k,
            total: m.total / k,
        }
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("lengths {a} and {b} differ")));
    }
    Ok(())
}

pub fn depth_loss(pred: &HorizonDepthSeq, gt: &HorizonDepthSeq) -> Result<f64> {
    check_len("depth_loss", pred.len(), gt.len())?;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn height_loss(h: f64, h_gt: f64) -> f64 {
    (h - h_gt).abs()
}

pub fn normal_loss(pred: &NormalSeq, gt: &NormalSeq) -> Result<f64> {
    check_len("normal_loss", pred.len(), gt.len())?;
    let sum: f64 = pred
        .0
        .iter()
        .zip(&gt.0)
        .map(|(a, b)| -(a[0] * b[0] + a[1] * b[1]))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn gradient_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("gradient_loss", pred.len(), gt.len())?;
    let sum: f64 = pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Ground-truth quantities for one sample, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTarget {
    pub depths: HorizonDepthSeq,
    pub height: f64,
    pub normals: NormalSeq,
    pub gradients: Vec<f64>,
}

impl LossTarget {
    pub fn new(depths: HorizonDepthSeq, height: f64, camera_height: f64) -> Result<Self> {
        let normals = geometry::compute_normals(&depths, camera_height)?;
        let gradients = geometry::compute_normal_gradients(&normals);
        Ok(Self {
            depths,
            height,
            normals,
            gradients,
        })
    }

    pub fn from_layout(layout: &RoomLayout, n: usize) -> Result<Self> {
        Self::new(
            layout.sample(n)?,
            layout.room_height(),
            layout.camera_height(),
        )
    }

    pub fn n(&self) -> usize {
        self.depths.len()
    }
}

/// Graph nodes of every loss term. Disabled terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub depth: Var,
    pub height: Option<Var>,
    pub normal: Option<Var>,
    pub gradient: Option<Var>,
    pub total: Var,
}

impl LossTerms {
    pub fn report(&self, g: &Graph) -> LossReport {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        LossReport {
            depth: g.value(self.depth).item(),
            height: val(self.height),
            normal: val(self.normal),
            gradient: val(self.gradient),
            total: g.value(self.total).item(),
        }
    }
}

/// Builds the weighted objective from a predicted depth vector `[N]` and a
/// scalar height.
pub fn loss_graph(
    g: &mut Graph,
    depth: Var,
    height: Var,
    target: &LossTarget,
    w: &LossWeights,
    toggles: LossToggles,
) -> Result<LossTerms> {
    let n = target.n();
    if g.value(depth).shape() != [n] {
        return Err(Error::shape(
            "loss_graph",
            format!("depth {:?} vs target [{n}]", g.value(depth).shape()),
        ));
    }
    let gt_d = g.constant(Tensor::vector(target.depths.as_slice().to_vec()))?;
    let diff = g.sub(depth, gt_d)?;
    let abs = g.abs(diff)?;
    let l_d = g.mean(abs)?;
    let mut total = g.scale(l_d, w.lambda)?;

    let l_h = if toggles.height {
        let gt_h = g.constant(Tensor::scalar(target.height))?;
        let h = g.reshape(height, &[])?;
        let diff = g.sub(h, gt_h)?;
        let l_h = g.abs(diff)?;
        let term = g.scale(l_h, w.mu)?;
        total = g.add(total, term)?;
        Some(l_h)
    } else {
        None
    };

    let (mut l_n, mut l_g) = (None, None);
    if toggles.normal || toggles.gradient {
        let (nx, nz) = normals_graph(g, depth, n)?;
        if toggles.normal {
            let gx = g.constant(Tensor::vector(
                target.normals.0.iter().map(|v| v[0]).collect(),
            ))?;
            let gz = g.constant(Tensor::vector(
                target.normals.0.iter().map(|v| v[1]).collect(),
            ))?;
            let a = g.mul(nx, gx)?;
            let b = g.mul(nz, gz)?;
            let dot = g.add(a, b)?;
            let m = g.mean(dot)?;
            let l = g.scale(m, -1.0)?;
            let term = g.scale(l, w.nu)?;
            total = g.add(total, term)?;
            l_n = Some(l);
        }
        if toggles.gradient {
            let prev_x = g.roll(nx, 1)?;
            let next_x = g.roll(nx, -1)?;
            let prev_z = g.roll(nz, 1)?;
            let next_z = g.roll(nz, -1)?;
            let a = g.mul(prev_x, next_x)?;
            let b = g.mul(prev_z, next_z)?;
            let dot = g.add(a, b)?;
            let grad = g.acos_clipped(dot)?;
            let gt_g = g.constant(Tensor::vector(target.gradients.clone()))?;
            let diff = g.sub(grad, gt_g)?;
            let abs = g.abs(diff)?;
            let l = g.mean(abs)?;
            let term = g.scale(l, w.nu)?;
            total = g.add(total, term)?;
            l_g = Some(l);
        }
    }
    Ok(LossTerms {
        depth: l_d,
        height: l_h,
        normal: l_n,
        gradient: l_g,
        total,
    })
}

/// Unit normals `(x, z)` of the edges from each sample point to the next,
/// as two `[N]` nodes.
fn normals_graph(g: &mut Graph, depth: Var, n: usize) -> Result<(Var, Var)> {
    let thetas = longitudes(n);
    let sin = g.constant(Tensor::vector(thetas.iter().map(|t| t.sin()).collect()))?;
    let cos = g.constant(Tensor::vector(thetas.iter().map(|t| t.cos()).collect()))?;
    let px = g.mul(depth, sin)?;
    let pz = g.mul(depth, cos)?;
    let qx = g.roll(px, -1)?;
    let qz = g.roll(pz, -1)?;
    let ex = g.sub(qx, px)?;
    let ez = g.sub(qz, pz)?;
    let ex2 = g.mul(ex, ex)?;
    let ez2 = g.mul(ez, ez)?;
    let len2 = g.add(ex2, ez2)?;
    let len = g.sqrt(len2)?;
    let nx = g.div(ez, len)?;
    let ux = g.div(ex, len)?;
    let nz = g.scale(ux, -1.0)?;
    Ok((nx, nz))
}

/// Evaluates the objective for a finished prediction against a layout.
pub fn total_loss(
    pred: &LayoutPrediction,
    gt: &RoomLayout,
    w: &LossWeights,
    toggles: LossToggles,
) -> Result<LossReport> {
    let target = LossTarget::from_layout(gt, pred.n())?;
    let (report, _, _) = loss_with_gradient(&pred.depths, pred.room_height, &target, w, toggles)?;
    Ok(report)
}

/// The objective and its gradient with respect to the depths and height.
pub fn loss_with_gradient(
    depths: &HorizonDepthSeq,
    height: f64,
    target: &LossTarget,
    w: &LossWeights,
    toggles: LossToggles,
) -> Result<(LossReport, Vec<f64>, f64)> {
    let mut store = ParamStore::new();
    let d_id = store.add("depth", Tensor::vector(depths.as_slice().to_vec()));
    let h_id = store.add("height", Tensor::scalar(height));
    let mut g = Graph::new();
    let d = g.param(&store, d_id);
    let h = g.param(&store, h_id);
    let terms = loss_graph(&mut g, d, h, target, w, toggles)?;
    let grads = g.gradients(terms.total)?;
    let mut dd = vec![0.0; depths.len()];
    let mut dh = 0.0;
    for (id, t) in &grads.entries {
        if *id == d_id {
            dd.copy_from_slice(t.data());
        } else if *id == h_id {
            dh = t.item();
        }
    }
    Ok((terms.report(&g), dd, dh))
}
