use std::path::Path;

use panolayout::error::{Error, Result};
use panolayout::geometry::{
    compute_normal_gradients, compute_normals, longitudes, HorizonDepthSeq,
};
use panolayout::layout::{LayoutPrediction, RoomLayout};
use panolayout::losses::{total_loss, LossToggles, LossWeights};

#[derive(Debug, Default, PartialEq)]
struct Perturbation {
    depth: f64,
    height: f64,
}

fn parse_perturbation(args: &[String]) -> Result<Perturbation> {
    let mut p = Perturbation::default();
    for pair in args.chunks(2) {
        let [term, delta] = pair else {
            return Err(Error::Config("--perturb takes a term and a delta".into()));
        };
        let delta: f64 = delta
            .parse()
            .ok()
            .filter(|d: &f64| d.is_finite())
            .ok_or_else(|| Error::Config(format!("invalid perturbation delta {delta:?}")))?;
        match term.as_str() {
            "depth" => p.depth += delta,
            "height" => p.height += delta,
            _ => {
                return Err(Error::Config(format!(
                    "unknown perturbation term {term:?}; expected depth or height"
                )))
            }
        }
    }
    Ok(p)
}

pub fn run(path: &Path, n: usize, perturb: &[String]) -> Result<()> {
    let p = parse_perturbation(perturb)?;
    let layout = RoomLayout::read(path)?;
    let cam = layout.camera_height();
    let gt = layout.sample(n)?;
    let moved = HorizonDepthSeq::new(gt.as_slice().iter().map(|d| d + p.depth).collect())?;
    let pred = LayoutPrediction::new(moved, layout.room_height() + p.height, cam, "perturbed")?;
    let (gt_normals, pred_normals) = (
        compute_normals(&gt, cam)?,
        compute_normals(&pred.depths, cam)?,
    );
    let (gt_grad, pred_grad) = (
        compute_normal_gradients(&gt_normals),
        compute_normal_gradients(&pred_normals),
    );
    let w = LossWeights::default();
    let loss = total_loss(&pred, &layout, &w, LossToggles::default())?;

    println!(
        "{}: N = {n}, camera {cam:.3} m, room {:.3} m, perturbed room {:.3} m",
        path.display(),
        layout.room_height(),
        pred.room_height
    );
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "i", "theta", "depth", "depth'", "n_x", "n_z", "n_x'", "n_z'", "g", "g'"
    );
    for (i, theta) in longitudes(n).into_iter().enumerate() {
        let (a, b) = (gt_normals.0[i], pred_normals.0[i]);
        println!(
            "{i:>5} {theta:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            gt.as_slice()[i],
            pred.depths.as_slice()[i],
            a[0],
            a[1],
            b[0],
            b[1],
            gt_grad[i],
            pred_grad[i]
        );
    }
    println!("{:<8} {:>12} {:>12}", "loss", "value", "weighted");
    for (name, value, weight) in [
        ("L_d", loss.depth, w.lambda),
        ("L_h", loss.height, w.mu),
        ("L_n", loss.normal, w.nu),
        ("L_g", loss.gradient, w.nu),
    ] {
        println!("{name:<8} {value:>12.6} {:>12.6}", weight * value);
    }
    println!("{:<8} {:>12} {:>12.6}", "L_total", "", loss.total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perturbations_accumulate() {
        let p = parse_perturbation(&args(&["depth", "+0.5", "height", "-0.2", "depth", "0.25"]))
            .unwrap();
        assert_eq!(
            p,
            Perturbation {
                depth: 0.75,
                height: -0.2
            }
        );
        assert!(parse_perturbation(&args(&["width", "1"])).is_err());
        assert!(parse_perturbation(&args(&["depth", "nan"])).is_err());
    }
}
