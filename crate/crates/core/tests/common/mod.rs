#![allow(dead_code)]

use panolayout::geometry::{compute_normal_gradients, compute_normals, HorizonDepthSeq};
use panolayout::layout::{generate_synthetic, GeneratorSpec, RoomLayout, ShapeKind};
use panolayout::losses::{loss_graph, LossTarget, LossToggles, LossWeights};
use panolayout::model::{make_cues, LayoutModel, ModelConfig};
use panolayout::numcore::{Graph, ParamStore, Tensor, Var};
use panolayout::swgformer::{msa_with_bias, Attention, PeMode, SeqConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Relative error bound for single ops.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Relative error bound for the composed trunk and model.
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are compared at an absolute scale of `tolerance * 1e-3`.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct FdStats {
    pub checked: usize,
    /// Entries where the left and right one-sided differences disagree,
    /// i.e. the step straddles a kink of relu, abs or the acos clip.
    pub kinks: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl FdStats {
    pub fn merge(&mut self, other: FdStats) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }

    /// At most 1% of entries may straddle a kink.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel < tolerance && self.kinks * 100 <= self.checked
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `build` with central differences on the
/// chosen `(param, element)` entries, or on every entry when `entries` is
/// `None`.
pub fn check(
    label: &str,
    store: &mut ParamStore,
    entries: Option<&[(usize, usize)]>,
    build: &dyn Fn(&ParamStore) -> (Graph, Var),
) -> FdStats {
    let (g, loss) = build(store);
    let grads = g.gradients(loss).expect("backward");
    let ids: Vec<_> = store.ids().collect();
    let analytic = |p: usize, k: usize| {
        grads
            .entries
            .iter()
            .find(|(id, _)| *id == ids[p])
            .map_or(0.0, |(_, t)| t.data()[k])
    };
    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = ids
                .iter()
                .enumerate()
                .flat_map(|(p, &id)| (0..store.get(id).value.len()).map(move |k| (p, k)))
                .collect();
            &all
        }
    };
    let eval = |store: &ParamStore| {
        let (g, l) = build(store);
        g.value(l).item()
    };
    let mut stats = FdStats::default();
    for &(p, k) in entries {
        let id = ids[p];
        let x0 = store.get(id).value.data()[k];
        let f0 = eval(store);
        store.get_mut(id).value.data_mut()[k] = x0 + FD_STEP;
        let fp = eval(store);
        store.get_mut(id).value.data_mut()[k] = x0 - FD_STEP;
        let fm = eval(store);
        store.get_mut(id).value.data_mut()[k] = x0;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let right = (fp - f0) / FD_STEP;
        let left = (f0 - fm) / FD_STEP;
        // curvature alone moves the one-sided differences by O(step)
        if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
            stats.kinks += 1;
            continue;
        }
        stats.checked += 1;
        let a = analytic(p, k);
        let e = rel_err(a, numeric);
        if e > stats.max_rel {
            stats.max_rel = e;
            stats.worst = format!(
                "{label}: {}[{k}] analytic {a:e} numeric {numeric:e}",
                store.get(id).name
            );
        }
    }
    stats
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Uniform magnitude in `[lo, hi)` with a random sign.
pub fn signed_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

type Builder = Box<dyn Fn(&ParamStore) -> (Graph, Var)>;

/// Differentiable graph operations exercised by the gradient suite.
pub const OPS: [&str; 30] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "add_row",
    "mul_row",
    "scale",
    "add_scalar",
    "relu",
    "softplus",
    "sqrt",
    "abs",
    "acos_clipped",
    "layer_norm",
    "softmax_lastdim",
    "mean_lastdim",
    "sum",
    "mean",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "roll",
    "gather",
    "reshape",
    "msa_with_bias",
    "msa",
    "loss_graph",
];

/// Reduces `out` to a scalar with fixed random weights so every output
/// element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone()).unwrap();
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

/// A parameter store holding the op inputs and the builder of `op`.
pub fn op_case(op: &str, seed: u64) -> (ParamStore, Builder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (r, c) = (3, 4);
    let a_range = match op {
        "sqrt" | "div" => (0.5, 2.0),
        "acos_clipped" => (-0.9, 0.9),
        _ => (-1.0, 1.0),
    };
    let a = match op {
        "relu" | "abs" => signed_tensor(&mut rng, &[r, c], 0.1, 1.0),
        "mean_lastdim" | "sum" | "mean" | "transpose" | "reshape" | "matmul" => {
            random_tensor(&mut rng, &[r, c], -1.0, 1.0)
        }
        _ => random_tensor(&mut rng, &[r, c], a_range.0, a_range.1),
    };
    let b = match op {
        "matmul" => random_tensor(&mut rng, &[c, 2], -1.0, 1.0),
        "div" => signed_tensor(&mut rng, &[r, c], 0.5, 2.0),
        "add_row" | "mul_row" => random_tensor(&mut rng, &[1, c], -1.0, 1.0),
        "concat_rows" => random_tensor(&mut rng, &[2, c], -1.0, 1.0),
        "concat_cols" => random_tensor(&mut rng, &[r, 2], -1.0, 1.0),
        "gather" => random_tensor(&mut rng, &[5], -1.0, 1.0),
        _ => random_tensor(&mut rng, &[r, c], -1.0, 1.0),
    };
    let weights = random_tensor(&mut rng, &[64], -1.0, 1.0);
    if op == "msa_with_bias" || op == "msa" {
        return msa_case(op == "msa_with_bias", rng);
    }
    if op == "loss_graph" {
        return loss_case(rng);
    }
    let ia = store.add("a", a);
    let ib = store.add("b", b);
    let op = op.to_string();
    let build: Builder = Box::new(move |s: &ParamStore| {
        let mut g = Graph::new();
        let a = g.param(s, ia);
        let b = g.param(s, ib);
        let out = match op.as_str() {
            "matmul" => g.matmul(a, b),
            "add" => g.add(a, b),
            "sub" => g.sub(a, b),
            "mul" => g.mul(a, b),
            "div" => g.div(a, b),
            "add_row" => g.add_row(a, b),
            "mul_row" => g.mul_row(a, b),
            "scale" => g.scale(a, -1.7),
            "add_scalar" => g.add_scalar(a, 0.3),
            "relu" => g.relu(a),
            "softplus" => g.softplus(a),
            "sqrt" => g.sqrt(a),
            "abs" => g.abs(a),
            "acos_clipped" => g.acos_clipped(a),
            "layer_norm" => g.layer_norm(a),
            "softmax_lastdim" => g.softmax_lastdim(a),
            "mean_lastdim" => g.mean_lastdim(a),
            "sum" => g.sum(a),
            "mean" => g.mean(a),
            "concat_rows" => g.concat(&[a, b], 0),
            "concat_cols" => g.concat(&[a, b], 1),
            "slice_rows" => g.slice(a, 0, 1, 2),
            "slice_cols" => g.slice(a, 1, 1, 2),
            "transpose" => g.transpose(a),
            "roll" => g.roll(a, -2),
            "gather" => g.gather(b, vec![4, 0, 2, 2, 1, 4], &[2, 3]),
            "reshape" => g.reshape(a, &[2, 6]),
            other => panic!("unknown op {other}"),
        }
        .unwrap();
        let len = g.value(out).len();
        let w = Tensor::new(
            g.value(out).shape().to_vec(),
            weights.data()[..len].to_vec(),
        )
        .unwrap();
        let loss = weighted_sum(&mut g, out, &w);
        (g, loss)
    });
    (store, build)
}

fn msa_case(with_bias: bool, mut rng: ChaCha8Rng) -> (ParamStore, Builder) {
    let (m, d, heads) = (4, 8, 2);
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut store, &mut rng, "attn", d, heads);
    let ix = store.add("x", random_tensor(&mut rng, &[m, d], -1.0, 1.0));
    let biases: Vec<_> = (0..heads)
        .map(|h| {
            store.add(
                format!("bias{h}"),
                random_tensor(&mut rng, &[m, m], -0.5, 0.5),
            )
        })
        .collect();
    let weights = random_tensor(&mut rng, &[m, d], -1.0, 1.0);
    let build: Builder = Box::new(move |s: &ParamStore| {
        let mut g = Graph::new();
        let x = g.param(s, ix);
        let bias: Vec<Var> = biases.iter().map(|&b| g.param(s, b)).collect();
        let out = msa_with_bias(&mut g, s, x, &attn, with_bias.then_some(&bias[..])).unwrap();
        let loss = weighted_sum(&mut g, out, &weights);
        (g, loss)
    });
    (store, build)
}

fn loss_case(mut rng: ChaCha8Rng) -> (ParamStore, Builder) {
    let layout = random_room(rng.gen(), ShapeKind::L);
    let n = 16;
    let target = LossTarget::from_layout(&layout, n).unwrap();
    let mut store = ParamStore::new();
    let truth = layout.sample(n).unwrap().into_vec();
    // keep every predicted normal-angle gradient outside the acos
    // derivative clip, where the tape gradient is capped on purpose
    let noisy = loop {
        let noisy: Vec<f64> = truth.iter().map(|d| d * rng.gen_range(0.8..1.2)).collect();
        let seq = HorizonDepthSeq::new(noisy.clone()).unwrap();
        let normals = compute_normals(&seq, layout.camera_height()).unwrap();
        if compute_normal_gradients(&normals).iter().all(|&g| g > 1e-2) {
            break noisy;
        }
    };
    let id = store.add("depth", Tensor::vector(noisy));
    let ih = store.add(
        "height",
        Tensor::scalar(layout.room_height() + rng.gen_range(-0.4..0.4)),
    );
    let build: Builder = Box::new(move |s: &ParamStore| {
        let mut g = Graph::new();
        let d = g.param(s, id);
        let h = g.param(s, ih);
        let t = loss_graph(
            &mut g,
            d,
            h,
            &target,
            &LossWeights::default(),
            LossToggles::default(),
        )
        .unwrap();
        (g, t.total)
    });
    (store, build)
}

pub fn random_room(seed: u64, kind: ShapeKind) -> RoomLayout {
    generate_synthetic(seed, &GeneratorSpec::new(kind)).unwrap()
}

/// The tiny gradient-check model: N = 8, D = 8, N_w = 4, two heads.
pub fn tiny_config(seed: u64, pe_mode: PeMode) -> ModelConfig {
    ModelConfig {
        seq: SeqConfig {
            n: 8,
            d: 8,
            window: 4,
            heads: 2,
            loops: 2,
            pe_mode,
            ..SeqConfig::default()
        },
        seed,
        ..ModelConfig::default()
    }
}

/// Full model plus loss on a random room; `samples` entries drawn at random
/// from all parameters, plus one entry of every parameter tensor.
pub fn model_check(seed: u64, samples: usize) -> FdStats {
    let pe = [PeMode::Relative, PeMode::Absolute][seed as usize % 2];
    let cfg = tiny_config(seed, pe);
    let mut model = LayoutModel::new(cfg.clone()).unwrap();
    let kind = if seed.is_multiple_of(2) {
        ShapeKind::Cuboid
    } else {
        ShapeKind::L
    };
    let layout = random_room(seed, kind);
    let cues = make_cues(&layout, 8, 4, 0.05, seed).unwrap();
    let target = LossTarget::from_layout(&layout, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sizes: Vec<usize> = model.store().iter().map(|p| p.value.len()).collect();
    let mut entries: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(p, &len)| (p, rng.gen_range(0..len)))
        .collect();
    for _ in 0..samples {
        let p = rng.gen_range(0..sizes.len());
        entries.push((p, rng.gen_range(0..sizes[p])));
    }

    // The model owns its store, so perturb a copy and swap it in per eval.
    let mut store = model.store().clone();
    let cell = std::cell::RefCell::new(&mut model);
    let build = |s: &ParamStore| {
        let mut m = cell.borrow_mut();
        *m.store_mut() = s.clone();
        let mut g = Graph::new();
        let (d, h) = m.forward(&mut g, &cues, None).unwrap();
        let t = loss_graph(&mut g, d, h, &target, &cfg.loss, cfg.toggles).unwrap();
        (g, t.total)
    };
    check("model", &mut store, Some(&entries), &build)
}

/// Nearest positive hit of the ray from the origin at longitude `theta`
/// against every edge, by explicit 2x2 solve per edge.
pub fn brute_force_depth(poly: &[[f64; 2]], theta: f64) -> f64 {
    let (dx, dz) = (theta.sin(), theta.cos());
    let mut best = f64::INFINITY;
    for i in 0..poly.len() {
        let [ax, az] = poly[i];
        let [bx, bz] = poly[(i + 1) % poly.len()];
        // t * (dx, dz) = a + s * (b - a)
        let (ex, ez) = (bx - ax, bz - az);
        let det = dx * (-ez) - dz * (-ex);
        if det.abs() < 1e-15 {
            continue;
        }
        let t = (ax * (-ez) - az * (-ex)) / det;
        let s = (dx * az - dz * ax) / det;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = best.min(t);
        }
    }
    best
}

pub fn oracle_shape(seed: u64) -> ShapeKind {
    match seed % 5 {
        0 => ShapeKind::Cuboid,
        1 => ShapeKind::L,
        2 => ShapeKind::T,
        3 => ShapeKind::Rectilinear(10),
        _ => ShapeKind::Rectilinear(12),
    }
}

/// Random rectilinear room at a random Manhattan rotation.
pub fn oracle_room(seed: u64) -> RoomLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = GeneratorSpec {
        rotation: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        ..GeneratorSpec::new(oracle_shape(seed))
    };
    generate_synthetic(seed, &spec).unwrap()
}

/// Largest disagreement between the sampler and the brute-force ray cast,
/// over `seeds` rooms at `n` longitudes.
pub fn sampling_oracle_error(seeds: u64, n: usize) -> f64 {
    let thetas = panolayout::geometry::longitudes(n);
    (0..seeds)
        .map(|seed| {
            let room = oracle_room(seed);
            let sampled = panolayout::geometry::sample_polygon_boundary(room.floor(), n).unwrap();
            sampled
                .as_slice()
                .iter()
                .zip(&thetas)
                .map(|(d, &t)| (d - brute_force_depth(room.floor(), t)).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Smallest floor 2DIoU between each room and the polygon reconstructed
/// from its exact samples.
pub fn reconstruction_min_iou(seeds: u64, n: usize) -> f64 {
    use panolayout::layout::{reconstruct, CornerParams, LayoutPrediction};
    (0..seeds)
        .map(|seed| {
            let room = oracle_room(seed);
            let pred = LayoutPrediction::from_layout(&room, n).unwrap();
            let rec = reconstruct(&pred, CornerParams::default()).unwrap();
            panolayout::metrics::iou2d(rec.floor(), room.floor()).unwrap()
        })
        .fold(1.0, f64::min)
}
