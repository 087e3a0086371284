use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{g_rpe_index, g_rpe_len, w_rpe_index, w_rpe_len, BlockKind, PeMode, SeqConfig};
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

const TABLE_INIT_STD: f64 = 0.02;

/// Glorot-uniform `fan_in × fan_out` matrix.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("matching length")
}

pub(crate) fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("matching length")
}

/// `x W + b` applied to every row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Layer normalization with a learned per-channel gain and offset.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            offset: store.add(format!("{name}.offset"), Tensor::zeros(&[d])),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = g.layer_norm(x)?;
        let gain = g.param(store, self.gain);
        let offset = g.param(store, self.offset);
        let y = g.mul_row(y, gain)?;
        g.add_row(y, offset)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), d, d),
            key: Linear::new(store, rng, &format!("{name}.key"), d, d),
            value: Linear::new(store, rng, &format!("{name}.value"), d, d),
            output: Linear::new(store, rng, &format!("{name}.output"), d, d),
            heads,
        }
    }
}

/// Scaled dot-product attention over rows of already projected `q, k, v`
/// (`M × D` each), with an optional additive `M × M` bias per head. Returns
/// the concatenated head outputs before the output projection.
fn attend(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    bias: Option<&[Var]>,
) -> Result<Var> {
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * dh, dh)?;
        let kh = g.slice(k, 1, h * dh, dh)?;
        let vh = g.slice(v, 1, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let mut logits = g.scale(logits, scale)?;
        if let Some(b) = bias {
            logits = g.add(logits, b[h])?;
        }
        let weights = g.softmax_lastdim(logits)?;
        outs.push(g.matmul(weights, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 1)
    }
}

/// Multi-head self-attention of an `M × D` sequence with one optional
/// `M × M` bias per head added to the scaled query-key products.
pub fn msa_with_bias(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    attn: &Attention,
    bias: Option<&[Var]>,
) -> Result<Var> {
    let d = g.value(x).cols();
    if !d.is_multiple_of(attn.heads) {
        return Err(Error::shape(
            "msa",
            format!("D = {d} with {} heads", attn.heads),
        ));
    }
    if let Some(b) = bias {
        let m = g.value(x).rows();
        if b.len() != attn.heads || b.iter().any(|&v| g.value(v).shape() != [m, m]) {
            return Err(Error::shape(
                "msa",
                "bias must be one M x M matrix per head",
            ));
        }
    }
    let q = attn.query.forward(g, store, x)?;
    let k = attn.key.forward(g, store, x)?;
    let v = attn.value.forward(g, store, x)?;
    let heads = attend(g, q, k, v, attn.heads, bias)?;
    attn.output.forward(g, store, heads)
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?)?;
    g.mul(x, m)
}

/// One encoder block: attention and a ReLU feed-forward layer, each with a
/// residual connection and layer normalization.
#[derive(Clone, Debug)]
pub struct Block {
    pub kind: BlockKind,
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    /// `heads × table_len` relative position table.
    pub rpe: Option<ParamId>,
}

impl Block {
    pub fn new(
        kind: BlockKind,
        cfg: &SeqConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> Self {
        let d = cfg.d;
        let norm1 = Norm::new(store, &format!("{name}.norm1"), d);
        let attn = Attention::new(store, rng, &format!("{name}.attn"), d, cfg.heads);
        let norm2 = Norm::new(store, &format!("{name}.norm2"), d);
        let ffn_in = Linear::new(store, rng, &format!("{name}.ffn_in"), d, d * cfg.ffn_mult);
        let ffn_out = Linear::new(store, rng, &format!("{name}.ffn_out"), d * cfg.ffn_mult, d);
        let rpe = (cfg.pe_mode == PeMode::Relative).then(|| {
            let len = match kind {
                BlockKind::Global => g_rpe_len(cfg.n),
                _ => w_rpe_len(cfg.window),
            };
            store.add(
                format!("{name}.rpe"),
                normal(rng, &[cfg.heads, len], TABLE_INIT_STD),
            )
        });
        Self {
            kind,
            norm1,
            attn,
            norm2,
            ffn_in,
            ffn_out,
            rpe,
        }
    }

    /// Per-head bias matrices for this block's attention span.
    pub fn bias(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &SeqConfig,
    ) -> Result<Option<Vec<Var>>> {
        let Some(id) = self.rpe else { return Ok(None) };
        let table = g.param(store, id);
        let (m, index, len) = match self.kind {
            BlockKind::Global => (cfg.n, g_rpe_index(cfg.n), g_rpe_len(cfg.n)),
            _ => (cfg.window, w_rpe_index(cfg.window), w_rpe_len(cfg.window)),
        };
        (0..cfg.heads)
            .map(|h| {
                let idx = index.iter().map(|k| h * len + k).collect();
                g.gather(table, idx, &[m, m])
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn attention(&self, g: &mut Graph, store: &ParamStore, cfg: &SeqConfig, x: Var) -> Result<Var> {
        let bias = self.bias(g, store, cfg)?;
        if self.kind == BlockKind::Global {
            return msa_with_bias(g, store, x, &self.attn, bias.as_deref());
        }
        let q = self.attn.query.forward(g, store, x)?;
        let k = self.attn.key.forward(g, store, x)?;
        let v = self.attn.value.forward(g, store, x)?;
        let w = cfg.window;
        let mut windows = Vec::with_capacity(cfg.n / w);
        for start in (0..cfg.n).step_by(w) {
            let qw = g.slice(q, 0, start, w)?;
            let kw = g.slice(k, 0, start, w)?;
            let vw = g.slice(v, 0, start, w)?;
            windows.push(attend(g, qw, kw, vw, cfg.heads, bias.as_deref())?);
        }
        let merged = if windows.len() == 1 {
            windows[0]
        } else {
            g.concat(&windows, 0)?
        };
        self.attn.output.forward(g, store, merged)
    }

    fn ffn(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ffn_in.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.ffn_out.forward(g, store, h)
    }

    /// `x` is `N × D`; the output has the same shape and token positions.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &SeqConfig,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if g.value(x).shape() != [cfg.n, cfg.d] {
            return Err(Error::shape(
                "block",
                format!(
                    "input {:?}, expected [{}, {}]",
                    g.value(x).shape(),
                    cfg.n,
                    cfg.d
                ),
            ));
        }
        let shift = (cfg.window / 2) as isize;
        let x = if self.kind == BlockKind::ShiftedWindow {
            g.roll(x, -shift)?
        } else {
            x
        };
        let y = if cfg.post_norm {
            let a = self.attention(g, store, cfg, x)?;
            let a = dropout(g, a, cfg.dropout, rng.as_deref_mut())?;
            let s = g.add(x, a)?;
            let x1 = self.norm1.forward(g, store, s)?;
            let f = self.ffn(g, store, x1)?;
            let f = dropout(g, f, cfg.dropout, rng.as_deref_mut())?;
            let s = g.add(x1, f)?;
            self.norm2.forward(g, store, s)?
        } else {
            let n1 = self.norm1.forward(g, store, x)?;
            let a = self.attention(g, store, cfg, n1)?;
            let a = dropout(g, a, cfg.dropout, rng.as_deref_mut())?;
            let x1 = g.add(x, a)?;
            let n2 = self.norm2.forward(g, store, x1)?;
            let f = self.ffn(g, store, n2)?;
            let f = dropout(g, f, cfg.dropout, rng)?;
            g.add(x1, f)?
        };
        if self.kind == BlockKind::ShiftedWindow {
            g.roll(y, shift)
        } else {
            Ok(y)
        }
    }
}

/// The block stack, plus the absolute position embedding when enabled.
#[derive(Clone, Debug)]
pub struct Trunk {
    pub config: SeqConfig,
    pub ape: Option<ParamId>,
    pub blocks: Vec<Block>,
}

impl Trunk {
    pub fn new(
        cfg: &SeqConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let ape = (cfg.pe_mode == PeMode::Absolute).then(|| {
            store.add(
                format!("{name}.ape"),
                normal(rng, &[cfg.n, cfg.d], TABLE_INIT_STD),
            )
        });
        let blocks = cfg
            .block_order()
            .into_iter()
            .enumerate()
            .map(|(i, kind)| Block::new(kind, cfg, store, rng, &format!("{name}.block{i}")))
            .collect();
        Ok(Self {
            config: cfg.clone(),
            ape,
            blocks,
        })
    }

    pub fn block_kinds(&self) -> Vec<BlockKind> {
        self.blocks.iter().map(|b| b.kind).collect()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut x = x;
        if let Some(id) = self.ape {
            let ape = g.param(store, id);
            x = g.add(x, ape)?;
        }
        for b in &self.blocks {
            x = b.forward(g, store, &self.config, x, rng.as_deref_mut())?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        normal(rng, &[rows, cols], 1.0)
    }

    fn run_block(block: &Block, store: &ParamStore, cfg: &SeqConfig, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = block.forward(&mut g, store, cfg, xv, None).unwrap();
        g.value(y).clone()
    }

    fn small() -> SeqConfig {
        SeqConfig {
            n: 16,
            d: 8,
            window: 4,
            heads: 2,
            loops: 1,
            ..SeqConfig::default()
        }
    }

    #[test]
    fn zero_logits_give_column_mean() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = Attention::new(&mut store, &mut rng, "a", 3, 1);
        for id in [attn.query.weight, attn.key.weight] {
            store.get_mut(id).value.fill(0.0);
        }
        for id in [attn.value.weight, attn.output.weight] {
            store.get_mut(id).value = Tensor::identity(3);
        }
        let x = random(&mut rng, 5, 3);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = msa_with_bias(&mut g, &store, xv, &attn, None).unwrap();
        for c in 0..3 {
            let mean = (0..5).map(|r| x.at(r, c)).sum::<f64>() / 5.0;
            for r in 0..5 {
                assert!((g.value(y).at(r, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_constant_bias_does_not_change_attention() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = Attention::new(&mut store, &mut rng, "a", 4, 2);
        let x = random(&mut rng, 6, 4);
        let mut bias_a = Vec::new();
        let mut bias_b = Vec::new();
        let mut g = Graph::new();
        for _ in 0..2 {
            let b = random(&mut rng, 6, 6);
            let mut shifted = b.clone();
            for r in 0..6 {
                for c in 0..6 {
                    shifted.data_mut()[r * 6 + c] += r as f64 * 3.5;
                }
            }
            bias_a.push(g.constant(b).unwrap());
            bias_b.push(g.constant(shifted).unwrap());
        }
        let xv = g.constant(x).unwrap();
        let ya = msa_with_bias(&mut g, &store, xv, &attn, Some(&bias_a)).unwrap();
        let yb = msa_with_bias(&mut g, &store, xv, &attn, Some(&bias_b)).unwrap();
        assert!(g.value(ya).max_abs_diff(g.value(yb)) < 1e-12);
    }

    #[test]
    fn blocks_preserve_shape() {
        let cfg = small();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 16, 8);
        for kind in [
            BlockKind::Window,
            BlockKind::ShiftedWindow,
            BlockKind::Global,
        ] {
            let b = Block::new(kind, &cfg, &mut store, &mut rng, "b");
            assert_eq!(run_block(&b, &store, &cfg, &x).shape(), &[16, 8]);
        }
    }

    #[test]
    fn zeroed_sublayers_pass_input_through() {
        let cfg = small();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Block::new(BlockKind::ShiftedWindow, &cfg, &mut store, &mut rng, "b");
        for id in [
            b.attn.output.weight,
            b.attn.output.bias,
            b.ffn_out.weight,
            b.ffn_out.bias,
        ] {
            store.get_mut(id).value.fill(0.0);
        }
        let x = random(&mut rng, 16, 8);
        assert_eq!(run_block(&b, &store, &cfg, &x), x);
    }

    #[test]
    fn global_block_is_shift_equivariant() {
        let cfg = small();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Block::new(BlockKind::Global, &cfg, &mut store, &mut rng, "b");
        let x = random(&mut rng, 16, 8);
        let y = run_block(&b, &store, &cfg, &x);
        for s in [1isize, 3, 7, 8, 15] {
            let ys = run_block(&b, &store, &cfg, &super::super::roll(&x, s));
            assert!(
                ys.max_abs_diff(&super::super::roll(&y, s)) < 1e-9,
                "shift {s}"
            );
        }
    }

    #[test]
    fn dropout_is_inactive_without_rng_and_seeded_with_it() {
        let cfg = SeqConfig {
            dropout: 0.5,
            ..small()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Block::new(BlockKind::Window, &cfg, &mut store, &mut rng, "b");
        let x = random(&mut rng, 16, 8);
        let eval = run_block(&b, &store, &cfg, &x);
        let train = |seed| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone()).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let y = b.forward(&mut g, &store, &cfg, xv, Some(&mut r)).unwrap();
            g.value(y).clone()
        };
        assert_eq!(train(9), train(9));
        assert!(train(9).max_abs_diff(&eval) > 1e-6);
    }
}
