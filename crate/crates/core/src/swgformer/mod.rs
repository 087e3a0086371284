//! Sequence transformer over the longitude axis: window, shifted-window and
//! global attention blocks with learned relative position biases.
//!
//! Window blocks attend inside contiguous windows of `N_w` tokens and carry
//! a Toeplitz bias `B_ij = b_{j-i}`. Global blocks attend over the whole
//! circular sequence with a bias that depends only on circular distance,
//! `b_{min(|j-i|, N-|j-i|)}`, so the bias matrix is symmetric and circulant.

mod block;

use serde::{Deserialize, Serialize};

pub use block::{msa_with_bias, Attention, Block, Linear, Norm, Trunk};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    None,
    /// Learned `N × D` embedding added once before the trunk.
    Absolute,
    /// Learned bias tables inside every attention.
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Window,
    ShiftedWindow,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqConfig {
    /// Sequence length.
    pub n: usize,
    /// Token width.
    pub d: usize,
    /// Window length `N_w`.
    pub window: usize,
    pub heads: usize,
    pub loops: usize,
    pub pe_mode: PeMode,
    pub window_blocks: bool,
    pub global_blocks: bool,
    /// FFN hidden width as a multiple of `d`.
    pub ffn_mult: usize,
    /// Normalize after each residual sum instead of before each sublayer.
    pub post_norm: bool,
    pub dropout: f64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            n: 64,
            d: 64,
            window: 8,
            heads: 4,
            loops: 2,
            pe_mode: PeMode::Relative,
            window_blocks: true,
            global_blocks: true,
            ffn_mult: 4,
            post_norm: false,
            dropout: 0.0,
        }
    }
}

impl SeqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || !self.n.is_multiple_of(2) {
            return bad(format!(
                "sequence length {} must be even and positive",
                self.n
            ));
        }
        if self.window == 0 || !self.window.is_multiple_of(2) || !self.n.is_multiple_of(self.window)
        {
            return bad(format!(
                "window {} must be even and divide N = {}",
                self.window, self.n
            ));
        }
        if self.heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!(
                "D = {} not divisible by {} heads",
                self.d, self.heads
            ));
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.window_blocks && !self.global_blocks {
            return bad("at least one block kind must be enabled".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Per loop: window, global, shifted window, global; disabled kinds are
    /// dropped.
    pub fn block_order(&self) -> Vec<BlockKind> {
        let one = [
            BlockKind::Window,
            BlockKind::Global,
            BlockKind::ShiftedWindow,
            BlockKind::Global,
        ];
        (0..self.loops)
            .flat_map(|_| one)
            .filter(|k| match k {
                BlockKind::Global => self.global_blocks,
                _ => self.window_blocks,
            })
            .collect()
    }
}

/// Length of one head's window bias table: `2 N_w − 1`.
pub fn w_rpe_len(window: usize) -> usize {
    2 * window - 1
}

/// Length of one head's global bias table: `N/2 + 1`.
pub fn g_rpe_len(n: usize) -> usize {
    n / 2 + 1
}

/// Table position for every `(i, j)` of an `M × M` window bias, row-major:
/// `b_{j-i}` lives at `j − i + M − 1`.
pub fn w_rpe_index(m: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            idx.push(j + m - 1 - i);
        }
    }
    idx
}

/// Table position for every `(i, j)` of the `N × N` global bias:
/// `|j−i|` when at most `N/2`, otherwise `N − |j−i|`.
pub fn g_rpe_index(n: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = i.abs_diff(j);
            idx.push(if d <= n / 2 { d } else { n - d });
        }
    }
    idx
}

fn expand(table: &[f64], want: usize, m: usize, index: Vec<usize>, what: &str) -> Result<Tensor> {
    if table.len() != want {
        return Err(Error::shape(
            "rpe_bias",
            format!("{what} table has {} entries, expected {want}", table.len()),
        ));
    }
    Tensor::new(vec![m, m], index.into_iter().map(|k| table[k]).collect())
}

/// `B_ij = b_{j−i}` from a table ordered `b_{−M+1}, …, b_{M−1}`.
pub fn w_rpe_bias(table: &[f64], m: usize) -> Result<Tensor> {
    expand(table, w_rpe_len(m), m, w_rpe_index(m), "window")
}

/// Symmetric circulant bias from a table ordered `b_0, …, b_{N/2}`.
pub fn g_rpe_bias(table: &[f64], n: usize) -> Result<Tensor> {
    if !n.is_multiple_of(2) {
        return Err(Error::Config(format!("global bias needs even N, got {n}")));
    }
    expand(table, g_rpe_len(n), n, g_rpe_index(n), "global")
}

/// Splits `N × D` rows into contiguous `N_w × D` windows.
pub fn window_partition(x: &Tensor, window: usize) -> Result<Vec<Tensor>> {
    let n = x.rows();
    if x.shape().len() != 2 || window == 0 || !n.is_multiple_of(window) {
        return Err(Error::shape(
            "window_partition",
            format!("{:?} into windows of {window}", x.shape()),
        ));
    }
    let d = x.cols();
    (0..n / window)
        .map(|w| {
            Tensor::new(
                vec![window, d],
                x.data()[w * window * d..(w + 1) * window * d].to_vec(),
            )
        })
        .collect()
}

/// Inverse of [`window_partition`].
pub fn window_merge(windows: &[Tensor]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::shape("window_merge", "no windows"))?;
    let mut data = Vec::with_capacity(first.len() * windows.len());
    for w in windows {
        if w.shape() != first.shape() {
            return Err(Error::shape(
                "window_merge",
                format!("{:?} vs {:?}", w.shape(), first.shape()),
            ));
        }
        data.extend_from_slice(w.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] *= windows.len();
    Tensor::new(shape, data)
}

/// Circular shift of rows: `out[i] = x[(i − offset) mod N]`.
pub fn roll(x: &Tensor, offset: isize) -> Tensor {
    let n = x.shape().first().copied().unwrap_or(1).max(1);
    let block = x.len() / n;
    let s = offset.rem_euclid(n as isize) as usize;
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        let from = (i + n - s) % n;
        out[i * block..(i + 1) * block]
            .copy_from_slice(&x.data()[from * block..(from + 1) * block]);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
