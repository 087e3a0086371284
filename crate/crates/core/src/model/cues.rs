use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use std::f64::consts::PI;

use crate::geometry::latitude_from_depth;
use crate::layout::RoomLayout;
use crate::numcore::Tensor;

/// Channels per longitude column.
pub const CUE_CHANNELS: usize = 5;

/// Per-longitude model input standing in for image features: noisy
/// horizon-depth (m), noisy floor and ceiling boundary latitudes (rad), and
/// a sinusoid pair of the column position that repeats every `period`
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CueSequence {
    data: Tensor,
}

pub const DEPTH: usize = 0;
pub const FLOOR_LAT: usize = 1;
pub const CEILING_LAT: usize = 2;
pub const SIN: usize = 3;
pub const COS: usize = 4;

impl CueSequence {
    /// Wraps an `N × 5` tensor; values must be finite.
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 || data.cols() != CUE_CHANNELS {
            return Err(Error::shape(
                "cues",
                format!("{:?}, expected [N, {CUE_CHANNELS}]", data.shape()),
            ));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite { op: "cues" });
        }
        Ok(Self { data })
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.data.at(i, c)).collect()
    }

    /// Circularly shifts the content columns by `k` slots; the positional
    /// channels stay attached to their slots, so a shift by a multiple of
    /// the positional period is a plain roll of the whole sequence.
    pub fn rotated(&self, k: isize) -> Self {
        let n = self.n() as isize;
        self.permuted(|j| (j as isize - k).rem_euclid(n) as usize)
    }

    /// Left-right mirror: slot `j` takes the content of slot `N − 2 − j`,
    /// whose longitude is `−θ_j`.
    pub fn mirrored(&self) -> Self {
        let n = self.n();
        self.permuted(|j| (2 * n - 2 - j) % n)
    }

    fn permuted(&self, src: impl Fn(usize) -> usize) -> Self {
        let n = self.n();
        let mut out = self.data.clone();
        for j in 0..n {
            let s = src(j);
            for c in [DEPTH, FLOOR_LAT, CEILING_LAT] {
                out.data_mut()[j * CUE_CHANNELS + c] = self.data.at(s, c);
            }
        }
        Self { data: out }
    }
}

/// Cues for `layout` at `n` longitudes with additive Gaussian noise of
/// standard deviation `sigma` on the depth and latitude channels. The model
/// uses its window length as `period`.
pub fn make_cues(
    layout: &RoomLayout,
    n: usize,
    period: usize,
    sigma: f64,
    seed: u64,
) -> Result<CueSequence> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "cue noise must be >= 0, got {sigma}"
        )));
    }
    if period == 0 {
        return Err(Error::Config("positional period must be positive".into()));
    }
    let depths = layout.sample(n)?;
    let h_f = layout.camera_height();
    let h_c = layout.ceiling_offset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut jitter = |v: f64| {
        if sigma == 0.0 {
            v
        } else {
            v + noise.sample(&mut rng)
        }
    };
    let mut data = Vec::with_capacity(n * CUE_CHANNELS);
    for (j, &d) in depths.as_slice().iter().enumerate() {
        let floor = -latitude_from_depth(d, h_f)?;
        let ceiling = latitude_from_depth(d, h_c)?;
        let phase = 2.0 * PI * (j % period) as f64 / period as f64;
        data.extend([
            jitter(d),
            jitter(floor),
            jitter(ceiling),
            phase.sin(),
            phase.cos(),
        ]);
    }
    CueSequence::new(Tensor::new(vec![n, CUE_CHANNELS], data)?)
}
