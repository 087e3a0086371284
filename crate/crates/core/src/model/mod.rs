//! The layout network: a linear cue encoder, the sequence trunk, and two
//! output branches predicting horizon-depths and the room height.

pub mod cues;
mod infer;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cues::{make_cues, CueSequence, CUE_CHANNELS};
pub use infer::{infer, load_model, Inference, PostProc};
pub use train::{derive_seed, evaluate_dataset, Dataset, EvalRecord, Sample, StepRecord, Trainer};

use crate::error::{Error, Result};
use crate::geometry::HorizonDepthSeq;
use crate::layout::LayoutPrediction;
use crate::losses::{LossToggles, LossWeights};
use crate::numcore::{AdamConfig, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::swgformer::{BlockKind, Linear, PeMode, SeqConfig, Trunk};

/// Added after the softplus of both heads so outputs stay positive.
pub const OUTPUT_EPS: f64 = 1e-3;

/// Named configuration variants for ablation runs.
pub const ABLATIONS: [&str; 8] = [
    "full",
    "no-height",
    "no-normal-gradient",
    "no-gradient",
    "no-global-block",
    "no-window-block",
    "no-pe",
    "ape",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub seq: SeqConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub toggles: LossToggles,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Standard deviation of the additive cue noise.
    #[serde(default = "default_cue_noise")]
    pub cue_noise: f64,
    /// Randomly mirror training samples left-right.
    #[serde(default)]
    pub flip_augment: bool,
    #[serde(default)]
    pub seed: u64,
    /// Output of the depth branch at initialization, meters.
    #[serde(default = "default_init_depth")]
    pub init_depth: f64,
    /// Output of the height branch at initialization, meters.
    #[serde(default = "default_init_height")]
    pub init_height: f64,
}

fn default_batch_size() -> usize {
    6
}

fn default_cue_noise() -> f64 {
    0.05
}

fn default_init_depth() -> f64 {
    2.5
}

fn default_init_height() -> f64 {
    2.8
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq: SeqConfig::default(),
            loss: LossWeights::default(),
            toggles: LossToggles::default(),
            optimizer: AdamConfig::default(),
            batch_size: default_batch_size(),
            cue_noise: default_cue_noise(),
            flip_augment: false,
            seed: 0,
            init_depth: default_init_depth(),
            init_height: default_init_height(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if !(o.lr >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.cue_noise >= 0.0 && self.cue_noise.is_finite()) {
            return Err(Error::Config("cue noise must be >= 0".into()));
        }
        if !(self.init_depth > OUTPUT_EPS && self.init_height > OUTPUT_EPS) {
            return Err(Error::Config(
                "initial outputs must exceed the output floor".into(),
            ));
        }
        Ok(())
    }

    /// This configuration with one named ablation applied.
    pub fn with_ablation(&self, name: &str) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "full" => {}
            "no-height" => c.toggles = LossToggles::without_height(),
            "no-normal-gradient" => c.toggles = LossToggles::without_normal_and_gradient(),
            "no-gradient" => c.toggles = LossToggles::without_gradient(),
            "no-global-block" => c.seq.global_blocks = false,
            "no-window-block" => c.seq.window_blocks = false,
            "no-pe" => c.seq.pe_mode = PeMode::None,
            "ape" => c.seq.pe_mode = PeMode::Absolute,
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation {name:?}; known: {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub struct LayoutModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: Linear,
    trunk: Trunk,
    depth_head: Linear,
    height_head: Linear,
}

impl LayoutModel {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.seq.d;
        let encoder = Linear::new(&mut store, &mut rng, "encoder", CUE_CHANNELS, d);
        let trunk = Trunk::new(&config.seq, &mut store, &mut rng, "trunk")?;
        let depth_head = Linear::new(&mut store, &mut rng, "depth_head", d, 1);
        let height_head = Linear::new(&mut store, &mut rng, "height_head", d, 1);
        store.get_mut(depth_head.bias).value =
            Tensor::vector(vec![softplus_inverse(config.init_depth - OUTPUT_EPS)]);
        store.get_mut(height_head.bias).value =
            Tensor::vector(vec![softplus_inverse(config.init_height - OUTPUT_EPS)]);
        Ok(Self {
            config,
            store,
            encoder,
            trunk,
            depth_head,
            height_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn block_kinds(&self) -> Vec<BlockKind> {
        self.trunk.block_kinds()
    }

    /// Records the forward pass; returns the depth `[N]` and height `[]`
    /// nodes. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        cues: &CueSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let n = self.config.seq.n;
        if cues.n() != n {
            return Err(Error::shape(
                "model",
                format!("{} cue columns, model expects {n}", cues.n()),
            ));
        }
        let store = &self.store;
        let x = g.constant(cues.tensor().clone())?;
        let x = self.encoder.forward(g, store, x)?;
        let x = self.trunk.forward(g, store, x, rng)?;

        let d = self.depth_head.forward(g, store, x)?;
        let d = g.softplus(d)?;
        let d = g.add_scalar(d, OUTPUT_EPS)?;
        let depth = g.reshape(d, &[n])?;

        let xt = g.transpose(x)?;
        let pooled = g.mean_lastdim(xt)?;
        let pooled = g.reshape(pooled, &[1, self.config.seq.d])?;
        let h = self.height_head.forward(g, store, pooled)?;
        let h = g.softplus(h)?;
        let h = g.add_scalar(h, OUTPUT_EPS)?;
        let height = g.reshape(h, &[])?;
        Ok((depth, height))
    }

    /// Inference-mode prediction; the camera height is carried through.
    pub fn predict(&self, cues: &CueSequence, camera_height: f64) -> Result<LayoutPrediction> {
        let mut g = Graph::new();
        let (d, h) = self.forward(&mut g, cues, None)?;
        LayoutPrediction::new(
            HorizonDepthSeq::new(g.value(d).data().to_vec())?,
            g.value(h).item(),
            camera_height,
            "model",
        )
    }

    /// Parameters and configuration, without optimizer state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "block_order": self.block_kinds(),
        });
        Checkpoint {
            config_hash: self.config.hash(),
            meta,
            tensors: self
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model; the stored hash must match the stored config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ckpt.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        )?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match the stored config".into(),
            ));
        }
        let mut model = Self::new(config)?;
        for id in model.store.ids().collect::<Vec<_>>() {
            let p = model.store.get_mut(id);
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }
}
