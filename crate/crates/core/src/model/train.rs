use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_cues, CueSequence, LayoutModel, ModelConfig, PostProc};
use crate::error::{Error, Result};
use crate::geometry::HorizonDepthSeq;
use crate::layout::{manhattanize, CornerParams, RoomLayout};
use crate::losses::{loss_graph, LossReport, LossTarget};
use crate::metrics::{evaluate, MetricOptions, MetricReport};
use crate::numcore::{Adam, Checkpoint, Gradients, Graph, Tensor};

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Sample {
    pub name: String,
    pub layout: RoomLayout,
    pub cues: CueSequence,
    pub target: LossTarget,
}

/// Training or evaluation rooms with their cues. Cue noise is drawn once per
/// sample from the config seed and the sample position.
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_layouts(layouts: Vec<(String, RoomLayout)>, config: &ModelConfig) -> Result<Self> {
        let n = config.seq.n;
        let samples = layouts
            .into_iter()
            .enumerate()
            .map(|(i, (name, layout))| {
                let cues = make_cues(
                    &layout,
                    n,
                    config.seq.window,
                    config.cue_noise,
                    derive_seed(config.seed, i as u64),
                )?;
                let target = LossTarget::from_layout(&layout, n)?;
                Ok(Sample {
                    name,
                    layout,
                    cues,
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// One optimizer step: the batch-mean loss before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// End-of-epoch evaluation on a held-out set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: u64,
    pub step: u64,
    pub loss: LossReport,
    pub metrics: MetricReport,
}

// With `manhattan` set, shape metrics use the Manhattan fit of the
// prediction, or the raw polygon when no fit exists.
fn evaluate_sample(
    model: &LayoutModel,
    s: &Sample,
    opts: &MetricOptions,
    manhattan: Option<CornerParams>,
) -> Result<(LossReport, MetricReport)> {
    let cfg = model.config();
    let mut g = Graph::new();
    let (d, h) = model.forward(&mut g, &s.cues, None)?;
    let terms = loss_graph(&mut g, d, h, &s.target, &cfg.loss, cfg.toggles)?;
    let pred = model.predict(&s.cues, s.layout.camera_height())?;
    let shape = manhattan.and_then(|c| manhattanize(&pred, c).ok());
    Ok((
        terms.report(&g),
        evaluate(&pred, shape.as_ref(), &s.layout, opts)?,
    ))
}

fn evaluate_in_pool(
    model: &LayoutModel,
    data: &Dataset,
    opts: &MetricOptions,
    manhattan: Option<CornerParams>,
    parallel: bool,
) -> Result<Vec<(LossReport, MetricReport)>> {
    let eval = |s| evaluate_sample(model, s, opts, manhattan);
    if parallel {
        data.samples.par_iter().map(eval).collect()
    } else {
        data.samples.iter().map(eval).collect()
    }
}

/// Per-sample loss and metrics, in dataset order. `jobs > 1` evaluates
/// samples on that many threads with the same results.
pub fn evaluate_dataset(
    model: &LayoutModel,
    data: &Dataset,
    opts: &MetricOptions,
    postproc: PostProc,
    corners: CornerParams,
    jobs: usize,
) -> Result<Vec<(LossReport, MetricReport)>> {
    let manhattan = (postproc == PostProc::Manhattan).then_some(corners);
    if jobs <= 1 {
        return evaluate_in_pool(model, data, opts, manhattan, false);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(|| evaluate_in_pool(model, data, opts, manhattan, true))
}

fn mirrored_target(t: &LossTarget, camera_height: f64) -> Result<LossTarget> {
    let n = t.n();
    let d = t.depths.as_slice();
    let flipped = (0..n).map(|j| d[(2 * n - 2 - j) % n]).collect();
    LossTarget::new(HorizonDepthSeq::new(flipped)?, t.height, camera_height)
}

/// Minibatch Adam over the weighted layout loss.
///
/// The batch order, flips and dropout masks are functions of the config
/// seed and the step number only, so a run resumed from a checkpoint
/// continues exactly as the uninterrupted run would.
pub struct Trainer {
    model: LayoutModel,
    adam: Adam,
    step: u64,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let model = LayoutModel::new(config)?;
        let adam = Adam::new(model.config().optimizer, model.store());
        Ok(Self {
            model,
            adam,
            step: 0,
            pool: None,
        })
    }

    /// Computes per-sample gradients on `jobs` threads. Results are reduced
    /// in batch order, so the outcome does not depend on `jobs`.
    pub fn with_jobs(mut self, jobs: usize) -> Result<Self> {
        self.pool = if jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn model(&self) -> &LayoutModel {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self, len: usize) -> u64 {
        len.div_ceil(self.model.config().batch_size).max(1) as u64
    }

    /// Sample positions used by optimizer step `step`.
    pub fn batch_indices(&self, len: usize, step: u64) -> Vec<usize> {
        let bs = self.model.config().batch_size;
        let spe = self.steps_per_epoch(len);
        let (epoch, b) = (step / spe, (step % spe) as usize);
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.model.config().seed,
            epoch,
        )));
        perm[b * bs..((b + 1) * bs).min(len)].to_vec()
    }

    fn sample_gradient(&self, sample: &Sample, index: usize) -> Result<(LossReport, Gradients)> {
        let cfg = self.model.config();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, self.step), index as u64));
        let flip = cfg.flip_augment && rng.gen_bool(0.5);
        let (cues, target);
        let (cues_ref, target_ref) = if flip {
            cues = sample.cues.mirrored();
            target = mirrored_target(&sample.target, sample.layout.camera_height())?;
            (&cues, &target)
        } else {
            (&sample.cues, &sample.target)
        };
        let mut g = Graph::new();
        let (d, h) = self.model.forward(&mut g, cues_ref, Some(&mut rng))?;
        let terms = loss_graph(&mut g, d, h, target_ref, &cfg.loss, cfg.toggles)?;
        let grads = g.gradients(terms.total)?;
        Ok((terms.report(&g), grads))
    }

    /// One optimizer step on the next batch.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let idx = self.batch_indices(data.len(), self.step);
        let work = |&i: &usize| self.sample_gradient(&data.samples[i], i);
        let results: Vec<Result<(LossReport, Gradients)>> = match &self.pool {
            Some(pool) => pool.install(|| idx.par_iter().map(work).collect()),
            None => idx.iter().map(work).collect(),
        };
        let step = self.step;
        let diverged = |i: usize, e: Error| match e {
            Error::NonFinite { op } => Error::Diverged {
                step,
                detail: format!(
                    "{op} produced a non-finite value on sample {}",
                    data.samples[i].name
                ),
            },
            other => other,
        };
        let mut reports = Vec::with_capacity(idx.len());
        let scale = 1.0 / idx.len() as f64;
        let store = self.model.store_mut();
        store.zero_grads();
        for (&i, r) in idx.iter().zip(results) {
            let (report, grads) = r.map_err(|e| diverged(i, e))?;
            if !report.total.is_finite() {
                return Err(diverged(i, Error::NonFinite { op: "loss" }));
            }
            store.accumulate(&grads, scale)?;
            reports.push(report);
        }
        self.adam.step(store)?;
        if store.iter().any(|p| !p.value.all_finite()) {
            return Err(diverged(idx[0], Error::NonFinite { op: "adam" }));
        }
        self.step += 1;
        Ok(StepRecord {
            step,
            loss: LossReport::mean(&reports),
        })
    }

    /// Runs `steps` optimizer steps, reporting each one to `on_step`.
    pub fn run(
        &mut self,
        data: &Dataset,
        steps: u64,
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..steps {
            let rec = self.train_step(data)?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    /// Loss and metrics for every sample of `data`, without dropout.
    pub fn evaluate(
        &self,
        data: &Dataset,
        opts: &MetricOptions,
    ) -> Result<(Vec<LossReport>, Vec<MetricReport>)> {
        let rows = match &self.pool {
            Some(pool) => pool.install(|| evaluate_in_pool(&self.model, data, opts, None, true)),
            None => evaluate_in_pool(&self.model, data, opts, None, false),
        }?;
        Ok(rows.into_iter().unzip())
    }

    /// Parameters, optimizer moments and step counter.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.meta["step"] = self.step.into();
        ck.meta["adam_step"] = self.adam.step_count().into();
        let names: Vec<String> = self.model.store().iter().map(|p| p.name.clone()).collect();
        for (name, m) in names.iter().zip(self.adam.first_moments()) {
            ck.tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(self.adam.second_moments()) {
            ck.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        ck
    }

    /// Resumes from [`Trainer::checkpoint`] output.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = LayoutModel::from_checkpoint(ck)?;
        let meta_u64 = |key: &str| {
            ck.meta.get(key).and_then(|v| v.as_u64()).ok_or_else(|| {
                Error::Checkpoint(format!("missing {key}; not a training checkpoint"))
            })
        };
        let step = meta_u64("step")?;
        let adam_step = meta_u64("adam_step")?;
        let moments = |prefix: &str| -> Result<Vec<Tensor>> {
            model
                .store()
                .iter()
                .map(|p| {
                    ck.get(&format!("{prefix}.{}", p.name))
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.{}", p.name)))
                })
                .collect()
        };
        let adam = Adam::from_state(
            model.config().optimizer,
            model.store(),
            adam_step,
            moments("adam.m")?,
            moments("adam.v")?,
        )?;
        Ok(Self {
            model,
            adam,
            step,
            pool: None,
        })
    }
}
