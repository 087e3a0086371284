use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use panolayout::error::{Error, Result};
use panolayout::losses::LossReport;
use panolayout::metrics::summarize;
use panolayout::model::{EvalRecord, Trainer};
use panolayout::numcore::Checkpoint;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{self, write_json};

pub const STEP_LOG: &str = "train.jsonl";
pub const EVAL_LOG: &str = "eval.jsonl";
pub const MODEL_CONFIG: &str = "model.json";
pub const CHECKPOINT: &str = "checkpoint.bin";

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    Ok(BufWriter::new(file))
}

fn log_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn run(config_path: &Path, resume: Option<&Path>, jobs: usize) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let model = cfg.effective_model()?;
    let manifest = dataset::read_manifest(&cfg.dataset)?;
    if manifest.noise != model.cue_noise {
        return Err(Error::Config(format!(
            "model.cue_noise {} differs from the dataset noise {}",
            model.cue_noise, manifest.noise
        )));
    }
    let train = dataset::build(&cfg.dataset, &manifest, "train", &model)?;
    if train.is_empty() {
        return Err(Error::Config("the train split is empty".into()));
    }
    let val = dataset::build(&cfg.dataset, &manifest, "val", &model)?;

    let trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_hash != model.hash() {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {}, run config {}",
                    ck.config_hash,
                    model.hash()
                )));
            }
            Trainer::from_checkpoint(&ck)?
        }
        None => Trainer::new(model.clone())?,
    };
    let mut trainer = trainer.with_jobs(jobs)?;
    if trainer.step_count() > cfg.steps {
        return Err(Error::Config(format!(
            "checkpoint is at step {}, beyond the configured {} steps",
            trainer.step_count(),
            cfg.steps
        )));
    }

    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join(MODEL_CONFIG), &model)?;
    let mut steps_log = open_log(&cfg.out.join(STEP_LOG), resume.is_some())?;
    let mut eval_log = open_log(&cfg.out.join(EVAL_LOG), resume.is_some())?;
    let spe = trainer.steps_per_epoch(train.len());
    let mut last = None;

    let remaining = cfg.steps - trainer.step_count();
    let result = trainer.run(&train, remaining, |t, rec| {
        log_line(&mut steps_log, rec)?;
        last = Some(rec.loss);
        let step = t.step_count();
        if step % spe == 0 && !val.is_empty() {
            let (losses, metrics) = t.evaluate(&val, &cfg.metrics)?;
            let record = EvalRecord {
                epoch: step / spe,
                step,
                loss: LossReport::mean(&losses),
                metrics: summarize(&metrics)?.mean,
            };
            log_line(&mut eval_log, &record)?;
            println!(
                "epoch {} step {step}: train L_total {:.5}, val L_total {:.5}, val 2DIoU {:.4}",
                record.epoch, rec.loss.total, record.loss.total, record.metrics.iou2d
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            t.checkpoint()
                .save(&cfg.out.join(format!("checkpoint-{step:06}.bin")))?;
        }
        Ok(())
    });
    steps_log.flush()?;
    eval_log.flush()?;
    result?;

    let path = cfg.out.join(CHECKPOINT);
    trainer.checkpoint().save(&path)?;
    match last {
        Some(loss) => println!(
            "trained to step {}: L_d {:.5}, L_total {:.5}; checkpoint {}",
            trainer.step_count(),
            loss.depth,
            loss.total,
            path.display()
        ),
        None => println!(
            "already at step {}; checkpoint {}",
            trainer.step_count(),
            path.display()
        ),
    }
    Ok(())
}
