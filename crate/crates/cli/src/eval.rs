use std::fs;
use std::path::{Path, PathBuf};

use panolayout::error::{Error, Result};
use panolayout::layout::{CornerParams, LayoutPrediction};
use panolayout::metrics::{evaluate, summarize, MetricOptions, MetricReport, MetricSummary};
use panolayout::model::{evaluate_dataset, load_model, ModelConfig, PostProc};
use panolayout::numcore::Checkpoint;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{self, write_json};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Samples per panorama in oracle mode without a run config.
const ORACLE_N: usize = 256;

pub struct Args {
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub out: PathBuf,
    pub oracle: bool,
    pub jobs: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    split: &'a str,
    #[serde(flatten)]
    metrics: MetricSummary,
}

fn oracle_rows(
    dir: &Path,
    split: &str,
    n: usize,
    opts: &MetricOptions,
) -> Result<Vec<(String, MetricReport)>> {
    let manifest = dataset::read_manifest(dir)?;
    dataset::load_split(dir, &manifest, split)?
        .into_iter()
        .map(|(name, layout)| {
            let pred = LayoutPrediction::from_layout(&layout, n)?;
            Ok((name, evaluate(&pred, Some(&layout), &layout, opts)?))
        })
        .collect()
}

fn model_rows(
    dir: &Path,
    split: &str,
    ck: &Checkpoint,
    expected: Option<&ModelConfig>,
    opts: &MetricOptions,
    (postproc, corners): (PostProc, CornerParams),
    jobs: usize,
) -> Result<Vec<(String, MetricReport)>> {
    let model = load_model(ck, expected)?;
    let manifest = dataset::read_manifest(dir)?;
    let data = dataset::build(dir, &manifest, split, model.config())?;
    let rows = evaluate_dataset(&model, &data, opts, postproc, corners, jobs)?;
    Ok(data
        .samples()
        .iter()
        .zip(rows)
        .map(|(s, (_, m))| (s.name.clone(), m))
        .collect())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn write_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["name"];
    header.extend(MetricReport::COLUMNS);
    w.write_record(&header).map_err(csv_error)?;
    for (name, m) in rows {
        let mut record = vec![name.clone()];
        record.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let expected = cfg.as_ref().map(RunConfig::effective_model).transpose()?;
    let dir = match (&args.data, &cfg) {
        (Some(d), _) => d.clone(),
        (None, Some(c)) => c.dataset.clone(),
        (None, None) => {
            return Err(Error::Config(
                "either --data or --config is required".into(),
            ))
        }
    };
    let opts = cfg.as_ref().map(|c| c.metrics).unwrap_or_default();
    let rows = if args.oracle {
        let n = expected.as_ref().map_or(ORACLE_N, |m| m.seq.n);
        oracle_rows(&dir, &args.split, n, &opts)?
    } else {
        let path = args.checkpoint.as_deref().ok_or_else(|| {
            Error::Config("--checkpoint is required unless --oracle is set".into())
        })?;
        let ck = Checkpoint::load(path)?;
        let post = cfg
            .as_ref()
            .map_or((PostProc::None, CornerParams::default()), |c| {
                (c.postproc, c.corners)
            });
        model_rows(
            &dir,
            &args.split,
            &ck,
            expected.as_ref(),
            &opts,
            post,
            args.jobs,
        )?
    };
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "split {:?} has no samples",
            args.split
        )));
    }
    let metrics: Vec<MetricReport> = rows.iter().map(|(_, m)| *m).collect();
    let summary = Summary {
        split: &args.split,
        metrics: summarize(&metrics)?,
    };

    fs::create_dir_all(&args.out)?;
    write_csv(&args.out.join(METRICS_CSV), &rows)?;
    write_json(&args.out.join(SUMMARY_JSON), &summary)?;
    let m = &summary.metrics.mean;
    println!(
        "{} samples of {}: 2DIoU {:.4}, 3DIoU {:.4}, RMSE {:.4}, delta1 {:.4}, CE {:.4}, PE {:.4}",
        summary.metrics.count, args.split, m.iou2d, m.iou3d, m.rmse, m.delta1, m.ce, m.pe
    );
    Ok(())
}
