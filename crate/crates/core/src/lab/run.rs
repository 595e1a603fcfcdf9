use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::svg::{render_curves, Panel, Series};
use crate::cotrain::Trainer;
use crate::datanoise::{corrupt_labels, noise_audit, LabeledDataset, NoiseAudit};
use crate::error::{Error, Result};
use crate::models::save_checkpoint;

pub const METRICS_HEADER: &str =
    "epoch,test_acc,test_acc_f,test_acc_g,label_precision,mean_total_loss,mean_selected_loss,rate,lr,wall_ms";
/// Bumped whenever the `metrics.csv` columns change.
pub const METRICS_SCHEMA_VERSION: u32 = 1;
/// Epochs averaged by `RunSummary::last10_test_acc`.
pub const TAIL_EPOCHS: usize = 10;

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean over the run's networks; absent on epochs without evaluation.
    pub test_acc: Option<f64>,
    pub test_acc_f: Option<f64>,
    pub test_acc_g: Option<f64>,
    pub label_precision: Option<f64>,
    pub mean_total_loss: f64,
    pub mean_selected_loss: f64,
    pub rate: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            opt(self.test_acc),
            opt(self.test_acc_f),
            opt(self.test_acc_g),
            opt(self.label_precision),
            self.mean_total_loss,
            self.mean_selected_loss,
            self.rate,
            self.lr,
            self.wall_ms
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Headline numbers of a run, also written as `summary.toml`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algorithm: String,
    pub metrics_schema: u32,
    pub epochs_completed: usize,
    pub final_test_acc: Option<f64>,
    pub peak_test_acc: Option<f64>,
    /// Mean test accuracy over the last evaluated epochs (up to ten).
    pub last10_test_acc: Option<f64>,
    pub final_label_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip)]
    pub dir: PathBuf,
    #[serde(skip)]
    pub rows: Vec<MetricsRow>,
}

impl RunSummary {
    fn new(config: &ExperimentConfig, dir: PathBuf, rows: Vec<MetricsRow>, failure: Option<String>) -> Self {
        let accs: Vec<f64> = rows.iter().filter_map(|r| r.test_acc).collect();
        let tail = &accs[accs.len().saturating_sub(TAIL_EPOCHS)..];
        Self {
            run_id: config.run_id.clone(),
            algorithm: config.train.algorithm.name().into(),
            metrics_schema: METRICS_SCHEMA_VERSION,
            epochs_completed: rows.len(),
            final_test_acc: rows.last().and_then(|r| r.test_acc),
            peak_test_acc: accs.iter().copied().reduce(f64::max),
            last10_test_acc: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
            final_label_precision: rows.last().and_then(|r| r.label_precision),
            failure,
            dir,
            rows,
        }
    }
}

/// Accuracy and label-precision panels of one or more runs.
pub fn curve_panels(runs: &[(&str, &[MetricsRow])], per_network: bool) -> Vec<Panel> {
    let pct = |f: &dyn Fn(&MetricsRow) -> Option<f64>, rows: &[MetricsRow]| {
        rows.iter()
            .filter_map(|r| f(r).map(|v| (r.epoch as f64, 100.0 * v)))
            .collect::<Vec<_>>()
    };
    let mut acc = Vec::new();
    let mut prec = Vec::new();
    for &(name, rows) in runs {
        acc.push(Series {
            name: name.into(),
            points: pct(&|r| r.test_acc, rows),
        });
        if per_network && rows.iter().any(|r| r.test_acc_g.is_some()) {
            acc.push(Series {
                name: format!("{name} f"),
                points: pct(&|r| r.test_acc_f, rows),
            });
            acc.push(Series {
                name: format!("{name} g"),
                points: pct(&|r| r.test_acc_g, rows),
            });
        }
        prec.push(Series {
            name: name.into(),
            points: pct(&|r| r.label_precision, rows),
        });
    }
    vec![
        Panel {
            title: "Test accuracy".into(),
            x_label: "epoch".into(),
            y_label: "accuracy (%)".into(),
            y_range: Some([0.0, 100.0]),
            series: acc,
        },
        Panel {
            title: "Label precision".into(),
            x_label: "epoch".into(),
            y_label: "precision (%)".into(),
            y_range: Some([0.0, 100.0]),
            series: prec,
        },
    ]
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads the dataset and applies the configured label noise.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = config.dataset.load()?;
    let q = config.noise.matrix(train.class_count())?;
    Ok((corrupt_labels(&train, &q, config.noise.seed)?, test))
}

/// Runs one experiment and writes its directory:
///
/// ```text
/// config.snapshot  metrics.csv  curves.svg  summary.toml  checkpoints/network_<k>.ckpt
/// ```
///
/// A failure after training started keeps the partial `metrics.csv`, ends
/// it with a `# FAILED ...` line and returns the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    run_in(config, &config.run_dir())
}

pub(crate) fn run_in(config: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let config = config.resolved();
    let (train, test) = prepare_data(&config)?;
    let shape = train.image_shape();
    let networks = config.model.build(
        shape,
        train.class_count(),
        config.train.seed,
        config.train.algorithm.network_count(),
    )?;
    let mut trainer = Trainer::new(config.train.clone(), config.views.clone(), networks)?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.snapshot"), config.to_toml()?)?;
    let csv_path = dir.join("metrics.csv");
    let mut csv = format!("{METRICS_HEADER}\n");
    write(&csv_path, &csv)?;

    let started = Instant::now();
    let mut rows = Vec::with_capacity(config.train.epochs);
    let mut failure = None;
    for epoch in 1..=config.train.epochs {
        let step = trainer.run_epoch(&train).and_then(|rec| {
            let evaluate = epoch % config.eval_every == 0 || epoch == config.train.epochs;
            let accs = if evaluate { Some(trainer.evaluate(&test)?) } else { None };
            Ok((rec, accs))
        });
        let (rec, accs) = match step {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(csv, "# FAILED epoch {epoch}: {}: {e}", e.category());
                failure = Some(e);
                break;
            }
        };
        let row = MetricsRow {
            epoch,
            test_acc: accs.as_ref().map(|a| a.iter().sum::<f64>() / a.len() as f64),
            test_acc_f: accs.as_ref().map(|a| a[0]),
            test_acc_g: accs.as_ref().and_then(|a| a.get(1).copied()),
            label_precision: rec.label_precision,
            mean_total_loss: rec.mean_total_loss,
            mean_selected_loss: rec.mean_selected_loss,
            rate: rec.rate,
            lr: rec.lr,
            wall_ms: if config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        csv.push_str(&row.to_csv());
        csv.push('\n');
        write(&csv_path, &csv)?;
        rows.push(row);
    }
    if failure.is_some() {
        write(&csv_path, &csv)?;
    }

    let label = config.train.algorithm.name();
    write(&dir.join("curves.svg"), render_curves(&curve_panels(&[(label, &rows)], true)))?;
    if config.save_checkpoints && failure.is_none() {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        for (k, net) in trainer.networks().iter().enumerate() {
            save_checkpoint(net, &ck.join(format!("network_{k}.ckpt")))?;
        }
    }
    let summary = RunSummary::new(
        &config,
        dir.to_path_buf(),
        rows,
        failure.as_ref().map(|e| format!("{}: {e}", e.category())),
    );
    write(
        &dir.join("summary.toml"),
        toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// Realized noise of a configuration next to the matrix it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseReport {
    pub expected_flip_rate: f64,
    pub q: Vec<Vec<f64>>,
    pub audit: NoiseAudit,
}

pub fn audit_noise(config: &ExperimentConfig) -> Result<NoiseReport> {
    config.validate()?;
    let (train, _) = config.dataset.load()?;
    let q = config.noise.matrix(train.class_count())?;
    let noisy = corrupt_labels(&train, &q, config.noise.seed)?;
    Ok(NoiseReport {
        expected_flip_rate: q.expected_flip_rate(),
        q: q.rows().to_vec(),
        audit: noise_audit(&noisy)?,
    })
}
