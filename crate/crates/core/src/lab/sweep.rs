use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::run::{curve_panels, run_in, RunSummary};
use super::svg::render_curves;
use crate::error::{Error, Result};

/// Swept hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    /// Sets `train.tau` directly.
    Tau,
    /// `tau = value * epsilon`.
    TauMultiplier,
    /// Sets the training and noise seeds; model init follows the training
    /// seed.
    Seed,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Tau => "tau",
            Self::TauMultiplier => "tau_multiplier",
            Self::Seed => "seed",
        }
    }

    /// `base` with this parameter set to `value` and a derived run id.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            Self::Lambda => cfg.train.lambda = value,
            Self::Tau => {
                cfg.train.tau = value;
                cfg.tau_multiplier = None;
            }
            Self::TauMultiplier => cfg.tau_multiplier = Some(value),
            Self::Seed => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Validation(format!("seed {value} must be a non-negative integer")));
                }
                cfg.train.seed = value as u64;
                cfg.noise.seed = value as u64;
                cfg.model.set_init_seed(None);
            }
        }
        cfg.run_id = format!("{}-{}{}", base.run_id, self.name(), value);
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "tau" => Ok(Self::Tau),
            "tau_multiplier" => Ok(Self::TauMultiplier),
            "seed" => Ok(Self::Seed),
            _ => Err(Error::Validation(format!(
                "unknown sweep parameter {s:?} (lambda, tau, tau_multiplier, seed)"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct SweepEntry {
    pub value: f64,
    pub run_id: String,
    pub outcome: Result<RunSummary>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub param: SweepParam,
    pub dir: PathBuf,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &SweepEntry> {
        self.entries.iter().filter(|e| e.outcome.is_err())
    }
}

pub const SWEEP_HEADER: &str =
    "run_id,param,value,status,epochs_completed,final_test_acc,peak_test_acc,last10_test_acc,final_label_precision";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One run per value under `<out>/<run_id>-sweep-<param>/`, plus a combined
/// `sweep.csv` and overlaid `sweep.svg`. A failing run is recorded and does
/// not stop the others.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one value".into()));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("sweep value {v} is not finite")));
        }
        if values[..i].contains(v) {
            return Err(Error::Validation(format!("sweep value {v} repeated")));
        }
    }
    base.validate()?;
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let dir = base
        .run_dir()
        .with_file_name(format!("{}-sweep-{}", base.run_id, param.name()));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let entries: Vec<SweepEntry> = configs
        .iter()
        .zip(values)
        .map(|(cfg, &value)| SweepEntry {
            value,
            run_id: cfg.run_id.clone(),
            outcome: run_in(cfg, &dir.join(&cfg.run_id)),
        })
        .collect();

    let mut csv = format!("{SWEEP_HEADER}\n");
    for e in &entries {
        let line = match &e.outcome {
            Ok(s) => format!(
                "{},{},{},ok,{},{},{},{},{}",
                e.run_id,
                param,
                e.value,
                s.epochs_completed,
                opt(s.final_test_acc),
                opt(s.peak_test_acc),
                opt(s.last10_test_acc),
                opt(s.final_label_precision)
            ),
            Err(err) => format!("{},{},{},{},,,,,", e.run_id, param, e.value, err.category()),
        };
        csv.push_str(&line);
        csv.push('\n');
    }
    let csv_path = dir.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let names: Vec<String> = entries.iter().map(|e| format!("{param}={}", e.value)).collect();
    let runs: Vec<(&str, &[_])> = entries
        .iter()
        .zip(&names)
        .filter_map(|(e, n)| e.outcome.as_ref().ok().map(|s| (n.as_str(), s.rows.as_slice())))
        .collect();
    let svg_path = dir.join("sweep.svg");
    fs::write(&svg_path, render_curves(&curve_panels(&runs, false))).map_err(|e| Error::io(&svg_path, e))?;

    Ok(SweepReport { param, dir, entries })
}
