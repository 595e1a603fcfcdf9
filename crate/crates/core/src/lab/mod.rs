//! Experiment runner: TOML configuration, seeded end-to-end runs with
//! per-epoch evaluation, CSV metric logs, SVG curves and hyperparameter
//! sweeps.

mod config;
mod gradcheck;
mod run;
mod svg;
mod sweep;

pub use config::{
    out_root, synth_strong_set, DatasetSpec, ExperimentConfig, ModelSpec, NoiseSpec, OUT_ROOT_ENV,
};
pub use gradcheck::{check_gradients, CheckModel, CHECK_BATCH, CHECK_CLASSES, CHECK_MLP_HIDDEN, CHECK_MLP_INPUT};
pub use run::{
    audit_noise, curve_panels, metrics_csv, prepare_data, run_experiment, MetricsRow, NoiseReport, RunSummary,
    METRICS_HEADER, METRICS_SCHEMA_VERSION, TAIL_EPOCHS,
};
pub use svg::{panel_frame, render_curves, Frame, Panel, Series};
pub use sweep::{sweep, SweepEntry, SweepParam, SweepReport, SWEEP_HEADER};
