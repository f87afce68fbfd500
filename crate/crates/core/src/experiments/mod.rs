//! Seeded single runs, parameter sweeps and the capacity phase grid, with
//! CSV, JSON and plot-data emission.

pub mod checks;
mod config;
mod emit;
mod run;
mod sweep;

pub use config::{AugConfig, DataConfig, LabelClasses, LabelConfig, PerSample, ProbeConfig, RunConfig};
pub use emit::{
    emit_grid, emit_records, read_records_csv, write_axis_dat, write_grid_dat, write_probes_csv, write_records_csv,
    ProbeEventRow, RecordRow, RECORD_COLUMNS,
};
pub use run::{prepare, run_single, run_single_with_model, LayerProbe, Prepared, RunRecord, EMBEDDING_LAYER};
pub use sweep::{
    capacity_grid, run_jobs, sweep, sweep_b, sweep_classes, sweep_noise, sweep_projector, sweep_strength, Axis,
    AxisValue, GridCell, GridResult, GridSpec, Job, SweepSpec,
};
