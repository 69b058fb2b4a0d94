//! Experiment configuration, Monte-Carlo driver and reporting.

mod config;
mod grid;
mod heavytail;
mod monte_carlo;
mod report;

pub use config::{DgpSpec, ExperimentConfig, NuisanceOptions, ReportFormat};
pub use grid::{grid_search_gbrt, select_by_score, GbrtGrid, GridPreset};
pub use heavytail::{heavy_tail_diagnostic, heavy_tail_meta, HeavyTailReport, HeavyTailStudy, MetaReport, TailRow, ORACLE_LABEL, TAIL_LEVELS};
pub use monte_carlo::{
    fold_seed, run_monte_carlo, run_replication, summarize, summarize_recipe, Metric, PropensityStats, PropensitySummary,
    RecipeSummary, ReplicationRecord, RunStatus, SimulationReport,
};
pub use report::{
    metrics_csv, metrics_markdown, propensity_markdown, read_raw_csv, recipes_of, render_report, report_from_raw, write_raw_csv,
};
