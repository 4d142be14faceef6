//! Campaign workflow runner: configuration, Monte Carlo case generation,
//! end-to-end pipeline execution, accuracy metrics, and result emission.

pub mod campaign;
pub mod config;
pub mod report;

pub use campaign::{
    draw_case, estimate_stream, load_catalog, run_campaign, run_case, CampaignError,
    CampaignOutput, CaseDraw, CaseResult, CaseRow, CaseStatus,
};
pub use config::{ConfigError, SimulationConfig};
pub use report::{
    compute_rms, emit_results, read_cases_csv, write_cases_csv, AxisRms, InertialRms,
    ReportError, RmsSummary, CASES_CSV_HEADER,
};
