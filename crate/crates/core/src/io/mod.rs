//! File formats: the CSV yield panel, the TOML model file and the JSON
//! result bundle with its CSV sidecars.

mod bundle;
mod config;
mod panel;

pub use bundle::{percentile_label, residuals, write_factors, write_forecasts, write_states, write_yield_table, ResultBundle};
pub use config::{FactorConfig, ForecastConfig, ModelConfig, OptimizerConfig, SimulateConfig};
pub use panel::{parse_panel, read_panel, write_panel, write_panel_file};
