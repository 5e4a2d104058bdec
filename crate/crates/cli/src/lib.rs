//! Staged pipeline driver: population, characterization, plant design,
//! DK synthesis, evaluation, reports and admission of new models.

pub mod commands;
pub mod error;
pub mod state;

pub use commands::{
    cmd_admit, cmd_characterize, cmd_evaluate, cmd_plant, cmd_population, cmd_report, cmd_synthesize, run_all, AdmitReport,
};
pub use error::{CliError, Result};
pub use state::{PipelineState, Stage};

use std::path::Path;

use popobs::pipeline::PipelineConfig;

use crate::error::CliError as E;

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(E::io(path))?;
    serde_json::from_str(&text).map_err(E::schema(path))
}

pub fn load_model(path: &Path) -> Result<popobs::lti::StateSpace> {
    let text = std::fs::read_to_string(path).map_err(E::io(path))?;
    serde_json::from_str(&text).map_err(E::schema(path))
}
