//! File formats and orchestration behind the `regimix` binary.

pub mod commands;
pub mod control;
pub mod data;
pub mod error;
pub mod model_file;
pub mod pipeline;
pub mod plan;

pub use control::{parse_control, parse_control_str, ControlConfig};
pub use data::{parse_returns, parse_returns_str};
pub use error::{CliError, CliResult};
pub use model_file::{load_model, save_model, ModelFile};
pub use pipeline::{fit_models, run_pipeline, PipelineReport};
pub use plan::{load_plan, parse_plan_str};
