//! Batch front end for the mednet library: run configurations and one
//! function per subcommand.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablation, cmd_analyze, cmd_eval, cmd_federated, cmd_flops, cmd_gendata, cmd_train, load_data, AblationRow,
    EvalSummary, FederatedSummary, GenDataSummary, PointSpectrum, TrainSummary,
};
pub use config::{AnalyzeConfig, DataConfig, ModelConfig, Overrides, RunConfig, OUT_ENV};

use mednet_core::ErrorCategory;

/// Process exit code for an error category.
pub fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numerical => 3,
    }
}
