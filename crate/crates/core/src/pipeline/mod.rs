//! End-to-end analysis: ingestion, probing, speaker selection, transfer
//! analysis and report emission.

mod analysis;
mod cohort;
mod compare;
mod config;
mod output;

pub use analysis::{
    analyze_transfer, probe_source, resolve_transfer_source, run_analysis, sweep_cohort, Analysis, DroppedSpeaker,
    SpeakerSweep, TransferAnalysis, DEFAULT_TRANSFER_SOURCE,
};
pub use cohort::{Cohort, RawUtterance};
pub use compare::{
    compare_partition, compare_preference, read_matrix_csv, read_scores_csv, read_speakers_csv,
};
pub use config::RunConfig;
pub use output::{
    emit_charts, fmt_float, load_probe_dir, run_full_pipeline, write_analysis, write_probe_dir,
    write_sweep_csv, write_transfer_dir, BestRow, ProbeReport, ReportBundle, SweepRow, TransferReport,
};

use crate::charts::ChartError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {message}")]
    Data { context: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Chart(#[from] ChartError),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } | PipelineError::Chart(_) => 3,
            PipelineError::Numerical(_) => 4,
        }
    }

    pub(crate) fn data(context: impl Into<String>, message: impl ToString) -> Self {
        PipelineError::Data {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
