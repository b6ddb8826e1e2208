//! Configuration, dataset generation, attack runs and the ten-split
//! liveness experiment.

mod attack;
mod config;
mod experiment;
mod recording;

pub use attack::{
    run_attack, run_attack_dir, run_offline_attack, run_online_attack, AttackRun, ConditionResult, SkippedFrame,
};
pub use config::{parse_override, ExperimentConfig, SaveFrames, DEFAULTS};
pub use experiment::{
    asr_from_predictions, load_report, load_texture, predictions_from_csv, predictions_to_csv, run_experiment,
    split_subjects, static_baseline, AttackReport, ModeReport, SplitReport, Stat, StaticBaseline, SubjectReport,
    REPORT_FILE, REPORT_VERSION,
};
pub use recording::{
    frame_file_name, schedule_for, subject_dir_name, subject_seed, write_dataset, write_subject, DatasetManifest,
    DirRecording, FrameSource, SyntheticRecording,
};

use thiserror::Error;

use crate::gaze::GazeError;
use crate::imaging::ImagingError;
use crate::iriscode::IrisCodeError;
use crate::liveness::LivenessError;
use crate::rubbersheet::RubberSheetError;
use crate::segmentation::SegmentationError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("need at least 5 subjects, got {0}")]
    TooFewSubjects(usize),
    /// Failure inside the experiment, tagged with where it happened.
    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    RubberSheet(#[from] RubberSheetError),
    #[error(transparent)]
    IrisCode(#[from] IrisCodeError),
    #[error(transparent)]
    Gaze(#[from] GazeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Liveness(#[from] LivenessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn context(self, context: impl Into<String>) -> Self {
        HarnessError::Experiment {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "ConfigError",
            HarnessError::Dataset(_) => "DatasetError",
            HarnessError::TooFewSubjects(_) => "TooFewSubjects",
            HarnessError::Experiment { source, .. } => source.kind(),
            HarnessError::Imaging(_) => "ImagingError",
            HarnessError::Segmentation(_) => "SegmentationError",
            HarnessError::RubberSheet(_) => "RubberSheetError",
            HarnessError::IrisCode(_) => "IrisCodeError",
            HarnessError::Gaze(_) => "GazeError",
            HarnessError::Synth(_) => "SynthError",
            HarnessError::Liveness(_) => "LivenessError",
            HarnessError::Io(_) => "IoError",
            HarnessError::Json(_) => "JsonError",
        }
    }
}
