//! Velocity-based liveness detection: signal preprocessing, windowing, an
//! LSTM window classifier and attack-success metrics.

mod ddfloat;
mod lstm;
mod metrics;
mod signal;
mod train;

pub use lstm::{gradient_check, gradient_check_with, LstmModel, INPUT_SIZE};
pub use metrics::{
    attack_success_rate, majority_vote, predict_user, predict_windows, AttackSuccess, UserPrediction, WindowPrediction,
};
pub use signal::{
    compute_velocity, downsample_trace, make_windows, preprocess, windows_from_csv, windows_to_csv, VelocitySignal,
    VelocityWindow, WINDOW_LEN, WINDOW_STEP,
};
pub use train::{train, EpochStats, SplitPlan, TrainConfig, TrainOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LivenessError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("timestamps not strictly increasing at sample {index}")]
    NonMonotonicTime { index: usize },
    #[error("every sample of the {channel} channel exceeds the velocity cap")]
    AllSamplesCapped { channel: &'static str },
    #[error("signal of {got} samples is shorter than one window of {len}")]
    SignalTooShort { got: usize, len: usize },
    #[error("non-finite value in window input")]
    NonFiniteInput,
    #[error("{partition} partition holds a single class")]
    SingleClassPartition { partition: &'static str },
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no windows to classify")]
    NoWindows,
    #[error("no spoofed windows or users to score")]
    NoSpoofedSamples,
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("malformed window csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Spoof,
}

impl Label {
    /// Training target: spoof is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Spoof => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Spoof => "spoof",
        }
    }

    pub fn from_probability(p: f64, threshold: f64) -> Self {
        if p >= threshold {
            Label::Spoof
        } else {
            Label::Real
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Label::Real),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
