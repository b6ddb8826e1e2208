//! Iris segmentation, rubber-sheet texture transfer, iris codes, gaze
//! calibration, synthetic subject generation and an LSTM liveness
//! detector, plus the harness that runs the swap attack end to end.

pub mod gaze;
pub mod harness;
pub mod imaging;
pub mod iriscode;
pub mod liveness;
pub mod rubbersheet;
pub mod segmentation;
pub mod synth;
