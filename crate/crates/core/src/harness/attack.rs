use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::recording::{frame_file_name, DirRecording, FrameSource};
use super::{ExperimentConfig, HarnessError};
use crate::gaze::{accuracy, calibrate_and_estimate, precision, GazeTrace, PupilObservation};
use crate::imaging::{save_pgm, GrayImage};
use crate::rubbersheet::{swap_iris, PolarTexture};
use crate::segmentation::{detect_pupil, segment};
use crate::synth::{mix_seed, simulate_frame_drops, AttackMode};

/// Gaze quality of one condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionResult {
    pub samples: usize,
    pub calibration_rms: f64,
    pub accuracy: f64,
    pub precision: f64,
    #[serde(skip)]
    pub trace: GazeTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame: usize,
    pub condition: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRun {
    pub subject: u32,
    pub mode: AttackMode,
    pub frames: usize,
    pub kept: Vec<usize>,
    /// Camera rate divided by the realised spoofed rate.
    pub rate_factor: f64,
    pub skipped: Vec<SkippedFrame>,
    pub unswapped: ConditionResult,
    pub swapped: ConditionResult,
    /// SHA-256 over every spoofed frame in index order.
    pub spoofed_digest: String,
    /// Spoofed frames retained for the authentication protocol, in
    /// random preference order; about three times the frames needed.
    #[serde(skip)]
    pub sampled: Vec<(usize, GrayImage)>,
}

impl AttackRun {
    pub fn skipped_frames(&self) -> usize {
        let mut idx: Vec<usize> = self.skipped.iter().map(|s| s.frame).collect();
        idx.sort_unstable();
        idx.dedup();
        idx.len()
    }
}

fn condition(track: &[PupilObservation], source: &dyn FrameSource) -> Result<ConditionResult, HarnessError> {
    let (model, trace) = calibrate_and_estimate(track, source.schedule())?;
    Ok(ConditionResult {
        samples: trace.len(),
        calibration_rms: model.residual_rms,
        accuracy: accuracy(&trace, source.schedule())?,
        precision: precision(&trace, source.schedule())?,
        trace,
    })
}

/// Runs the swap over a recording.
///
/// Every frame feeds the unswapped condition. Frames kept by the drop
/// model are segmented, overwritten with `victim` and passed to `sink`;
/// their re-detected pupils feed the swapped condition.
pub fn run_attack(
    source: &dyn FrameSource,
    victim: &PolarTexture,
    mode: AttackMode,
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(usize, &GrayImage) -> Result<(), HarnessError>,
) -> Result<AttackRun, HarnessError> {
    let n = source.len();
    let run_seed = mix_seed(cfg.seed, 0x4154_4b00 ^ source.subject() as u64);
    let kept = simulate_frame_drops(n, cfg.camera_rate, mode, run_seed, &cfg.drops);
    let mut is_kept = vec![false; n];
    for &k in &kept {
        is_kept[k] = true;
    }
    // candidate frames for the authentication protocol, in preference order
    let mut order = kept.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(run_seed, 0x4844)));
    let mut rank = vec![usize::MAX; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let retain = 3 * cfg.hd_frames;

    let mut skipped = Vec::new();
    let mut skip = |frame: usize, condition: &str, e: &dyn std::fmt::Display| {
        log::warn!("subject {} frame {frame} ({condition}): {e}", source.subject());
        skipped.push(SkippedFrame {
            frame,
            condition: condition.to_string(),
            reason: e.to_string(),
        });
    };
    let mut unswapped = Vec::with_capacity(n);
    let mut swapped = Vec::with_capacity(kept.len());
    let mut digest = Sha256::new();
    let mut sampled: Vec<(usize, usize, GrayImage)> = Vec::new();

    for i in 0..n {
        let t = source.timestamp(i);
        let img = match source.frame(i) {
            Ok(img) => img,
            Err(e) => {
                skip(i, "input", &e);
                continue;
            }
        };
        match detect_pupil(&img, &cfg.segmentation) {
            Ok(c) => unswapped.push(PupilObservation { t, center: c.center }),
            Err(e) => skip(i, "unswapped", &e),
        }
        if !is_kept[i] {
            continue;
        }
        let geom = match segment(&img, &cfg.segmentation) {
            Ok(g) => g,
            Err(e) => {
                skip(i, "swapped", &e);
                continue;
            }
        };
        let out = match swap_iris(&img, &geom, victim, &cfg.swap) {
            Ok(o) => o.image,
            Err(e) => {
                skip(i, "swapped", &e);
                continue;
            }
        };
        digest.update((i as u64).to_le_bytes());
        digest.update(out.pixels());
        sink(i, &out)?;
        match detect_pupil(&out, &cfg.segmentation) {
            Ok(c) => swapped.push(PupilObservation { t, center: c.center }),
            Err(e) => skip(i, "swapped", &e),
        }
        if rank[i] < retain {
            sampled.push((rank[i], i, out));
        }
    }
    sampled.sort_by_key(|s| s.0);
    let sampled: Vec<(usize, GrayImage)> = sampled.into_iter().map(|(_, i, img)| (i, img)).collect();

    let unswapped = condition(&unswapped, source)?;
    let swapped_result = condition(&swapped, source)?;
    let span = match (kept.first(), kept.last()) {
        (Some(&a), Some(&b)) => source.timestamp(b) - source.timestamp(a),
        _ => 0.0,
    };
    let rate_factor = if kept.len() == n {
        1.0
    } else if kept.len() > 1 && span > 0.0 {
        cfg.camera_rate / ((kept.len() - 1) as f64 / span)
    } else {
        1.0
    };
    Ok(AttackRun {
        subject: source.subject(),
        mode,
        frames: n,
        kept,
        rate_factor,
        skipped,
        unswapped,
        swapped: swapped_result,
        spoofed_digest: hex::encode(digest.finalize()),
        sampled,
    })
}

/// Runs the attack over a recording directory, writing spoofed frames,
/// both gaze traces and a JSON summary into `out_dir`.
pub fn run_attack_dir(
    recording: &Path,
    victim_texture: &Path,
    mode: AttackMode,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AttackRun, HarnessError> {
    let source = DirRecording::open(recording)?;
    let victim = PolarTexture::load(victim_texture)?;
    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let run = run_attack(&source, &victim, mode, cfg, &mut |i, img| {
        save_pgm(img, frames_dir.join(frame_file_name(i)))?;
        Ok(())
    })?;
    run.unswapped.trace.save(out_dir.join("gaze_unswapped.csv"))?;
    run.swapped.trace.save(out_dir.join("gaze_swapped.csv"))?;
    std::fs::write(out_dir.join("attack.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    Ok(run)
}

pub fn run_offline_attack(
    recording: &Path,
    victim_texture: &Path,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AttackRun, HarnessError> {
    run_attack_dir(recording, victim_texture, AttackMode::Offline, cfg, out_dir)
}

pub fn run_online_attack(
    recording: &Path,
    victim_texture: &Path,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AttackRun, HarnessError> {
    run_attack_dir(recording, victim_texture, AttackMode::Online, cfg, out_dir)
}
