use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::liveness::TrainConfig;
use crate::rubbersheet::SwapOptions;
use crate::segmentation::SegmentationParams;
use crate::synth::{AttackMode, FrameDropModel, SaccadeModel};

/// Every recognised key with its default and a one-line description.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("seed", "7", "dataset and experiment seed"),
    ("subjects", "20", "attacker subjects (ids 1..=subjects when victim is 0)"),
    ("victim", "0", "victim subject id"),
    ("splits", "10", "random train/test splits for liveness evaluation"),
    ("modes", "offline,online", "attack modes to run"),
    ("output_dir", "irisswap-out", "experiment output directory"),
    ("save_spoofed_frames", "sampled", "none | sampled | all"),
    ("camera_rate", "30", "eye camera frame rate, Hz"),
    ("calibration_h", "10", "calibration corner azimuth, degrees"),
    ("calibration_v", "8", "calibration corner elevation, degrees"),
    ("validation_h", "5", "validation target azimuth, degrees"),
    ("validation_v", "4", "validation target elevation, degrees"),
    ("offline_dwell", "4", "target duration in offline recordings, s"),
    ("online_dwell_min", "4", "shortest online target duration, s"),
    ("online_dwell_max", "6", "longest online target duration, s"),
    ("lead_in_max", "1", "longest camera lead-in before the first target, s"),
    ("drop_mean", "8.9", "mean online frame stride"),
    ("drop_std", "2.6", "standard deviation of the online frame stride"),
    ("drop_forced", "", "fixed online frame stride (empty draws one)"),
    ("drop_per_frame", "false", "redraw the stride for every gap"),
    ("saccade_duration_slope", "2.2", "saccade duration slope, ms per degree"),
    ("saccade_duration_intercept", "21", "saccade duration intercept, ms"),
    ("saccade_peak_max", "500", "asymptotic saccade peak velocity, deg/s"),
    ("saccade_peak_scale", "15", "peak velocity saturation constant, degrees"),
    ("latency_min", "0.15", "shortest reaction latency, s"),
    ("latency_max", "0.25", "longest reaction latency, s"),
    ("pupil_threshold", "60", "dark pixel threshold for pupil candidates"),
    ("min_pupil_area", "100", "smallest accepted pupil blob, pixels"),
    ("limbus_min_ratio", "1.8", "smallest limbus radius as a multiple of the pupil radius"),
    ("limbus_max_ratio", "3.5", "largest limbus radius as a multiple of the pupil radius"),
    ("limbus_min_contrast", "4", "weakest accepted limbus edge, intensity units"),
    ("radial_res", "64", "rubber-sheet radial samples"),
    ("angular_res", "512", "rubber-sheet angular samples"),
    ("match_intensity", "false", "rescale the victim texture to the attacker's iris statistics"),
    ("hd_threshold", "0.37", "authentication threshold on Hamming distance"),
    ("hd_max_shift", "8", "rotation search range, code positions"),
    ("hd_frames", "10", "frames compared per subject"),
    ("velocity_cap", "800", "velocity outlier cap, deg/s"),
    ("liveness_rate", "3", "velocity resampling rate, Hz"),
    ("window_step", "3", "stride between liveness windows, samples"),
    ("hidden", "16", "LSTM hidden units"),
    ("learning_rate", "0.01", "Adam learning rate"),
    ("batch_size", "32", "training minibatch size"),
    ("max_epochs", "300", "training epoch limit"),
    ("patience", "25", "early-stopping patience, epochs"),
    ("clip_norm", "5", "gradient norm clip"),
    ("static_noise", "0.02", "gaze noise of the static spoof, degrees"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SaveFrames {
    None,
    Sampled,
    All,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
    pub seed: u64,
    pub subjects: u32,
    pub victim: u32,
    pub splits: usize,
    pub modes: Vec<AttackMode>,
    pub output_dir: PathBuf,
    pub save_spoofed_frames: SaveFrames,
    pub camera_rate: f64,
    pub calibration: (f64, f64),
    pub validation: (f64, f64),
    pub offline_dwell: f64,
    pub online_dwell: (f64, f64),
    pub lead_in_max: f64,
    pub drops: FrameDropModel,
    pub saccade: SaccadeModel,
    pub segmentation: SegmentationParams,
    pub radial_res: usize,
    pub angular_res: usize,
    pub swap: SwapOptions,
    pub hd_threshold: f64,
    pub hd_max_shift: usize,
    pub hd_frames: usize,
    pub velocity_cap: f64,
    pub liveness_rate: f64,
    pub window_step: usize,
    pub train: TrainConfig,
    pub static_noise: f64,
}

fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("{origin}:{}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), HarnessError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| HarnessError::Config(format!("override {s:?} is not key=value")))
}

impl ExperimentConfig {
    pub fn defaults() -> Self {
        Self::from_pairs(&[]).expect("default table is valid")
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", p.display())))?;
            pairs.extend(parse_text(&text, &p.display().to_string())?);
        }
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        Self::from_pairs(&parse_text(text, "<config>")?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            if !values.contains_key(k) {
                return Err(HarnessError::Config(format!("unknown key {k:?}")));
            }
            values.insert(k.clone(), v.clone());
        }
        let get = |k: &str| values[k].as_str();
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::Config(format!("{k}: cannot parse {v:?}")))
        }
        fn flag(k: &str, v: &str) -> Result<bool, HarnessError> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(HarnessError::Config(format!("{k}: expected true or false, got {v:?}"))),
            }
        }
        let f = |k: &str| num::<f64>(k, get(k));
        let u = |k: &str| num::<usize>(k, get(k));

        let modes = get("modes")
            .split(',')
            .map(|m| m.parse::<AttackMode>().map_err(HarnessError::Config))
            .collect::<Result<Vec<_>, _>>()?;
        let save_spoofed_frames = match get("save_spoofed_frames") {
            "none" => SaveFrames::None,
            "sampled" => SaveFrames::Sampled,
            "all" => SaveFrames::All,
            v => return Err(HarnessError::Config(format!("save_spoofed_frames: unknown value {v:?}"))),
        };
        let forced = match get("drop_forced") {
            "" => None,
            v => Some(num::<f64>("drop_forced", v)?),
        };
        let cfg = Self {
            seed: num("seed", get("seed"))?,
            subjects: num("subjects", get("subjects"))?,
            victim: num("victim", get("victim"))?,
            splits: u("splits")?,
            modes,
            output_dir: PathBuf::from(get("output_dir")),
            save_spoofed_frames,
            camera_rate: f("camera_rate")?,
            calibration: (f("calibration_h")?, f("calibration_v")?),
            validation: (f("validation_h")?, f("validation_v")?),
            offline_dwell: f("offline_dwell")?,
            online_dwell: (f("online_dwell_min")?, f("online_dwell_max")?),
            lead_in_max: f("lead_in_max")?,
            drops: FrameDropModel {
                mean_factor: f("drop_mean")?,
                std_factor: f("drop_std")?,
                forced_factor: forced,
                per_frame: flag("drop_per_frame", get("drop_per_frame"))?,
            },
            saccade: SaccadeModel {
                duration_slope_ms: f("saccade_duration_slope")?,
                duration_intercept_ms: f("saccade_duration_intercept")?,
                peak_velocity_max: f("saccade_peak_max")?,
                peak_velocity_scale: f("saccade_peak_scale")?,
                latency_min_s: f("latency_min")?,
                latency_max_s: f("latency_max")?,
            },
            segmentation: SegmentationParams {
                pupil_threshold: num("pupil_threshold", get("pupil_threshold"))?,
                min_pupil_area: u("min_pupil_area")?,
                rmin_factor: f("limbus_min_ratio")?,
                rmax_factor: f("limbus_max_ratio")?,
                min_limbus_contrast: f("limbus_min_contrast")?,
                ..SegmentationParams::default()
            },
            radial_res: u("radial_res")?,
            angular_res: u("angular_res")?,
            swap: SwapOptions {
                match_intensity: flag("match_intensity", get("match_intensity"))?,
            },
            hd_threshold: f("hd_threshold")?,
            hd_max_shift: u("hd_max_shift")?,
            hd_frames: u("hd_frames")?,
            velocity_cap: f("velocity_cap")?,
            liveness_rate: f("liveness_rate")?,
            window_step: u("window_step")?,
            train: TrainConfig {
                hidden: u("hidden")?,
                learning_rate: f("learning_rate")?,
                batch_size: u("batch_size")?,
                max_epochs: u("max_epochs")?,
                patience: u("patience")?,
                clip_norm: f("clip_norm")?,
            },
            static_noise: f("static_noise")?,
            values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.splits == 0 {
            return bad("splits must be at least 1".into());
        }
        if self.subjects < 5 {
            return bad(format!("need at least 5 attacker subjects, got {}", self.subjects));
        }
        if self.modes.is_empty() {
            return bad("no attack modes selected".into());
        }
        if !(self.camera_rate >= 3.0) {
            return bad("camera_rate must be at least 3 Hz".into());
        }
        if !(self.online_dwell.0 > 0.5 && self.online_dwell.0 <= self.online_dwell.1) || !(self.offline_dwell > 0.5) {
            return bad("target dwell must exceed the 0.5 s onset trim".into());
        }
        if !(self.lead_in_max >= 0.0) {
            return bad("lead_in_max must be non-negative".into());
        }
        if self.hd_frames == 0 || self.radial_res < 2 || self.angular_res < 16 {
            return bad("hd_frames, radial_res and angular_res must be positive".into());
        }
        if self.window_step == 0 || self.train.hidden == 0 || self.train.batch_size == 0 {
            return bad("window_step, hidden and batch_size must be positive".into());
        }
        if !(self.liveness_rate > 0.0 && self.velocity_cap > 0.0) {
            return bad("liveness_rate and velocity_cap must be positive".into());
        }
        Ok(())
    }

    /// Attacker ids: the first `subjects` ids that are not the victim.
    pub fn attacker_ids(&self) -> Vec<u32> {
        (0..).filter(|&i| i != self.victim).take(self.subjects as usize).collect()
    }

    /// Every key that affects results, that is all but `output_dir`.
    pub fn identity_values(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "output_dir")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// One `key = value` line per identity key, in key order.
    pub fn canonical_text(&self) -> String {
        self.identity_values()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}
