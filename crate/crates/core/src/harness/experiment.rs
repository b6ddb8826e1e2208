use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attack::{run_attack, AttackRun};
use super::recording::{frame_file_name, schedule_for, subject_dir_name, subject_seed, FrameSource, SyntheticRecording};
use super::{ExperimentConfig, HarnessError, SaveFrames};
use crate::gaze::{GazeTrace, TargetSchedule};
use crate::imaging::{save_pgm, GrayImage};
use crate::iriscode::{encode, hamming_distance, GaborParams, IrisTemplate};
use crate::liveness::{
    attack_success_rate, compute_velocity, downsample_trace, majority_vote, make_windows, predict_windows, preprocess, train,
    windows_to_csv, Label, SplitPlan, UserPrediction, VelocityWindow, WindowPrediction, WINDOW_LEN,
};
use crate::rubbersheet::{unwrap, PolarTexture};
use crate::segmentation::segment;
use crate::synth::{generate_static_trace, mix_seed, AttackMode};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

/// Mean, sample standard deviation and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject: u32,
    pub frames: usize,
    pub kept_frames: usize,
    pub rate_factor: f64,
    pub skipped_frames: usize,
    /// Frame numbers compared against the victim, and their distances.
    pub hd_frames: Vec<usize>,
    pub hd: Vec<f64>,
    pub hd_mean: f64,
    pub authenticated: bool,
    pub unswapped_accuracy: f64,
    pub unswapped_precision: f64,
    pub swapped_accuracy: f64,
    pub swapped_precision: f64,
    pub real_windows: usize,
    pub spoof_windows: usize,
    pub spoofed_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: usize,
    pub plan: SplitPlan,
    pub best_epoch: usize,
    pub epochs: usize,
    pub test_windows: usize,
    pub asr_window: f64,
    pub asr_user: f64,
    /// Path of the per-window prediction dump, relative to the output dir.
    pub predictions: String,
}

/// Liveness against a motionless replay, the analogue of a printed eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBaseline {
    pub splits: Vec<SplitReport>,
    pub asr_window: Stat,
    pub asr_user: Stat,
    /// Fraction of held-out static windows flagged as spoof.
    pub detection_rate: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: AttackMode,
    pub subjects: Vec<SubjectReport>,
    pub hd: Stat,
    pub authenticated: usize,
    pub authenticated_fraction: f64,
    pub unswapped_accuracy: Stat,
    pub swapped_accuracy: Stat,
    pub unswapped_precision: Stat,
    pub swapped_precision: Stat,
    /// Subjects whose swapped accuracy error is at least the unswapped one.
    pub swapped_not_better: usize,
    pub rate_factor: Stat,
    pub splits: Vec<SplitReport>,
    pub asr_window: Stat,
    pub asr_user: Stat,
    pub static_baseline: StaticBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub victim: u32,
    pub attackers: Vec<u32>,
    pub modes: Vec<ModeReport>,
}

impl AttackReport {
    pub fn mode(&self, mode: AttackMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Shuffles the subjects and cuts them 60/40 into train pool and test,
/// then moves 30% of the pool to validation.
pub fn split_subjects(ids: &[u32], seed: u64) -> Result<SplitPlan, HarnessError> {
    let n = ids.len();
    if n < 5 {
        return Err(HarnessError::TooFewSubjects(n));
    }
    let mut order = ids.to_vec();
    order.sort_unstable();
    order.dedup();
    if order.len() != n {
        return Err(HarnessError::Config("duplicate subject ids".into()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = ((0.6 * n as f64).round() as usize).clamp(2, n - 1);
    let val = ((0.3 * pool as f64).round() as usize).clamp(1, pool - 1);
    let mut test = order.split_off(pool);
    let mut validation = order.split_off(pool - val);
    let mut train = order;
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        seed,
        train,
        validation,
        test,
    })
}

fn template_of(img: &GrayImage, cfg: &ExperimentConfig) -> Result<IrisTemplate, HarnessError> {
    let geom = segment(img, &cfg.segmentation)?;
    let tex = unwrap(img, &geom, cfg.radial_res, cfg.angular_res)?;
    Ok(encode(&tex, &GaborParams::default())?)
}

fn trace_windows(
    trace: &GazeTrace,
    cfg: &ExperimentConfig,
    label: Label,
    subject: u32,
) -> Result<Vec<VelocityWindow>, HarnessError> {
    let low = downsample_trace(trace, cfg.liveness_rate)?;
    let sig = preprocess(&compute_velocity(&low)?, cfg.velocity_cap, cfg.liveness_rate)?;
    Ok(make_windows(&sig, WINDOW_LEN, cfg.window_step, label, subject)?)
}

fn split_seed(cfg: &ExperimentConfig, split: usize) -> u64 {
    mix_seed(cfg.seed, 0x5350_4c54_0000 + split as u64)
}

/// The split plans shared by every mode and by the static baseline.
fn split_plans(cfg: &ExperimentConfig) -> Result<Vec<SplitPlan>, HarnessError> {
    let ids = cfg.attacker_ids();
    (0..cfg.splits)
        .map(|k| {
            let plan = split_subjects(&ids, split_seed(cfg, k))?;
            assert!(
                !plan.all_subjects().contains(&cfg.victim),
                "victim {} leaked into split {k}",
                cfg.victim
            );
            Ok(plan)
        })
        .collect()
}

fn user_predictions(preds: &[WindowPrediction]) -> Result<Vec<UserPrediction>, HarnessError> {
    let mut groups: BTreeMap<(u32, Label), Vec<Label>> = BTreeMap::new();
    for p in preds {
        groups.entry((p.subject, p.label)).or_default().push(p.predicted);
    }
    groups
        .into_iter()
        .map(|((subject, label), votes)| {
            Ok(UserPrediction {
                subject,
                label,
                predicted: majority_vote(&votes)?,
            })
        })
        .collect()
}

pub fn predictions_to_csv(preds: &[WindowPrediction]) -> String {
    let mut out = String::from("subject,label,window_index,probability,predicted\n");
    for p in preds {
        writeln!(
            out,
            "{},{},{},{:?},{}",
            p.subject,
            p.label.as_str(),
            p.index,
            p.probability,
            p.predicted.as_str()
        )
        .unwrap();
    }
    out
}

pub fn predictions_from_csv(text: &str) -> Result<Vec<WindowPrediction>, HarnessError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || HarnessError::Dataset(format!("prediction line {}: {line:?}", no + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(WindowPrediction {
            subject: f[0].parse().map_err(|_| bad())?,
            label: f[1].parse().map_err(|_| bad())?,
            index: f[2].parse().map_err(|_| bad())?,
            probability: f[3].parse().map_err(|_| bad())?,
            predicted: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Recomputes `(ASR_window, ASR_user)` from a prediction dump.
pub fn asr_from_predictions(preds: &[WindowPrediction]) -> Result<(f64, f64), HarnessError> {
    let users = user_predictions(preds)?;
    let asr = attack_success_rate(preds, &users)?;
    Ok((asr.window, asr.user))
}

/// Trains one model per split and scores the test subjects.
fn evaluate_splits(
    windows: &[VelocityWindow],
    plans: &[SplitPlan],
    cfg: &ExperimentConfig,
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<SplitReport>, HarnessError> {
    let pred_dir = out_dir.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    let mut reports = Vec::with_capacity(plans.len());
    for (k, plan) in plans.iter().enumerate() {
        let ctx = || format!("{prefix} split {k}");
        let trained = train(windows, plan, &cfg.train, mix_seed(plan.seed, 0x4c53_544d)).map_err(|e| HarnessError::from(e).context(ctx()))?;
        let test: Vec<VelocityWindow> = windows
            .iter()
            .filter(|w| plan.test.contains(&w.subject))
            .cloned()
            .collect();
        let preds = predict_windows(&trained.model, &test, 0.5).map_err(|e| HarnessError::from(e).context(ctx()))?;
        let (asr_window, asr_user) = asr_from_predictions(&preds).map_err(|e| e.context(ctx()))?;
        let name = format!("{prefix}_split{k:02}.csv");
        fs::write(pred_dir.join(&name), predictions_to_csv(&preds))?;
        log::info!("{prefix} split {k}: ASR window {asr_window:.3} user {asr_user:.3}");
        reports.push(SplitReport {
            split: k,
            plan: plan.clone(),
            best_epoch: trained.best_epoch,
            epochs: trained.history.len(),
            test_windows: test.len(),
            asr_window,
            asr_user,
            predictions: format!("predictions/{name}"),
        });
    }
    Ok(reports)
}

fn nearest_frame(source: &dyn FrameSource, t: f64) -> usize {
    let n = source.len();
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if source.timestamp(mid) < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    match lo {
        0 => 0,
        k if k == n => n - 1,
        k if t - source.timestamp(k - 1) <= source.timestamp(k) - t => k - 1,
        k => k,
    }
}

fn split_stats(splits: &[SplitReport]) -> (Stat, Stat) {
    let w: Vec<f64> = splits.iter().map(|s| s.asr_window).collect();
    let u: Vec<f64> = splits.iter().map(|s| s.asr_user).collect();
    (Stat::of(&w), Stat::of(&u))
}

/// Real windows against windows of a motionless fixation trace.
pub fn static_baseline(
    real: &[VelocityWindow],
    schedule: &TargetSchedule,
    plans: &[SplitPlan],
    cfg: &ExperimentConfig,
    out_dir: &Path,
    prefix: &str,
) -> Result<StaticBaseline, HarnessError> {
    let mut windows = real.to_vec();
    for id in cfg.attacker_ids() {
        let seed = mix_seed(subject_seed(cfg.seed, id), 0x5354_4154);
        let trace = generate_static_trace(schedule, seed, cfg.camera_rate, cfg.static_noise);
        windows.extend(trace_windows(&trace, cfg, Label::Spoof, id).map_err(|e| e.context(format!("{prefix} subject {id}")))?);
    }
    let splits = evaluate_splits(&windows, plans, cfg, out_dir, prefix)?;
    let (asr_window, asr_user) = split_stats(&splits);
    let det: Vec<f64> = splits.iter().map(|s| 1.0 - s.asr_window).collect();
    Ok(StaticBaseline {
        splits,
        asr_window,
        asr_user,
        detection_rate: Stat::of(&det),
    })
}

fn run_mode(
    cfg: &ExperimentConfig,
    mode: AttackMode,
    plans: &[SplitPlan],
    out_dir: &Path,
) -> Result<ModeReport, HarnessError> {
    let m = mode.as_str();
    fs::create_dir_all(out_dir)?;
    let schedule = schedule_for(cfg, mode)?;
    let victim = SyntheticRecording::with_schedule(cfg, mode, cfg.victim, schedule.clone());
    let victim_ctx = |e: HarnessError| e.context(format!("{m} victim {}", cfg.victim));
    let first = victim.frame(0).map_err(victim_ctx)?;
    let geom = segment(&first, &cfg.segmentation).map_err(|e| victim_ctx(e.into()))?;
    let victim_texture = unwrap(&first, &geom, cfg.radial_res, cfg.angular_res).map_err(|e| victim_ctx(e.into()))?;
    victim_texture.save(out_dir.join("victim_texture.bin"))?;
    let mut victim_templates: BTreeMap<usize, Option<IrisTemplate>> = BTreeMap::new();

    let mut subjects = Vec::new();
    let mut windows = Vec::new();
    let mut real_windows = Vec::new();
    for id in cfg.attacker_ids() {
        let ctx = |e: HarnessError| e.context(format!("{m} subject {id}"));
        let rec = SyntheticRecording::with_schedule(cfg, mode, id, schedule.clone());
        let sdir = out_dir.join(subject_dir_name(id));
        let frames_dir = sdir.join("frames");
        fs::create_dir_all(&sdir)?;
        if cfg.save_spoofed_frames != SaveFrames::None {
            fs::create_dir_all(&frames_dir)?;
        }
        let save_all = cfg.save_spoofed_frames == SaveFrames::All;
        let run: AttackRun = run_attack(&rec, &victim_texture, mode, cfg, &mut |i, img| {
            if save_all {
                save_pgm(img, frames_dir.join(frame_file_name(i)))?;
            }
            Ok(())
        })
        .map_err(ctx)?;

        let (mut hd_frames, mut hd) = (Vec::new(), Vec::new());
        for (i, img) in &run.sampled {
            if hd.len() == cfg.hd_frames {
                break;
            }
            // enrolled template from the victim frame nearest in time
            let j = nearest_frame(&victim, rec.timestamp(*i));
            let enrolled = match victim_templates.get(&j) {
                Some(t) => t.clone(),
                None => {
                    let t = victim.frame(j).and_then(|f| template_of(&f, cfg)).ok();
                    victim_templates.insert(j, t.clone());
                    t
                }
            };
            let (Some(enrolled), Ok(probe)) = (enrolled, template_of(img, cfg)) else {
                log::warn!("{m} subject {id}: frame {i} unusable for authentication");
                continue;
            };
            let Ok(d) = hamming_distance(&probe, &enrolled, cfg.hd_max_shift) else {
                continue;
            };
            if cfg.save_spoofed_frames == SaveFrames::Sampled {
                save_pgm(img, frames_dir.join(frame_file_name(*i)))?;
            }
            hd_frames.push(*i);
            hd.push(d);
        }
        if hd.is_empty() {
            return Err(ctx(HarnessError::Dataset("no spoofed frame could be encoded".into())));
        }
        let hd_mean = hd.iter().sum::<f64>() / hd.len() as f64;

        run.unswapped.trace.save(sdir.join("gaze_unswapped.csv"))?;
        run.swapped.trace.save(sdir.join("gaze_swapped.csv"))?;
        let real = trace_windows(&run.unswapped.trace, cfg, Label::Real, id).map_err(ctx)?;
        let spoof = trace_windows(&run.swapped.trace, cfg, Label::Spoof, id).map_err(ctx)?;
        log::info!(
            "{m} subject {id}: HD {hd_mean:.3}, accuracy {:.3} -> {:.3}",
            run.unswapped.accuracy,
            run.swapped.accuracy
        );
        subjects.push(SubjectReport {
            subject: id,
            frames: run.frames,
            kept_frames: run.kept.len(),
            rate_factor: run.rate_factor,
            skipped_frames: run.skipped_frames(),
            hd_frames,
            hd,
            hd_mean,
            authenticated: hd_mean < cfg.hd_threshold,
            unswapped_accuracy: run.unswapped.accuracy,
            unswapped_precision: run.unswapped.precision,
            swapped_accuracy: run.swapped.accuracy,
            swapped_precision: run.swapped.precision,
            real_windows: real.len(),
            spoof_windows: spoof.len(),
            spoofed_digest: run.spoofed_digest,
        });
        real_windows.extend(real.iter().cloned());
        windows.extend(real);
        windows.extend(spoof);
    }
    fs::write(out_dir.join("windows.csv"), windows_to_csv(&windows))?;

    let splits = evaluate_splits(&windows, plans, cfg, out_dir, m)?;
    let (asr_window, asr_user) = split_stats(&splits);
    let static_baseline = static_baseline(&real_windows, &schedule, plans, cfg, out_dir, &format!("{m}_static"))?;

    let col = |f: fn(&SubjectReport) -> f64| Stat::of(&subjects.iter().map(f).collect::<Vec<_>>());
    let authenticated = subjects.iter().filter(|s| s.authenticated).count();
    Ok(ModeReport {
        mode,
        hd: col(|s| s.hd_mean),
        authenticated,
        authenticated_fraction: authenticated as f64 / subjects.len() as f64,
        unswapped_accuracy: col(|s| s.unswapped_accuracy),
        swapped_accuracy: col(|s| s.swapped_accuracy),
        unswapped_precision: col(|s| s.unswapped_precision),
        swapped_precision: col(|s| s.swapped_precision),
        swapped_not_better: subjects
            .iter()
            .filter(|s| s.swapped_accuracy >= s.unswapped_accuracy)
            .count(),
        rate_factor: col(|s| s.rate_factor),
        subjects,
        splits,
        asr_window,
        asr_user,
        static_baseline,
    })
}

/// Runs every configured mode and writes the report and raw dumps under
/// the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AttackReport, HarnessError> {
    let plans = split_plans(cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.canonical_text())?;
    let mut modes = Vec::new();
    for &mode in &cfg.modes {
        log::info!("running {} attack", mode.as_str());
        modes.push(run_mode(cfg, mode, &plans, &out.join(mode.as_str()))?);
    }
    let report = AttackReport {
        version: REPORT_VERSION,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.identity_values(),
        victim: cfg.victim,
        attackers: cfg.attacker_ids(),
        modes,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Loads a report written by [`run_experiment`].
pub fn load_report(path: &Path) -> Result<AttackReport, HarnessError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Loads a victim texture written by an experiment or by `segment`.
pub fn load_texture(path: &Path) -> Result<PolarTexture, HarnessError> {
    Ok(PolarTexture::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_sizes() {
        let ids: Vec<u32> = (1..=18).collect();
        let p = split_subjects(&ids, 3).unwrap();
        assert_eq!(p.train.len() + p.validation.len(), 11);
        assert_eq!(p.test.len(), 7);
        assert_eq!(p.validation.len(), 3);
        let ids: Vec<u32> = (1..=5).collect();
        let p = split_subjects(&ids, 3).unwrap();
        assert_eq!((p.train.len(), p.validation.len(), p.test.len()), (2, 1, 2));
        assert!(matches!(split_subjects(&[1, 2, 3, 4], 0), Err(HarnessError::TooFewSubjects(4))));
    }

    #[test]
    fn split_is_seeded() {
        let ids: Vec<u32> = (1..=20).collect();
        assert_eq!(split_subjects(&ids, 9).unwrap(), split_subjects(&ids, 9).unwrap());
        let differ = (0..10).any(|s| split_subjects(&ids, s).unwrap() != split_subjects(&ids, 9).unwrap());
        assert!(differ);
    }

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.n, 4);
        assert_eq!(Stat::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn prediction_dump_round_trips() {
        let preds = vec![
            WindowPrediction {
                subject: 3,
                label: Label::Spoof,
                index: 0,
                probability: 0.1 + 0.2,
                predicted: Label::Real,
            },
            WindowPrediction {
                subject: 3,
                label: Label::Spoof,
                index: 1,
                probability: 0.75,
                predicted: Label::Spoof,
            },
            WindowPrediction {
                subject: 4,
                label: Label::Real,
                index: 0,
                probability: 0.2,
                predicted: Label::Real,
            },
        ];
        let back = predictions_from_csv(&predictions_to_csv(&preds)).unwrap();
        assert_eq!(back, preds);
        // one of two spoofed windows fooled; the 1-1 tie votes spoof
        assert_eq!(asr_from_predictions(&back).unwrap(), (0.5, 0.0));
    }

    proptest! {
        #[test]
        fn split_partitions_are_disjoint(n in 5usize..40, seed in any::<u64>()) {
            let ids: Vec<u32> = (100..100 + n as u32).collect();
            let p = split_subjects(&ids, seed).unwrap();
            prop_assert!(p.is_disjoint());
            prop_assert_eq!(p.all_subjects().len(), n);
            prop_assert!(p.train.len() >= 1 && !p.validation.is_empty() && !p.test.is_empty());
            prop_assert_eq!(p.test.len(), n - ((0.6 * n as f64).round() as usize).clamp(2, n - 1));
        }
    }
}
