use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::gaze::{GazeSample, GazeTrace, TargetSchedule};
use crate::imaging::{load_pgm, save_pgm, GrayImage};
use crate::rubbersheet::PolarTexture;
use crate::synth::{
    generate_scanpath_from, mix_seed, render_frame, texture_for_profile, AttackMode, RenderedFrame, Scanpath,
    SubjectProfile,
};

/// A sequence of eye frames aligned to a challenge schedule.
pub trait FrameSource {
    fn subject(&self) -> u32;
    fn len(&self) -> usize;
    fn timestamp(&self, index: usize) -> f64;
    fn frame(&self, index: usize) -> Result<GrayImage, HarnessError>;
    fn schedule(&self) -> &TargetSchedule;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The challenge schedule shared by every subject of one dataset.
pub fn schedule_for(cfg: &ExperimentConfig, mode: AttackMode) -> Result<TargetSchedule, HarnessError> {
    let dwells: Vec<f64> = match mode {
        AttackMode::Offline => vec![cfg.offline_dwell; 9],
        AttackMode::Online => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5343_4845));
            let (lo, hi) = cfg.online_dwell;
            (0..9)
                .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect()
        }
    };
    Ok(TargetSchedule::challenge(cfg.calibration, cfg.validation, &dwells)?)
}

pub fn subject_seed(dataset_seed: u64, subject: u32) -> u64 {
    mix_seed(dataset_seed, 0x5355_424a_0000_0000 | subject as u64)
}

fn mode_salt(mode: AttackMode) -> u64 {
    match mode {
        AttackMode::Offline => 0x4f46_464c,
        AttackMode::Online => 0x4f4e_4c4e,
    }
}

/// Frames rendered on demand from a subject's ground-truth scanpath.
#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub id: u32,
    pub profile: SubjectProfile,
    pub texture: PolarTexture,
    pub scanpath: Scanpath,
    schedule: TargetSchedule,
    noise_seed: u64,
}

impl SyntheticRecording {
    pub fn generate(cfg: &ExperimentConfig, mode: AttackMode, id: u32) -> Result<Self, HarnessError> {
        let schedule = schedule_for(cfg, mode)?;
        Ok(Self::with_schedule(cfg, mode, id, schedule))
    }

    pub fn with_schedule(cfg: &ExperimentConfig, mode: AttackMode, id: u32, schedule: TargetSchedule) -> Self {
        let seed = subject_seed(cfg.seed, id);
        let profile = SubjectProfile::from_seed(seed);
        let texture = texture_for_profile(&profile);
        let run_seed = mix_seed(seed, mode_salt(mode));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(run_seed, 0x4c45_4144));
        let lead = cfg.lead_in_max * rng.random::<f64>();
        let t0 = schedule.start() - lead;
        let scanpath = generate_scanpath_from(&schedule, &profile, run_seed, cfg.camera_rate, &cfg.saccade, t0);
        Self {
            id,
            profile,
            texture,
            scanpath,
            schedule,
            noise_seed: mix_seed(run_seed, 0x4e4f_4953),
        }
    }

    pub fn render(&self, index: usize) -> Result<RenderedFrame, HarnessError> {
        let s = &self.scanpath.samples[index];
        Ok(render_frame(
            s.h,
            s.v,
            &self.profile,
            &self.texture,
            mix_seed(self.noise_seed, index as u64),
        )?)
    }
}

impl FrameSource for SyntheticRecording {
    fn subject(&self) -> u32 {
        self.id
    }

    fn len(&self) -> usize {
        self.scanpath.samples.len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.scanpath.samples[index].t
    }

    fn frame(&self, index: usize) -> Result<GrayImage, HarnessError> {
        Ok(self.render(index)?.image)
    }

    fn schedule(&self) -> &TargetSchedule {
        &self.schedule
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

pub fn subject_dir_name(id: u32) -> String {
    format!("subject_{id}")
}

/// A recording stored in the dataset directory layout; frames are read
/// lazily.
#[derive(Debug, Clone)]
pub struct DirRecording {
    id: u32,
    dir: PathBuf,
    timestamps: Vec<f64>,
    schedule: TargetSchedule,
}

impl DirRecording {
    /// Opens `subject_<id>` directories; the schedule is read from the
    /// dataset root (the parent) unless one sits next to the frames.
    pub fn open(subject_dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = subject_dir.as_ref().to_path_buf();
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let id = name
            .strip_prefix("subject_")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| HarnessError::Dataset(format!("{} is not a subject_<id> directory", dir.display())))?;
        let local = dir.join("schedule.csv");
        let sched_path = if local.exists() {
            local
        } else {
            dir.parent().map(|p| p.join("schedule.csv")).unwrap_or(local)
        };
        let schedule = TargetSchedule::load(&sched_path)
            .map_err(|e| HarnessError::Dataset(format!("{}: {e}", sched_path.display())))?;
        let ts_path = dir.join("timestamps.csv");
        let text = fs::read_to_string(&ts_path)
            .map_err(|e| HarnessError::Dataset(format!("{}: {e}", ts_path.display())))?;
        let mut timestamps = Vec::new();
        for (no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || HarnessError::Dataset(format!("{}:{}: expected frame,t", ts_path.display(), no + 1));
            let (f, t) = line.split_once(',').ok_or_else(bad)?;
            let f: usize = f.trim().parse().map_err(|_| bad())?;
            if f != timestamps.len() {
                return Err(bad());
            }
            timestamps.push(t.trim().parse::<f64>().map_err(|_| bad())?);
        }
        Ok(Self {
            id,
            dir,
            timestamps,
            schedule,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl FrameSource for DirRecording {
    fn subject(&self) -> u32 {
        self.id
    }

    fn len(&self) -> usize {
        self.timestamps.len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.timestamps[index]
    }

    fn frame(&self, index: usize) -> Result<GrayImage, HarnessError> {
        Ok(load_pgm(self.dir.join("frames").join(frame_file_name(index)))?)
    }

    fn schedule(&self) -> &TargetSchedule {
        &self.schedule
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_hash: String,
    pub mode: AttackMode,
    pub camera_rate: f64,
    pub victim: u32,
    pub subjects: Vec<u32>,
    pub frames_per_subject: usize,
}

/// Renders and writes one subject in the dataset layout.
pub fn write_subject(dir: &Path, rec: &SyntheticRecording) -> Result<(), HarnessError> {
    let sdir = dir.join(subject_dir_name(rec.id));
    fs::create_dir_all(sdir.join("frames"))?;
    let mut ts = String::from("frame,t\n");
    let mut geo = String::from("frame,pupil_x,pupil_y,pupil_r,limbus_x,limbus_y,limbus_r\n");
    for i in 0..rec.len() {
        let f = rec.render(i)?;
        save_pgm(&f.image, sdir.join("frames").join(frame_file_name(i)))?;
        writeln!(ts, "{i},{:?}", rec.timestamp(i)).unwrap();
        let (p, l) = (&f.geometry.pupil, &f.geometry.limbus);
        writeln!(
            geo,
            "{i},{:?},{:?},{:?},{:?},{:?},{:?}",
            p.center.x, p.center.y, p.radius, l.center.x, l.center.y, l.radius
        )
        .unwrap();
    }
    fs::write(sdir.join("timestamps.csv"), ts)?;
    fs::write(sdir.join("truth_geometry.csv"), geo)?;
    let truth = GazeTrace::new(
        rec.scanpath
            .samples
            .iter()
            .map(|s| GazeSample {
                t: s.t,
                h: s.h,
                v: s.v,
                confidence: 1.0,
            })
            .collect(),
    )?;
    truth.save(sdir.join("truth_gaze.csv"))?;
    Ok(())
}

/// Writes the victim and every attacker of one mode under `dir`.
pub fn write_dataset(dir: &Path, cfg: &ExperimentConfig, mode: AttackMode) -> Result<DatasetManifest, HarnessError> {
    fs::create_dir_all(dir)?;
    let schedule = schedule_for(cfg, mode)?;
    schedule.save(dir.join("schedule.csv"))?;
    let mut ids = vec![cfg.victim];
    ids.extend(cfg.attacker_ids());
    ids.sort_unstable();
    let mut frames = 0;
    for &id in &ids {
        let rec = SyntheticRecording::with_schedule(cfg, mode, id, schedule.clone());
        frames = rec.len();
        write_subject(dir, &rec)?;
        log::info!("wrote subject {id} ({frames} frames)");
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        mode,
        camera_rate: cfg.camera_rate,
        victim: cfg.victim,
        subjects: ids,
        frames_per_subject: frames,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::from_text("subjects = 5\noffline_dwell = 0.6\nonline_dwell_min = 0.6\nonline_dwell_max = 0.8").unwrap()
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = small_cfg();
        let a = SyntheticRecording::generate(&cfg, AttackMode::Offline, 2).unwrap();
        let b = SyntheticRecording::generate(&cfg, AttackMode::Offline, 2).unwrap();
        assert_eq!(a.frame(5).unwrap(), b.frame(5).unwrap());
        let lead = a.schedule().start() - a.timestamp(0);
        assert!((0.0..1.0).contains(&lead));
        assert_eq!(a.len(), ((a.schedule().span() + lead) * 30.0).round() as usize);
        // same person across modes
        let c = SyntheticRecording::generate(&cfg, AttackMode::Online, 2).unwrap();
        assert_eq!(a.texture, c.texture);
    }

    #[test]
    fn dataset_round_trip() {
        let cfg = small_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let m = write_dataset(tmp.path(), &cfg, AttackMode::Offline).unwrap();
        assert_eq!(m.subjects, vec![0, 1, 2, 3, 4, 5]);
        let rec = DirRecording::open(tmp.path().join("subject_3")).unwrap();
        let syn = SyntheticRecording::generate(&cfg, AttackMode::Offline, 3).unwrap();
        assert_eq!(rec.len(), syn.len());
        assert_eq!(rec.timestamp(7), syn.timestamp(7));
        assert_eq!(rec.frame(7).unwrap(), syn.frame(7).unwrap());
        assert_eq!(rec.schedule(), syn.schedule());
        let truth = GazeTrace::load(tmp.path().join("subject_3/truth_gaze.csv")).unwrap();
        assert_eq!(truth.len(), syn.len());
    }
}
