//! Pupil-centre gaze estimation with a second-order polynomial calibration,
//! the challenge-task target schedule, and the accuracy / precision
//! data-quality metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::PixelPoint;

/// Fixation latency trimmed from the start of every target window.
pub const ONSET_TRIM_S: f64 = 0.5;
/// Calibration targets at the start of the challenge task.
pub const CHALLENGE_CALIBRATION_TARGETS: usize = 5;
/// Largest accepted condition number of the normal matrix.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Error)]
pub enum GazeError {
    #[error("calibration design is degenerate: {0}")]
    DegenerateDesign(String),
    #[error("calibration needs at least 6 points, got {0}")]
    TooFewPoints(usize),
    #[error("no usable samples inside the validation windows")]
    NoValidationSamples,
    #[error("timestamps must be strictly increasing (index {index})")]
    NonMonotonicTime { index: usize },
    #[error("invalid target schedule: {0}")]
    InvalidSchedule(String),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    /// Horizontal angle in degrees.
    pub h: f64,
    /// Vertical angle in degrees.
    pub v: f64,
    pub confidence: f64,
}

impl GazeSample {
    pub fn angular_distance(&self, h: f64, v: f64) -> f64 {
        (self.h - h).hypot(self.v - v)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GazeTrace {
    samples: Vec<GazeSample>,
}

impl GazeTrace {
    pub fn new(samples: Vec<GazeSample>) -> Result<Self, GazeError> {
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(GazeError::NonMonotonicTime { index: i + 1 });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose timestamp appears in `times` (exact match).
    pub fn timestamps(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// CSV with header `t,h_deg,v_deg,confidence`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,h_deg,v_deg,confidence\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", s.t, s.h, s.v, s.confidence);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GazeError> {
        let rows = parse_csv(text, &["t", "h_deg", "v_deg", "confidence"])?;
        let samples = rows
            .into_iter()
            .map(|r| GazeSample {
                t: r[0],
                h: r[1],
                v: r[2],
                confidence: r[3],
            })
            .collect();
        Self::new(samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GazeError> {
        write_file(path.as_ref(), &self.to_csv())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GazeError> {
        Self::from_csv(&read_file(path.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub h: f64,
    pub v: f64,
    pub onset: f64,
    pub offset: f64,
}

/// Ordered challenge targets: calibration first, then validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSchedule {
    targets: Vec<Target>,
    calibration_count: usize,
}

impl TargetSchedule {
    pub fn new(targets: Vec<Target>, calibration_count: usize) -> Result<Self, GazeError> {
        if calibration_count > targets.len() {
            return Err(GazeError::InvalidSchedule(format!(
                "{calibration_count} calibration targets but only {} targets",
                targets.len()
            )));
        }
        for (i, t) in targets.iter().enumerate() {
            if !(t.offset > t.onset) || !t.h.is_finite() || !t.v.is_finite() {
                return Err(GazeError::InvalidSchedule(format!("target {i} has an empty interval")));
            }
            if i > 0 && t.onset < targets[i - 1].offset {
                return Err(GazeError::InvalidSchedule(format!(
                    "target {i} overlaps or precedes target {}",
                    i - 1
                )));
            }
        }
        Ok(Self {
            targets,
            calibration_count,
        })
    }

    /// Challenge task: five calibration targets (centre and corners at
    /// `cal`) then four validation targets (at `val`), back to back.
    pub fn challenge(cal: (f64, f64), val: (f64, f64), dwells: &[f64]) -> Result<Self, GazeError> {
        let (ch, cv) = cal;
        let (vh, vv) = val;
        let positions = [
            (0.0, 0.0),
            (-ch, cv),
            (ch, cv),
            (ch, -cv),
            (-ch, -cv),
            (-vh, vv),
            (vh, vv),
            (vh, -vv),
            (-vh, -vv),
        ];
        if dwells.len() != positions.len() {
            return Err(GazeError::InvalidSchedule(format!(
                "expected {} dwell times, got {}",
                positions.len(),
                dwells.len()
            )));
        }
        let mut t = 0.0;
        let targets = positions
            .iter()
            .zip(dwells)
            .map(|(&(h, v), &d)| {
                let target = Target {
                    h,
                    v,
                    onset: t,
                    offset: t + d,
                };
                t += d;
                target
            })
            .collect();
        Self::new(targets, CHALLENGE_CALIBRATION_TARGETS)
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn calibration_count(&self) -> usize {
        self.calibration_count
    }

    pub fn calibration(&self) -> &[Target] {
        &self.targets[..self.calibration_count]
    }

    pub fn validation(&self) -> &[Target] {
        &self.targets[self.calibration_count..]
    }

    pub fn start(&self) -> f64 {
        self.targets.first().map_or(0.0, |t| t.onset)
    }

    pub fn end(&self) -> f64 {
        self.targets.last().map_or(0.0, |t| t.offset)
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    /// Target whose trimmed metric window contains `t`.
    pub fn trimmed_target_at(targets: &[Target], t: f64) -> Option<&Target> {
        targets
            .iter()
            .find(|tg| t >= tg.onset + ONSET_TRIM_S && t < tg.offset)
    }

    /// CSV with header `h_deg,v_deg,onset_s,offset_s`; rows in order, the
    /// first five being calibration targets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h_deg,v_deg,onset_s,offset_s\n");
        for t in &self.targets {
            let _ = writeln!(out, "{},{},{},{}", t.h, t.v, t.onset, t.offset);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GazeError> {
        let rows = parse_csv(text, &["h_deg", "v_deg", "onset_s", "offset_s"])?;
        let targets: Vec<Target> = rows
            .into_iter()
            .map(|r| Target {
                h: r[0],
                v: r[1],
                onset: r[2],
                offset: r[3],
            })
            .collect();
        let cal = CHALLENGE_CALIBRATION_TARGETS.min(targets.len());
        Self::new(targets, cal)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GazeError> {
        write_file(path.as_ref(), &self.to_csv())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GazeError> {
        Self::from_csv(&read_file(path.as_ref())?)
    }
}

/// Two quadratic polynomials in normalised pupil coordinates
/// `u = (x - cx) / s`, `w = (y - cy) / s`, with terms
/// `[1, u, w, u², uw, w²]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub origin: PixelPoint,
    pub scale: f64,
    pub coef_h: [f64; 6],
    pub coef_v: [f64; 6],
    /// RMS angular residual on the fitting points, degrees.
    pub residual_rms: f64,
}

impl CalibrationModel {
    pub fn zero() -> Self {
        Self {
            origin: PixelPoint::default(),
            scale: 1.0,
            coef_h: [0.0; 6],
            coef_v: [0.0; 6],
            residual_rms: 0.0,
        }
    }

    #[inline]
    fn basis(&self, p: PixelPoint) -> [f64; 6] {
        let u = (p.x - self.origin.x) / self.scale;
        let w = (p.y - self.origin.y) / self.scale;
        [1.0, u, w, u * u, u * w, w * w]
    }

    pub fn predict(&self, p: PixelPoint) -> (f64, f64) {
        let b = self.basis(p);
        let dot = |c: &[f64; 6]| c.iter().zip(&b).map(|(c, b)| c * b).sum::<f64>();
        (dot(&self.coef_h), dot(&self.coef_v))
    }
}

/// Least-squares fit of the calibration polynomials via the normal
/// equations.
pub fn fit_calibration(points: &[(PixelPoint, (f64, f64))]) -> Result<CalibrationModel, GazeError> {
    if points.iter().any(|(p, (h, v))| !p.is_finite() || !h.is_finite() || !v.is_finite()) {
        return Err(GazeError::DegenerateDesign("non-finite calibration point".into()));
    }
    if points.len() < 3 {
        return Err(GazeError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|(p, _)| p.x).sum::<f64>() / n;
    let my = points.iter().map(|(p, _)| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, _) in points {
        sxx += (p.x - mx).powi(2);
        syy += (p.y - my).powi(2);
        sxy += (p.x - mx) * (p.y - my);
    }
    // smallest/largest eigenvalue of the 2x2 scatter: zero when collinear
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (lmax, lmin) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    if lmax <= 0.0 || lmin <= 1e-12 * lmax {
        return Err(GazeError::DegenerateDesign("calibration points are collinear".into()));
    }
    if points.len() < 6 {
        return Err(GazeError::TooFewPoints(points.len()));
    }

    let scale = (tr / n).sqrt();
    let mut model = CalibrationModel {
        origin: PixelPoint::new(mx, my),
        scale,
        ..CalibrationModel::zero()
    };
    let mut normal = SMatrix::<f64, 6, 6>::zeros();
    let mut rhs_h = SVector::<f64, 6>::zeros();
    let mut rhs_v = SVector::<f64, 6>::zeros();
    for (p, (h, v)) in points {
        let b = SVector::<f64, 6>::from(model.basis(*p));
        normal += b * b.transpose();
        rhs_h += b * *h;
        rhs_v += b * *v;
    }
    let eig = normal.symmetric_eigenvalues();
    let (emin, emax) = eig
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if emin <= 0.0 || emax / emin > MAX_CONDITION {
        return Err(GazeError::DegenerateDesign(format!(
            "normal matrix condition number {:.3e} exceeds {MAX_CONDITION:e}",
            emax / emin.max(f64::MIN_POSITIVE)
        )));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| GazeError::DegenerateDesign("normal matrix not positive definite".into()))?;
    let ch = chol.solve(&rhs_h);
    let cv = chol.solve(&rhs_v);
    model.coef_h.copy_from_slice(ch.as_slice());
    model.coef_v.copy_from_slice(cv.as_slice());

    let sq: f64 = points
        .iter()
        .map(|(p, (h, v))| {
            let (ph, pv) = model.predict(*p);
            (ph - h).powi(2) + (pv - v).powi(2)
        })
        .sum();
    model.residual_rms = (sq / n).sqrt();
    Ok(model)
}

pub fn estimate_gaze(model: &CalibrationModel, pupil: PixelPoint, t: f64, confidence: f64) -> GazeSample {
    let (h, v) = model.predict(pupil);
    GazeSample { t, h, v, confidence }
}

/// A detected pupil centre at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilObservation {
    pub t: f64,
    pub center: PixelPoint,
}

/// Pairs every observation inside a trimmed calibration window with its
/// target angle.
pub fn calibration_points(track: &[PupilObservation], schedule: &TargetSchedule) -> Vec<(PixelPoint, (f64, f64))> {
    track
        .iter()
        .filter_map(|o| {
            TargetSchedule::trimmed_target_at(schedule.calibration(), o.t).map(|tg| (o.center, (tg.h, tg.v)))
        })
        .collect()
}

/// Calibrates on the track's calibration windows and maps every
/// observation to gaze.
pub fn calibrate_and_estimate(
    track: &[PupilObservation],
    schedule: &TargetSchedule,
) -> Result<(CalibrationModel, GazeTrace), GazeError> {
    let model = fit_calibration(&calibration_points(track, schedule))?;
    let samples = track
        .iter()
        .map(|o| estimate_gaze(&model, o.center, o.t, 1.0))
        .collect();
    Ok((model, GazeTrace::new(samples)?))
}

fn validation_windows<'a>(trace: &'a GazeTrace, schedule: &'a TargetSchedule) -> Vec<(&'a Target, Vec<&'a GazeSample>)> {
    schedule
        .validation()
        .iter()
        .map(|tg| {
            let inside = trace
                .samples
                .iter()
                .filter(|s| s.confidence > 0.0 && s.t >= tg.onset + ONSET_TRIM_S && s.t < tg.offset)
                .collect();
            (tg, inside)
        })
        .collect()
}

/// Mean angular offset from the validation targets, degrees.
pub fn accuracy(trace: &GazeTrace, schedule: &TargetSchedule) -> Result<f64, GazeError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (tg, samples) in validation_windows(trace, schedule) {
        for s in samples {
            sum += s.angular_distance(tg.h, tg.v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(GazeError::NoValidationSamples);
    }
    Ok(sum / count as f64)
}

/// RMS angular distance between successive samples within each validation
/// window, averaged over windows.
pub fn precision(trace: &GazeTrace, schedule: &TargetSchedule) -> Result<f64, GazeError> {
    let per_window: Vec<f64> = validation_windows(trace, schedule)
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(_, s)| {
            let sq: f64 = s
                .windows(2)
                .map(|w| w[1].angular_distance(w[0].h, w[0].v).powi(2))
                .sum();
            (sq / (s.len() - 1) as f64).sqrt()
        })
        .collect();
    if per_window.is_empty() {
        return Err(GazeError::NoValidationSamples);
    }
    Ok(per_window.iter().sum::<f64>() / per_window.len() as f64)
}

pub(crate) fn parse_csv(text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>, GazeError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(GazeError::Csv {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols != header {
        return Err(GazeError::Csv {
            line: 1,
            msg: format!("expected header {}", header.join(",")),
        });
    }
    lines
        .map(|(i, line)| {
            let vals: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) if v.len() == header.len() => Ok(v),
                Ok(v) => Err(GazeError::Csv {
                    line: i + 1,
                    msg: format!("expected {} fields, found {}", header.len(), v.len()),
                }),
                Err(e) => Err(GazeError::Csv {
                    line: i + 1,
                    msg: e.to_string(),
                }),
            }
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), GazeError> {
    fs::write(path, text).map_err(|source| GazeError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, GazeError> {
    fs::read_to_string(path).map_err(|source| GazeError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn affine(p: PixelPoint) -> (f64, f64) {
        (0.16 * p.x - 0.01 * p.y - 25.0, 0.02 * p.x - 0.17 * p.y + 19.0)
    }

    fn grid_points(n_side: usize) -> Vec<PixelPoint> {
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                pts.push(PixelPoint::new(
                    100.0 + 120.0 * i as f64 / (n_side - 1) as f64,
                    70.0 + 100.0 * j as f64 / (n_side - 1) as f64,
                ));
            }
        }
        pts
    }

    #[test]
    fn affine_map_is_recovered_exactly() {
        let pts: Vec<_> = grid_points(3).into_iter().map(|p| (p, affine(p))).collect();
        let model = fit_calibration(&pts).unwrap();
        assert!(model.residual_rms < 1e-9, "{}", model.residual_rms);
        for p in [PixelPoint::new(133.3, 91.7), PixelPoint::new(201.0, 150.5)] {
            let (h, v) = model.predict(p);
            let (eh, ev) = affine(p);
            assert!((h - eh).abs() < 1e-9 && (v - ev).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..5)
            .map(|i| {
                let p = PixelPoint::new(100.0 + 10.0 * i as f64, 80.0 + 5.0 * i as f64);
                (p, affine(p))
            })
            .collect();
        assert!(matches!(fit_calibration(&pts), Err(GazeError::DegenerateDesign(_))));
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<_> = grid_points(2).into_iter().map(|p| (p, affine(p))).collect();
        assert!(matches!(fit_calibration(&pts), Err(GazeError::TooFewPoints(4))));
    }

    #[test]
    fn conic_only_design_is_degenerate() {
        // six points on one circle: x² + y² is collinear with the constant term
        let pts: Vec<_> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0;
                let p = PixelPoint::new(160.0 + 40.0 * a.cos(), 120.0 + 40.0 * a.sin());
                (p, affine(p))
            })
            .collect();
        assert!(matches!(fit_calibration(&pts), Err(GazeError::DegenerateDesign(_))));
    }

    #[test]
    fn noisy_affine_generalises() {
        // Monte Carlo over 20 draws of 25 noisy points
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let pts: Vec<_> = grid_points(5)
                .into_iter()
                .map(|p| {
                    let (h, v) = affine(p);
                    (p, (h + noise.sample(&mut rng), v + noise.sample(&mut rng)))
                })
                .collect();
            let model = fit_calibration(&pts).unwrap();
            let mut err = 0.0;
            for _ in 0..50 {
                let p = PixelPoint::new(rng.random_range(110.0..210.0), rng.random_range(80.0..160.0));
                let (h, v) = model.predict(p);
                let (eh, ev) = affine(p);
                err += (h - eh).hypot(v - ev);
            }
            worst = worst.max(err / 50.0);
        }
        assert!(worst <= 0.3, "held-out error {worst}");
    }

    #[test]
    fn zero_model_maps_to_origin() {
        let s = estimate_gaze(&CalibrationModel::zero(), PixelPoint::new(12.0, 99.0), 1.5, 1.0);
        assert_eq!((s.h, s.v, s.t, s.confidence), (0.0, 0.0, 1.5, 1.0));
    }

    #[test]
    fn training_point_reproduced_within_residual() {
        let pts: Vec<_> = grid_points(4).into_iter().map(|p| (p, affine(p))).collect();
        let model = fit_calibration(&pts).unwrap();
        let (p, (h, v)) = pts[5];
        let s = estimate_gaze(&model, p, 0.0, 1.0);
        assert!(s.angular_distance(h, v) <= model.residual_rms + 1e-9);
    }

    fn one_validation_schedule() -> TargetSchedule {
        let dwells = [1.0; 9];
        TargetSchedule::challenge((10.0, 8.0), (5.0, 4.0), &dwells).unwrap()
    }

    fn trace_in_validation(schedule: &TargetSchedule, f: impl Fn(usize, &Target) -> (f64, f64)) -> GazeTrace {
        let mut samples = Vec::new();
        let mut k = 0;
        for tg in schedule.targets() {
            for i in 0..30 {
                let t = tg.onset + i as f64 / 30.0;
                let (h, v) = f(k, tg);
                samples.push(GazeSample { t, h, v, confidence: 1.0 });
                k += 1;
            }
        }
        GazeTrace::new(samples).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let sched = one_validation_schedule();
        let on_target = trace_in_validation(&sched, |_, tg| (tg.h, tg.v));
        assert_eq!(accuracy(&on_target, &sched).unwrap(), 0.0);
        let offset = trace_in_validation(&sched, |_, tg| (tg.h + 1.0, tg.v));
        assert!((accuracy(&offset, &sched).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_examples() {
        let sched = one_validation_schedule();
        let constant = trace_in_validation(&sched, |_, _| (2.0, 3.0));
        assert_eq!(precision(&constant, &sched).unwrap(), 0.0);
        let alternating = trace_in_validation(&sched, |k, _| (if k % 2 == 0 { 0.0 } else { 1.0 }, 0.0));
        assert!((precision(&alternating, &sched).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_need_validation_samples() {
        let sched = one_validation_schedule();
        let early = GazeTrace::new(vec![GazeSample { t: 0.1, h: 0.0, v: 0.0, confidence: 1.0 }]).unwrap();
        assert!(matches!(accuracy(&early, &sched), Err(GazeError::NoValidationSamples)));
        assert!(matches!(precision(&early, &sched), Err(GazeError::NoValidationSamples)));
        let zero_conf = trace_in_validation(&sched, |_, tg| (tg.h, tg.v));
        let zero_conf = GazeTrace::new(
            zero_conf
                .samples()
                .iter()
                .map(|s| GazeSample { confidence: 0.0, ..*s })
                .collect(),
        )
        .unwrap();
        assert!(accuracy(&zero_conf, &sched).is_err());
    }

    #[test]
    fn accuracy_ignores_order_precision_does_not() {
        let sched = one_validation_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = trace_in_validation(&sched, |k, tg| (tg.h + (k % 3) as f64 * 0.2, tg.v - (k % 5) as f64 * 0.1));
        let mut samples = base.samples().to_vec();
        // reverse the positions (not timestamps) inside the first validation window
        let tg = sched.validation()[0];
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].t >= tg.onset + ONSET_TRIM_S && samples[i].t < tg.offset)
            .collect();
        let mut pos: Vec<(f64, f64)> = idx.iter().map(|&i| (samples[i].h, samples[i].v)).collect();
        pos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let _ = rng.random::<u8>();
        for (&i, &(h, v)) in idx.iter().zip(&pos) {
            samples[i].h = h;
            samples[i].v = v;
        }
        let permuted = GazeTrace::new(samples).unwrap();
        let a0 = accuracy(&base, &sched).unwrap();
        let a1 = accuracy(&permuted, &sched).unwrap();
        assert!((a0 - a1).abs() < 1e-12);
        let p0 = precision(&base, &sched).unwrap();
        let p1 = precision(&permuted, &sched).unwrap();
        assert!((p0 - p1).abs() > 1e-3);
    }

    #[test]
    fn trace_rejects_non_monotonic_time() {
        let s = |t| GazeSample { t, h: 0.0, v: 0.0, confidence: 1.0 };
        assert!(matches!(
            GazeTrace::new(vec![s(0.0), s(0.1), s(0.1)]),
            Err(GazeError::NonMonotonicTime { index: 2 })
        ));
    }

    #[test]
    fn schedule_validation_and_csv() {
        let sched = one_validation_schedule();
        assert_eq!(sched.calibration().len(), 5);
        assert_eq!(sched.validation().len(), 4);
        assert_eq!(sched.span(), 9.0);
        let back = TargetSchedule::from_csv(&sched.to_csv()).unwrap();
        assert_eq!(back, sched);
        let overlapping = vec![
            Target { h: 0.0, v: 0.0, onset: 0.0, offset: 2.0 },
            Target { h: 1.0, v: 0.0, onset: 1.0, offset: 3.0 },
        ];
        assert!(TargetSchedule::new(overlapping, 1).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let sched = one_validation_schedule();
        let trace = trace_in_validation(&sched, |k, tg| (tg.h + k as f64 * 1e-3, tg.v / 3.0));
        assert_eq!(GazeTrace::from_csv(&trace.to_csv()).unwrap(), trace);
        assert!(GazeTrace::from_csv("t,h,v\n1,2,3\n").is_err());
    }
}
