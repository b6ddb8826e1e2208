//! Deterministic synthetic subjects: iris textures, challenge-task
//! scanpaths, rendered eye frames and the online frame-drop model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::{GazeSample, GazeTrace, TargetSchedule};
use crate::imaging::GrayImage;
use crate::rubbersheet::{PolarTexture, DEFAULT_ANGULAR_RES, DEFAULT_RADIAL_RES};
use crate::segmentation::{geometry_to_mask, BinaryMask, Circle, IrisGeometry};

pub const DEFAULT_CAMERA_RATE: f64 = 30.0;
/// Lowest output rate of the online attack.
pub const MIN_ONLINE_RATE: f64 = 3.0;

const TEXTURE_LO: f64 = 75.0;
const TEXTURE_HI: f64 = 185.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("gaze ({h:.2}°, {v:.2}°) puts the limbus outside the frame")]
    GazeOutOfFrame { h: f64, v: f64 },
}

/// SplitMix64 finaliser; used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, salt))
}

const SALT_PROFILE: u64 = 0x5052_4f46;
const SALT_TEXTURE: u64 = 0x5445_5854;
const SALT_SCANPATH: u64 = 0x5343_414e;
const SALT_DROPS: u64 = 0x4452_4f50;
const SALT_STATIC: u64 = 0x5354_4154;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub seed: u64,
    pub texture_octaves: usize,
    /// Radial streaks per 100 angular columns.
    pub streak_density: f64,
    pub pupil_radius_base: f64,
    /// Relative standard deviation of the per-frame pupil radius.
    pub pupil_noise: f64,
    pub limbus_radius: f64,
    /// Pixels of pupil displacement per degree of gaze.
    pub gain: f64,
    /// Fixation jitter standard deviation, degrees.
    pub jitter_sigma: f64,
}

impl SubjectProfile {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng_for(seed, SALT_PROFILE);
        Self {
            seed,
            texture_octaves: rng.random_range(3..=4),
            streak_density: rng.random_range(2.0..5.0),
            pupil_radius_base: rng.random_range(20.0..24.0),
            pupil_noise: 0.04,
            limbus_radius: rng.random_range(52.0..58.0),
            gain: 6.0,
            jitter_sigma: 0.15,
        }
    }
}

/// Fixed render constants shared by all subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub sclera: f64,
    pub pupil: f64,
    pub pixel_noise: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            sclera: 200.0,
            pupil: 30.0,
            pixel_noise: 2.0,
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise, periodic in the angular direction.
struct ValueNoise {
    radial_cells: usize,
    angular_cells: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, radial_cells: usize, angular_cells: usize) -> Self {
        let values = (0..(radial_cells + 1) * angular_cells)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self {
            radial_cells,
            angular_cells,
            values,
        }
    }

    /// `rho` and `phi` both in [0, 1]; `phi` wraps.
    fn at(&self, rho: f64, phi: f64) -> f64 {
        let r = rho * self.radial_cells as f64;
        let a = phi * self.angular_cells as f64;
        let r0 = (r.floor() as usize).min(self.radial_cells - 1);
        let a0 = a.floor() as usize % self.angular_cells;
        let a1 = (a0 + 1) % self.angular_cells;
        let fr = smoothstep(r - r0 as f64);
        let fa = smoothstep(a - a.floor());
        let v = |ri: usize, ai: usize| self.values[ri * self.angular_cells + ai];
        let top = v(r0, a0) + (v(r0, a1) - v(r0, a0)) * fa;
        let bottom = v(r0 + 1, a0) + (v(r0 + 1, a1) - v(r0 + 1, a0)) * fa;
        top + (bottom - top) * fr
    }
}

struct Streak {
    phi: f64,
    width: f64,
    rho_lo: f64,
    rho_hi: f64,
    amplitude: f64,
}

pub fn texture_for_profile(profile: &SubjectProfile) -> PolarTexture {
    let mut rng = rng_for(profile.seed, SALT_TEXTURE);
    let octaves: Vec<(ValueNoise, f64)> = (0..profile.texture_octaves)
        .map(|o| {
            let scale = 1usize << o;
            (ValueNoise::new(&mut rng, 3 * scale, 24 * scale), 0.6f64.powi(o as i32))
        })
        .collect();
    let n_streaks = (profile.streak_density * DEFAULT_ANGULAR_RES as f64 / 100.0).round() as usize;
    let streaks: Vec<Streak> = (0..n_streaks)
        .map(|_| {
            let rho_lo = rng.random_range(0.0..0.4);
            Streak {
                phi: rng.random_range(0.0..1.0),
                width: rng.random_range(1.5..4.0) / DEFAULT_ANGULAR_RES as f64,
                rho_lo,
                rho_hi: rng.random_range(rho_lo + 0.3..1.0),
                amplitude: rng.random_range(0.4..0.9) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            }
        })
        .collect();

    let (rows, cols) = (DEFAULT_RADIAL_RES, DEFAULT_ANGULAR_RES);
    let mut raw = vec![0.0f64; rows * cols];
    for i in 0..rows {
        let rho = i as f64 / (rows - 1) as f64;
        for j in 0..cols {
            let phi = j as f64 / cols as f64;
            let mut v: f64 = octaves.iter().map(|(n, amp)| amp * n.at(rho, phi)).sum();
            for s in &streaks {
                if rho < s.rho_lo || rho > s.rho_hi {
                    continue;
                }
                let mut d = (phi - s.phi).abs();
                d = d.min(1.0 - d);
                let along = ((rho - s.rho_lo) / (s.rho_hi - s.rho_lo) * PI).sin();
                v += s.amplitude * along * (-0.5 * (d / s.width).powi(2)).exp();
            }
            raw[i * cols + j] = v;
        }
    }
    let lo = raw.iter().cloned().fold(f64::MAX, f64::min);
    let hi = raw.iter().cloned().fold(f64::MIN, f64::max);
    let span = (hi - lo).max(1e-12);
    PolarTexture::from_fn(rows, cols, |i, j| {
        (TEXTURE_LO + (raw[i * cols + j] - lo) / span * (TEXTURE_HI - TEXTURE_LO)) as f32
    })
}

/// Iris texture of the subject seeded with `seed`.
pub fn generate_subject_texture(seed: u64) -> PolarTexture {
    texture_for_profile(&SubjectProfile::from_seed(seed))
}

/// Main-sequence saccade constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaccadeModel {
    /// Duration slope, ms per degree.
    pub duration_slope_ms: f64,
    pub duration_intercept_ms: f64,
    /// Asymptotic peak velocity, deg/s.
    pub peak_velocity_max: f64,
    /// Amplitude constant of the peak-velocity saturation, degrees.
    pub peak_velocity_scale: f64,
    pub latency_min_s: f64,
    pub latency_max_s: f64,
}

impl Default for SaccadeModel {
    fn default() -> Self {
        Self {
            duration_slope_ms: 2.2,
            duration_intercept_ms: 21.0,
            peak_velocity_max: 500.0,
            peak_velocity_scale: 15.0,
            latency_min_s: 0.150,
            latency_max_s: 0.250,
        }
    }
}

/// Symmetric cosine-tapered velocity profile: half-cosine ramps of length
/// `ramp` at each end and a plateau at the peak velocity in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadeProfile {
    pub amplitude: f64,
    pub duration: f64,
    pub peak_velocity: f64,
    ramp: f64,
}

impl SaccadeProfile {
    pub fn new(amplitude: f64, model: &SaccadeModel) -> Self {
        let peak = model.peak_velocity_max * (1.0 - (-amplitude / model.peak_velocity_scale).exp());
        let nominal = (model.duration_slope_ms * amplitude + model.duration_intercept_ms) / 1000.0;
        // fraction of the peak*duration box filled by the profile: 0.5 is a
        // pure cosine bump, 1.0 a rectangle
        let fill = amplitude / (peak * nominal);
        let (duration, fill) = if fill > 1.0 {
            (amplitude / (0.75 * peak), 0.75)
        } else if fill < 0.5 {
            (amplitude / (0.5 * peak), 0.5)
        } else {
            (nominal, fill)
        };
        let taper = 2.0 * (1.0 - fill);
        Self {
            amplitude,
            duration,
            peak_velocity: peak,
            ramp: taper * duration / 2.0,
        }
    }

    pub fn velocity(&self, tau: f64) -> f64 {
        if tau <= 0.0 || tau >= self.duration {
            return 0.0;
        }
        let tau = tau.min(self.duration - tau);
        if tau < self.ramp {
            self.peak_velocity * 0.5 * (1.0 - (PI * tau / self.ramp).cos())
        } else {
            self.peak_velocity
        }
    }

    fn displacement_from_start(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        if tau < self.ramp {
            self.peak_velocity * 0.5 * (tau - self.ramp / PI * (PI * tau / self.ramp).sin())
        } else {
            self.peak_velocity * 0.5 * self.ramp + self.peak_velocity * (tau - self.ramp)
        }
    }

    /// Fraction of the amplitude covered after `tau` seconds.
    pub fn progress(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            0.0
        } else if tau >= self.duration {
            1.0
        } else if tau <= self.duration / 2.0 {
            self.displacement_from_start(tau) / self.amplitude
        } else {
            1.0 - self.displacement_from_start(self.duration - tau) / self.amplitude
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanpathSample {
    pub t: f64,
    pub h: f64,
    pub v: f64,
}

/// Ground-truth gaze at a fixed sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scanpath {
    pub rate: f64,
    pub samples: Vec<ScanpathSample>,
}

impl Scanpath {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn to_trace(&self) -> GazeTrace {
        GazeTrace::new(
            self.samples
                .iter()
                .map(|s| GazeSample {
                    t: s.t,
                    h: s.h,
                    v: s.v,
                    confidence: 1.0,
                })
                .collect(),
        )
        .expect("scanpath timestamps increase")
    }

    /// Largest sample-to-sample angular speed, deg/s.
    pub fn max_speed(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].h - w[0].h).hypot(w[1].v - w[0].v) / (w[1].t - w[0].t))
            .fold(0.0, f64::max)
    }
}

struct Movement {
    start: f64,
    from: (f64, f64),
    to: (f64, f64),
    profile: Option<SaccadeProfile>,
}

/// Latency, a main-sequence saccade to each target, then jittered fixation.
/// Gaze starts at the screen centre.
pub fn generate_scanpath(
    schedule: &TargetSchedule,
    profile: &SubjectProfile,
    seed: u64,
    rate: f64,
    model: &SaccadeModel,
) -> Scanpath {
    generate_scanpath_from(schedule, profile, seed, rate, model, schedule.start())
}

/// As [`generate_scanpath`], but the camera starts at `t0`, which may lie
/// before the first target; the eye rests at the origin until then.
pub fn generate_scanpath_from(
    schedule: &TargetSchedule,
    profile: &SubjectProfile,
    seed: u64,
    rate: f64,
    model: &SaccadeModel,
    t0: f64,
) -> Scanpath {
    let mut rng = rng_for(seed, SALT_SCANPATH);
    let mut pos = (0.0, 0.0);
    let mut moves = Vec::with_capacity(schedule.targets().len());
    for tg in schedule.targets() {
        let latency = rng.random_range(model.latency_min_s..=model.latency_max_s);
        let amp = (tg.h - pos.0).hypot(tg.v - pos.1);
        moves.push(Movement {
            start: tg.onset + latency,
            from: pos,
            to: (tg.h, tg.v),
            profile: (amp > 1e-9).then(|| SaccadeProfile::new(amp, model)),
        });
        pos = (tg.h, tg.v);
    }
    let jitter = Normal::new(0.0, profile.jitter_sigma.max(0.0)).expect("finite sigma");
    let n = ((schedule.end() - t0) * rate).round() as usize;
    let mut samples = Vec::with_capacity(n);
    let mut current = 0usize;
    let mut intended = (0.0, 0.0);
    for i in 0..n {
        let t = t0 + i as f64 / rate;
        while current < moves.len() && moves[current].start <= t {
            intended = moves[current].to;
            current += 1;
        }
        let mut p = intended;
        if current > 0 {
            let mv = &moves[current - 1];
            if let Some(sp) = &mv.profile {
                let q = sp.progress(t - mv.start);
                p = (
                    mv.from.0 + (mv.to.0 - mv.from.0) * q,
                    mv.from.1 + (mv.to.1 - mv.from.1) * q,
                );
            }
        }
        samples.push(ScanpathSample {
            t,
            h: p.0 + jitter.sample(&mut rng),
            v: p.1 + jitter.sample(&mut rng),
        });
    }
    Scanpath { rate, samples }
}

/// Eye-patch style spoof: a fixed gaze point plus small measurement noise,
/// sampled at `rate` over the schedule.
pub fn generate_static_trace(schedule: &TargetSchedule, seed: u64, rate: f64, noise_sigma: f64) -> GazeTrace {
    let mut rng = rng_for(seed, SALT_STATIC);
    let h0 = rng.random_range(-3.0..3.0);
    let v0 = rng.random_range(-3.0..3.0);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let n = (schedule.span() * rate).round() as usize;
    let samples = (0..n)
        .map(|i| GazeSample {
            t: schedule.start() + i as f64 / rate,
            h: h0 + noise.sample(&mut rng),
            v: v0 + noise.sample(&mut rng),
            confidence: 1.0,
        })
        .collect();
    GazeTrace::new(samples).expect("uniform timestamps")
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image: GrayImage,
    pub geometry: IrisGeometry,
    pub mask: BinaryMask,
}

/// Pupil centre for a gaze direction: frame centre plus `gain * (h, -v)`.
pub fn pupil_center_for_gaze(h: f64, v: f64, gain: f64, settings: &RenderSettings) -> (f64, f64) {
    (
        settings.width as f64 / 2.0 + gain * h,
        settings.height as f64 / 2.0 - gain * v,
    )
}

pub fn render_frame(
    h: f64,
    v: f64,
    profile: &SubjectProfile,
    texture: &PolarTexture,
    noise_seed: u64,
) -> Result<RenderedFrame, SynthError> {
    render_frame_with(h, v, profile, texture, noise_seed, &RenderSettings::default())
}

pub fn render_frame_with(
    h: f64,
    v: f64,
    profile: &SubjectProfile,
    texture: &PolarTexture,
    noise_seed: u64,
    settings: &RenderSettings,
) -> Result<RenderedFrame, SynthError> {
    let (cx, cy) = pupil_center_for_gaze(h, v, profile.gain, settings);
    let rl = profile.limbus_radius;
    let (wmax, hmax) = ((settings.width - 1) as f64, (settings.height - 1) as f64);
    if !(cx - rl >= 0.0 && cy - rl >= 0.0 && cx + rl <= wmax && cy + rl <= hmax) {
        return Err(SynthError::GazeOutOfFrame { h, v });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let dilation: f64 = rng.sample(StandardNormal);
    let rp = (profile.pupil_radius_base * (1.0 + profile.pupil_noise * dilation.clamp(-3.0, 3.0)))
        .clamp(0.3 * rl, 0.6 * rl);
    let geometry = IrisGeometry::new(
        Circle::new(cx, cy, rp),
        Circle::new(cx, cy, rl),
        settings.width,
        settings.height,
    );

    let rows = (texture.radial_res() - 1) as f64;
    let cols_per_rad = texture.angular_res() as f64 / (2.0 * PI);
    let (rp2, rl2) = (rp * rp, rl * rl);
    let mut px = Vec::with_capacity(settings.width * settings.height);
    for y in 0..settings.height {
        let dy = y as f64 - cy;
        for x in 0..settings.width {
            let dx = x as f64 - cx;
            let d2 = dx * dx + dy * dy;
            let base = if d2 < rp2 {
                settings.pupil
            } else if d2 < rl2 {
                let rho = (d2.sqrt() - rp) / (rl - rp);
                let theta = dy.atan2(dx).rem_euclid(2.0 * PI);
                texture
                    .sample(rho * rows, theta * cols_per_rad)
                    .unwrap_or(0.5 * (TEXTURE_LO + TEXTURE_HI))
            } else {
                settings.sclera
            };
            let noise: f64 = rng.sample(StandardNormal);
            px.push((base + settings.pixel_noise * noise).round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = GrayImage::new(settings.width, settings.height, px).expect("frame buffer sized");
    let mask = geometry_to_mask(&geometry);
    Ok(RenderedFrame {
        image,
        geometry,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Offline,
    Online,
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::Offline => "offline",
            AttackMode::Online => "online",
        }
    }
}

impl std::str::FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "offline" => Ok(AttackMode::Offline),
            "online" => Ok(AttackMode::Online),
            other => Err(format!("unknown mode {other:?} (expected offline|online)")),
        }
    }
}

/// Online processing-budget model: the kept-frame stride is drawn from a
/// normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDropModel {
    pub mean_factor: f64,
    pub std_factor: f64,
    /// Overrides the drawn stride (still clamped).
    pub forced_factor: Option<f64>,
    /// Draw a new stride for every gap instead of once per run.
    pub per_frame: bool,
}

impl Default for FrameDropModel {
    fn default() -> Self {
        Self {
            mean_factor: 8.9,
            std_factor: 2.6,
            forced_factor: None,
            per_frame: false,
        }
    }
}

/// Rounds a drawn stride and clamps it so the output rate stays within
/// `[3 Hz, camera_rate]`.
pub fn decimation_factor(drawn: f64, camera_rate: f64) -> usize {
    let max_k = ((camera_rate / MIN_ONLINE_RATE).floor() as usize).max(1);
    let k = if drawn.is_finite() { drawn.round() } else { 1.0 };
    (k.max(1.0) as usize).min(max_k)
}

pub fn simulate_frame_drops(
    n_frames: usize,
    camera_rate: f64,
    mode: AttackMode,
    seed: u64,
    model: &FrameDropModel,
) -> Vec<usize> {
    match mode {
        AttackMode::Offline => (0..n_frames).collect(),
        AttackMode::Online => {
            let mut rng = rng_for(seed, SALT_DROPS);
            let dist = Normal::new(model.mean_factor, model.std_factor.max(0.0)).expect("finite factor");
            let draw = |rng: &mut ChaCha8Rng| {
                let k = model.forced_factor.unwrap_or_else(|| dist.sample(rng));
                decimation_factor(k, camera_rate)
            };
            let fixed = draw(&mut rng);
            let mut kept = Vec::with_capacity(n_frames / fixed + 1);
            let mut i = 0;
            while i < n_frames {
                kept.push(i);
                i += if model.per_frame { draw(&mut rng) } else { fixed };
            }
            kept
        }
    }
}
