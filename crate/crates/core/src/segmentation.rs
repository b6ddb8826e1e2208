//! Pupil and limbus localisation, the binary iris mask and the Dice overlap
//! score.
//!
//! The detector is classical and works in two stages:
//!
//! 1. **Pupil**: the largest connected component below an intensity
//!    threshold gives a centroid and an area-equivalent radius, refined by a
//!    radial edge search with a least-squares circle fit.
//! 2. **Limbus**: around the pupil centre, the circle maximising the smoothed
//!    radial derivative of the mean circular intensity (integro-differential
//!    search restricted to dark-to-bright transitions).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{GrayImage, ImagingError, PixelPoint};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("no dark component of at least {min_area} px (largest {largest} px)")]
    NoPupilFound { min_area: usize, largest: usize },
    #[error("no limbus: best radial contrast {best:.3} below {min:.3}")]
    NoLimbusFound { best: f64, min: f64 },
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("invalid iris geometry: {0}")]
    InvalidGeometry(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: PixelPoint,
    pub radius: f64,
}

impl Circle {
    pub const fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: PixelPoint::new(x, y),
            radius,
        }
    }

    /// Pixel-centre membership; the boundary itself is outside.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        dx * dx + dy * dy < self.radius * self.radius
    }

    pub fn point_at(&self, theta: f64) -> PixelPoint {
        PixelPoint::new(
            self.center.x + self.radius * theta.cos(),
            self.center.y + self.radius * theta.sin(),
        )
    }
}

/// Pupil and limbus boundaries of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrisGeometry {
    pub pupil: Circle,
    pub limbus: Circle,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl IrisGeometry {
    pub fn new(pupil: Circle, limbus: Circle, frame_width: usize, frame_height: usize) -> Self {
        Self {
            pupil,
            limbus,
            frame_width,
            frame_height,
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        let bad = |msg: String| Err(SegmentationError::InvalidGeometry(msg));
        let finite = self.pupil.center.is_finite()
            && self.limbus.center.is_finite()
            && self.pupil.radius.is_finite()
            && self.limbus.radius.is_finite();
        if !finite {
            return bad("non-finite circle parameters".into());
        }
        if self.pupil.radius <= 0.0 || self.limbus.radius <= 0.0 {
            return bad(format!(
                "radii must be positive (pupil {}, limbus {})",
                self.pupil.radius, self.limbus.radius
            ));
        }
        if self.pupil.radius >= self.limbus.radius {
            return bad(format!(
                "pupil radius {} not below limbus radius {}",
                self.pupil.radius, self.limbus.radius
            ));
        }
        let offset = self.pupil.center.distance(&self.limbus.center);
        if offset > 0.5 * self.limbus.radius {
            return bad(format!(
                "centre offset {offset:.2} exceeds half the limbus radius"
            ));
        }
        Ok(())
    }

    /// True for pixel centres inside the limbus and outside the pupil.
    #[inline]
    pub fn in_annulus(&self, x: f64, y: f64) -> bool {
        self.limbus.contains(x, y) && !self.pupil.contains(x, y)
    }

    /// Distance from the pupil centre to the limbus along the unit direction
    /// `(ux, uy)`.
    #[inline]
    pub fn limbus_distance_along(&self, ux: f64, uy: f64) -> f64 {
        let ox = self.limbus.center.x - self.pupil.center.x;
        let oy = self.limbus.center.y - self.pupil.center.y;
        let b = ux * ox + uy * oy;
        let c = ox * ox + oy * oy - self.limbus.radius * self.limbus.radius;
        b + (b * b - c).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, SegmentationError> {
        if bits.len() != width * height {
            return Err(SegmentationError::DimensionMismatch {
                a: (width, height),
                b: (bits.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Ground-truth mask interchange: 0 background, 255 iris.
    pub fn to_image(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, px).expect("mask dimensions are consistent")
    }

    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&p| p >= 128).collect(),
        }
    }
}

/// Detector tuning. Intensities are on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub pupil_threshold: u8,
    pub min_pupil_area: usize,
    pub rmin_factor: f64,
    pub rmax_factor: f64,
    /// Minimum smoothed radial derivative (intensity units per pixel).
    pub min_limbus_contrast: f64,
    /// Half-width, in pixels, of the limbus centre search around the pupil.
    pub center_search: i32,
    /// Rays used by the pupil edge refinement.
    pub refine_rays: usize,
    /// Angular samples per circle in the limbus search.
    pub limbus_samples: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            pupil_threshold: 60,
            min_pupil_area: 100,
            rmin_factor: 1.8,
            rmax_factor: 3.5,
            min_limbus_contrast: 4.0,
            center_search: 3,
            refine_rays: 64,
            limbus_samples: 96,
        }
    }
}

struct Component {
    area: usize,
    sum_x: f64,
    sum_y: f64,
}

/// Largest 4-connected component of pixels strictly below `threshold`.
fn largest_dark_component(img: &GrayImage, threshold: u8) -> Option<Component> {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut best: Option<Component> = None;
    for start in 0..w * h {
        if visited[start] || px[start] >= threshold {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut comp = Component {
            area: 0,
            sum_x: 0.0,
            sum_y: 0.0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.area += 1;
            comp.sum_x += x as f64;
            comp.sum_y += y as f64;
            let mut visit = |j: usize| {
                if !visited[j] && px[j] < threshold {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.as_ref().is_none_or(|b| comp.area > b.area) {
            best = Some(comp);
        }
    }
    best
}

/// Algebraic (Kasa) least-squares circle through `points`.
pub(crate) fn fit_circle(points: &[PixelPoint]) -> Option<Circle> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut suu, mut svv, mut suv, mut suuu, mut svvv, mut suvv, mut svuu) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let u = p.x - mx;
        let v = p.y - my;
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    let det = suu * svv - suv * suv;
    if det.abs() < 1e-12 {
        return None;
    }
    let r1 = 0.5 * (suuu + suvv);
    let r2 = 0.5 * (svvv + svuu);
    let uc = (r1 * svv - r2 * suv) / det;
    let vc = (suu * r2 - suv * r1) / det;
    let radius = (uc * uc + vc * vc + (suu + svv) / n).sqrt();
    radius
        .is_finite()
        .then(|| Circle::new(uc + mx, vc + my, radius))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}

/// Refines a pupil estimate by locating the steepest dark-to-bright step on
/// rays from the centroid and fitting a circle to the inlier edge points.
fn refine_pupil(img: &GrayImage, coarse: Circle, rays: usize) -> Circle {
    const STEP: f64 = 0.25;
    let r0 = coarse.radius;
    let r_lo = (0.6 * r0).max(1.0);
    let r_hi = 1.4 * r0 + 2.0;
    let steps = ((r_hi - r_lo) / STEP).ceil() as usize + 1;
    let mut edges: Vec<(f64, f64, f64)> = Vec::with_capacity(rays);
    let mut profile = Vec::with_capacity(steps);
    for k in 0..rays {
        let theta = 2.0 * PI * k as f64 / rays as f64;
        let (s, c) = theta.sin_cos();
        profile.clear();
        for i in 0..steps {
            let r = r_lo + i as f64 * STEP;
            let p = PixelPoint::new(coarse.center.x + r * c, coarse.center.y + r * s);
            match img.bilinear_sample(p) {
                Ok(v) => profile.push(v),
                Err(_) => break,
            }
        }
        if profile.len() < 5 {
            continue;
        }
        let mut best = (0usize, f64::MIN);
        for i in 1..profile.len() - 1 {
            let d = profile[i + 1] - profile[i - 1];
            if d > best.1 {
                best = (i, d);
            }
        }
        let (i, d) = best;
        if d <= 0.0 || i < 2 || i + 2 >= profile.len() {
            continue;
        }
        let dm = profile[i] - profile[i - 2];
        let dp = profile[i + 2] - profile[i];
        let denom = dm - 2.0 * d + dp;
        let offset = if denom.abs() > 1e-12 {
            (0.5 * (dm - dp) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let r = r_lo + (i as f64 + offset) * STEP;
        edges.push((theta, r, d));
    }
    if edges.len() < rays / 2 {
        return coarse;
    }
    let mut radii: Vec<f64> = edges.iter().map(|e| e.1).collect();
    let med = median(&mut radii);
    let inliers: Vec<PixelPoint> = edges
        .iter()
        .filter(|e| (e.1 - med).abs() <= 1.5)
        .map(|&(theta, r, _)| {
            PixelPoint::new(
                coarse.center.x + r * theta.cos(),
                coarse.center.y + r * theta.sin(),
            )
        })
        .collect();
    if inliers.len() < rays / 2 {
        return coarse;
    }
    match fit_circle(&inliers) {
        Some(c)
            if (c.radius - r0).abs() <= 0.2 * r0
                && c.center.distance(&coarse.center) <= 0.25 * r0 =>
        {
            c
        }
        _ => coarse,
    }
}

pub fn detect_pupil(img: &GrayImage, params: &SegmentationParams) -> Result<Circle, SegmentationError> {
    img.ensure_pipeline_size()?;
    let comp = largest_dark_component(img, params.pupil_threshold);
    let largest = comp.as_ref().map_or(0, |c| c.area);
    let comp = match comp {
        Some(c) if c.area >= params.min_pupil_area => c,
        _ => {
            return Err(SegmentationError::NoPupilFound {
                min_area: params.min_pupil_area,
                largest,
            })
        }
    };
    let area = comp.area as f64;
    let coarse = Circle::new(comp.sum_x / area, comp.sum_y / area, (area / PI).sqrt());
    Ok(refine_pupil(img, coarse, params.refine_rays))
}

pub fn detect_limbus(
    img: &GrayImage,
    pupil: &Circle,
    params: &SegmentationParams,
) -> Result<Circle, SegmentationError> {
    img.ensure_pipeline_size()?;
    if !(pupil.radius > 0.0 && pupil.center.is_finite()) {
        return Err(SegmentationError::InvalidGeometry(format!(
            "pupil circle {pupil:?}"
        )));
    }
    let rmin = params.rmin_factor * pupil.radius;
    let rmax = params.rmax_factor * pupil.radius;
    // two extra samples on each side feed the derivative and the boxcar
    let r_start = (rmin - 2.0).max(1.0);
    let n_r = (rmax + 2.0 - r_start).floor() as usize + 1;
    let n_ang = params.limbus_samples.max(8);
    let trig: Vec<(f64, f64)> = (0..n_ang)
        .map(|k| (2.0 * PI * k as f64 / n_ang as f64).sin_cos())
        .collect();
    let (wmax, hmax) = ((img.width() - 1) as f64, (img.height() - 1) as f64);

    let mut best: Option<(f64, f64, f64, f64)> = None; // (score, cx, cy, r)
    let mut means = vec![f64::NAN; n_r];
    let mut deriv = vec![f64::NAN; n_r];
    for dy in -params.center_search..=params.center_search {
        for dx in -params.center_search..=params.center_search {
            let cx = pupil.center.x + dx as f64;
            let cy = pupil.center.y + dy as f64;
            for (i, m) in means.iter_mut().enumerate() {
                let r = r_start + i as f64;
                let (mut sum, mut count) = (0.0, 0usize);
                for &(s, c) in &trig {
                    let x = cx + r * c;
                    let y = cy + r * s;
                    if x >= 0.0 && y >= 0.0 && x <= wmax && y <= hmax {
                        sum += img.sample_unchecked(x, y);
                        count += 1;
                    }
                }
                // arcs with too little visible support are unreliable
                *m = if count * 2 >= n_ang {
                    sum / count as f64
                } else {
                    f64::NAN
                };
            }
            for i in 1..n_r - 1 {
                deriv[i] = 0.5 * (means[i + 1] - means[i - 1]);
            }
            for i in 2..n_r - 2 {
                let r = r_start + i as f64;
                if r < rmin || r > rmax {
                    continue;
                }
                let s = (deriv[i - 1] + deriv[i] + deriv[i + 1]) / 3.0;
                if !s.is_finite() {
                    continue;
                }
                if best.is_none_or(|b| s > b.0) {
                    let prev = (deriv[i - 2] + deriv[i - 1] + deriv[i]) / 3.0;
                    let next = if i + 2 < n_r {
                        (deriv[i] + deriv[i + 1] + deriv[i + 2]) / 3.0
                    } else {
                        f64::NAN
                    };
                    let denom = prev - 2.0 * s + next;
                    let offset = if denom.is_finite() && denom.abs() > 1e-12 {
                        (0.5 * (prev - next) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    };
                    best = Some((s, cx, cy, r + offset));
                }
            }
        }
    }
    match best {
        Some((score, cx, cy, r)) if score >= params.min_limbus_contrast => {
            Ok(Circle::new(cx, cy, r))
        }
        other => Err(SegmentationError::NoLimbusFound {
            best: other.map_or(0.0, |b| b.0),
            min: params.min_limbus_contrast,
        }),
    }
}

/// Runs both detectors and checks the resulting geometry.
pub fn segment(img: &GrayImage, params: &SegmentationParams) -> Result<IrisGeometry, SegmentationError> {
    let pupil = detect_pupil(img, params)?;
    let limbus = detect_limbus(img, &pupil, params)?;
    let geom = IrisGeometry::new(pupil, limbus, img.width(), img.height());
    geom.validate()?;
    Ok(geom)
}

pub fn geometry_to_mask(geom: &IrisGeometry) -> BinaryMask {
    let (w, h) = (geom.frame_width, geom.frame_height);
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            bits[y * w + x] = geom.in_annulus(x as f64, y as f64);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice_score(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64, SegmentationError> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(SegmentationError::DimensionMismatch {
            a: (pred.width, pred.height),
            b: (truth.width, truth.height),
        });
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
        a += p as usize;
        b += t as usize;
        inter += (p && t) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}
