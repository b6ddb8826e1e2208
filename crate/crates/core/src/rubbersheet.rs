//! Rubber-sheet normalisation of the iris annulus and its inverse, which
//! paints a polar texture back into a frame.
//!
//! Row `i` of a [`PolarTexture`] sits at normalised radius `i / (R - 1)`
//! (0 on the pupil boundary, 1 on the limbus); column `j` sits at angle
//! `2πj / A`, measured in image coordinates (x right, y down).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::imaging::{GrayImage, PixelPoint};
use crate::segmentation::{IrisGeometry, SegmentationError};

pub const DEFAULT_RADIAL_RES: usize = 64;
pub const DEFAULT_ANGULAR_RES: usize = 512;

const TEXTURE_MAGIC: &[u8; 4] = b"IRPT";

#[derive(Debug, Error)]
pub enum RubberSheetError {
    #[error(transparent)]
    InvalidGeometry(#[from] SegmentationError),
    #[error("texture resolution {radial}x{angular} too small")]
    BadResolution { radial: usize, angular: usize },
    #[error("texture has no variance to remap")]
    DegenerateTexture,
    #[error("malformed texture file: {0}")]
    MalformedFile(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Normalised iris texture with a per-cell validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTexture {
    radial_res: usize,
    angular_res: usize,
    intensities: Vec<f32>,
    valid: Vec<bool>,
}

impl PolarTexture {
    pub fn new(
        radial_res: usize,
        angular_res: usize,
        intensities: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self, RubberSheetError> {
        let n = radial_res * angular_res;
        if radial_res < 2 || angular_res < 4 || intensities.len() != n || valid.len() != n {
            return Err(RubberSheetError::BadResolution {
                radial: radial_res,
                angular: angular_res,
            });
        }
        Ok(Self {
            radial_res,
            angular_res,
            intensities,
            valid,
        })
    }

    pub fn constant(radial_res: usize, angular_res: usize, value: f32) -> Self {
        let n = radial_res * angular_res;
        Self {
            radial_res,
            angular_res,
            intensities: vec![value; n],
            valid: vec![true; n],
        }
    }

    /// Builds a fully valid texture from `f(row, col)`.
    pub fn from_fn(radial_res: usize, angular_res: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut intensities = Vec::with_capacity(radial_res * angular_res);
        for i in 0..radial_res {
            for j in 0..angular_res {
                intensities.push(f(i, j));
            }
        }
        Self {
            radial_res,
            angular_res,
            valid: vec![true; intensities.len()],
            intensities,
        }
    }

    pub fn radial_res(&self) -> usize {
        self.radial_res
    }

    pub fn angular_res(&self) -> usize {
        self.angular_res
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn valid_cells(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.intensities[row * self.angular_res + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.angular_res + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Texture rolled by `shift` columns: `out[i][j] = self[i][j + shift]`.
    pub fn rotate_columns(&self, shift: isize) -> Self {
        let a = self.angular_res as isize;
        Self::remap(self, |i, j| (i, (j as isize + shift).rem_euclid(a) as usize))
    }

    fn remap(&self, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut out = self.clone();
        for i in 0..self.radial_res {
            for j in 0..self.angular_res {
                let (si, sj) = src(i, j);
                let k = si * self.angular_res + sj;
                out.intensities[i * self.angular_res + j] = self.intensities[k];
                out.valid[i * self.angular_res + j] = self.valid[k];
            }
        }
        out
    }

    /// Mean and population standard deviation over valid cells.
    pub fn valid_stats(&self) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .intensities
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(&x, _)| x as f64)
            .collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }

    /// Bilinear lookup at fractional (row, col); columns wrap, rows clamp.
    /// Returns `None` if any contributing cell is invalid.
    pub fn sample(&self, row: f64, col: f64) -> Option<f64> {
        let rmax = (self.radial_res - 1) as f64;
        let row = row.clamp(0.0, rmax);
        let a = self.angular_res as f64;
        let col = col.rem_euclid(a);
        let r0 = (row.floor() as usize).min(self.radial_res - 1);
        let r1 = (r0 + 1).min(self.radial_res - 1);
        let c0 = (col.floor() as usize) % self.angular_res;
        let c1 = (c0 + 1) % self.angular_res;
        let fr = row - r0 as f64;
        let fc = col - col.floor();
        let idx = |r: usize, c: usize| r * self.angular_res + c;
        let cells = [idx(r0, c0), idx(r0, c1), idx(r1, c0), idx(r1, c1)];
        if cells.iter().any(|&k| !self.valid[k]) {
            return None;
        }
        let v = |k: usize| self.intensities[k] as f64;
        let top = v(cells[0]) + (v(cells[1]) - v(cells[0])) * fc;
        let bottom = v(cells[2]) + (v(cells[3]) - v(cells[2])) * fc;
        Some(top + (bottom - top) * fr)
    }

    /// Binary layout: magic `IRPT`, radial and angular resolution as
    /// little-endian u32, row-major little-endian f32 intensities, then the
    /// validity flags packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.intensities.len();
        let mut out = Vec::with_capacity(12 + 4 * n + n.div_ceil(8));
        out.extend_from_slice(TEXTURE_MAGIC);
        out.extend_from_slice(&(self.radial_res as u32).to_le_bytes());
        out.extend_from_slice(&(self.angular_res as u32).to_le_bytes());
        for v in &self.intensities {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(&self.valid));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RubberSheetError> {
        let bad = |m: &str| RubberSheetError::MalformedFile(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != TEXTURE_MAGIC {
            return Err(bad("missing IRPT magic"));
        }
        let radial = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let angular = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = radial
            .checked_mul(angular)
            .ok_or_else(|| bad("resolution overflow"))?;
        let expected = 12 + 4 * n + n.div_ceil(8);
        if bytes.len() != expected {
            return Err(RubberSheetError::MalformedFile(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let intensities = bytes[12..12 + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let valid = unpack_bits(&bytes[12 + 4 * n..], n);
        Self::new(radial, angular, intensities, valid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RubberSheetError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| RubberSheetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RubberSheetError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| RubberSheetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Source point for normalised radius `rho` at angle `theta`: a linear blend
/// of the pupil and limbus boundary points.
#[inline]
fn sheet_point(geom: &IrisGeometry, rho: f64, cos_t: f64, sin_t: f64) -> PixelPoint {
    let px = geom.pupil.center.x + geom.pupil.radius * cos_t;
    let py = geom.pupil.center.y + geom.pupil.radius * sin_t;
    let lx = geom.limbus.center.x + geom.limbus.radius * cos_t;
    let ly = geom.limbus.center.y + geom.limbus.radius * sin_t;
    PixelPoint::new((1.0 - rho) * px + rho * lx, (1.0 - rho) * py + rho * ly)
}

pub fn unwrap(
    img: &GrayImage,
    geom: &IrisGeometry,
    radial_res: usize,
    angular_res: usize,
) -> Result<PolarTexture, RubberSheetError> {
    geom.validate()?;
    if radial_res < 2 || angular_res < 4 {
        return Err(RubberSheetError::BadResolution {
            radial: radial_res,
            angular: angular_res,
        });
    }
    let n = radial_res * angular_res;
    let mut intensities = vec![0f32; n];
    let mut valid = vec![false; n];
    for j in 0..angular_res {
        let theta = 2.0 * PI * j as f64 / angular_res as f64;
        let (s, c) = theta.sin_cos();
        for i in 0..radial_res {
            let rho = i as f64 / (radial_res - 1) as f64;
            let p = sheet_point(geom, rho, c, s);
            if let Ok(v) = img.bilinear_sample(p) {
                intensities[i * angular_res + j] = v as f32;
                valid[i * angular_res + j] = true;
            }
        }
    }
    Ok(PolarTexture {
        radial_res,
        angular_res,
        intensities,
        valid,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwapOptions {
    /// Remap the victim texture to the attacker's own iris mean/std first.
    pub match_intensity: bool,
}

#[derive(Debug, Clone)]
pub struct SwapOutput {
    pub image: GrayImage,
    /// Annulus pixels overwritten with victim texture.
    pub written: usize,
    /// Annulus pixels left untouched because the victim cell was invalid.
    pub fallback: usize,
}

impl SwapOutput {
    pub fn fill_ratio(&self) -> f64 {
        let total = self.written + self.fallback;
        if total == 0 {
            return 1.0;
        }
        self.written as f64 / total as f64
    }
}

/// Inverse rubber sheet: paints `victim` into the annulus of `attacker`.
/// Pixels outside the annulus are never modified.
pub fn swap_iris(
    attacker: &GrayImage,
    geom: &IrisGeometry,
    victim: &PolarTexture,
    opts: &SwapOptions,
) -> Result<SwapOutput, RubberSheetError> {
    geom.validate()?;
    let matched;
    let victim = if opts.match_intensity {
        let own = unwrap(attacker, geom, victim.radial_res, victim.angular_res)?;
        let (mean, std) = own
            .valid_stats()
            .ok_or(RubberSheetError::DegenerateTexture)?;
        matched = match_intensity(victim, mean, std)?;
        &matched
    } else {
        victim
    };

    let (w, h) = (attacker.width(), attacker.height());
    let lim = &geom.limbus;
    let x_lo = (lim.center.x - lim.radius).floor().max(0.0) as usize;
    let y_lo = (lim.center.y - lim.radius).floor().max(0.0) as usize;
    let x_hi = ((lim.center.x + lim.radius).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let y_hi = ((lim.center.y + lim.radius).ceil().max(0.0) as usize).min(h.saturating_sub(1));

    let mut image = attacker.clone();
    let (mut written, mut fallback) = (0, 0);
    let rows = (victim.radial_res - 1) as f64;
    let cols_per_rad = victim.angular_res as f64 / (2.0 * PI);
    let (pcx, pcy, rp) = (geom.pupil.center.x, geom.pupil.center.y, geom.pupil.radius);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (xf, yf) = (x as f64, y as f64);
            if !geom.in_annulus(xf, yf) {
                continue;
            }
            let dx = xf - pcx;
            let dy = yf - pcy;
            let d = dx.hypot(dy);
            let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (1.0, 0.0) };
            let d_l = geom.limbus_distance_along(ux, uy);
            let rho = if d_l > rp {
                ((d - rp) / (d_l - rp)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let theta = dy.atan2(dx).rem_euclid(2.0 * PI);
            match victim.sample(rho * rows, theta * cols_per_rad) {
                Some(v) => {
                    image.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                    written += 1;
                }
                None => fallback += 1,
            }
        }
    }
    Ok(SwapOutput {
        image,
        written,
        fallback,
    })
}

/// Affine remap of the valid cells to `target_mean` / `target_std`,
/// clamped to the 8-bit range.
pub fn match_intensity(
    victim: &PolarTexture,
    target_mean: f64,
    target_std: f64,
) -> Result<PolarTexture, RubberSheetError> {
    if victim.valid_count() < 2 {
        return Err(RubberSheetError::DegenerateTexture);
    }
    let (mean, std) = victim.valid_stats().ok_or(RubberSheetError::DegenerateTexture)?;
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(RubberSheetError::DegenerateTexture);
    }
    let scale = target_std / std;
    let mut out = victim.clone();
    for (v, &ok) in out.intensities.iter_mut().zip(&victim.valid) {
        if ok {
            *v = ((*v as f64 - mean) * scale + target_mean).clamp(0.0, 255.0) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{geometry_to_mask, Circle};

    fn concentric(rp: f64, rl: f64) -> IrisGeometry {
        IrisGeometry::new(
            Circle::new(160.0, 120.0, rp),
            Circle::new(160.0, 120.0, rl),
            320,
            240,
        )
    }

    /// Renders an annulus whose intensity is `f(rho, theta)`.
    fn render(geom: &IrisGeometry, f: impl Fn(f64, f64) -> f64) -> GrayImage {
        let mut img = GrayImage::filled(geom.frame_width, geom.frame_height, 200);
        for y in 0..geom.frame_height {
            for x in 0..geom.frame_width {
                let (xf, yf) = (x as f64, y as f64);
                if geom.pupil.contains(xf, yf) {
                    img.set(x, y, 30);
                } else if geom.limbus.contains(xf, yf) {
                    let dx = xf - geom.pupil.center.x;
                    let dy = yf - geom.pupil.center.y;
                    let rho = (dx.hypot(dy) - geom.pupil.radius)
                        / (geom.limbus.radius - geom.pupil.radius);
                    let theta = dy.atan2(dx).rem_euclid(2.0 * PI);
                    img.set(x, y, f(rho, theta).round() as u8);
                }
            }
        }
        img
    }

    #[test]
    fn radially_symmetric_rows_are_constant() {
        let geom = concentric(30.0, 90.0);
        let img = render(&geom, |rho, _| 80.0 + 100.0 * rho);
        let tex = unwrap(&img, &geom, 64, 512).unwrap();
        // boundary rows blend in pupil/sclera pixels
        for i in 2..62 {
            let row: Vec<f32> = (0..512).map(|j| tex.value(i, j)).collect();
            let lo = row.iter().cloned().fold(f32::MAX, f32::min);
            let hi = row.iter().cloned().fold(f32::MIN, f32::max);
            let mean = row.iter().sum::<f32>() / 512.0;
            assert!(
                row.iter().all(|v| (v - mean).abs() <= 1.0 + 1e-3) || hi - lo <= 2.0,
                "row {i}: [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn angular_stripes_columns_are_constant() {
        let geom = concentric(30.0, 90.0);
        let stripe = |theta: f64| if (theta / (PI / 8.0)).floor() as i64 % 2 == 0 { 90.0 } else { 170.0 };
        let img = render(&geom, |_, theta| stripe(theta));
        let tex = unwrap(&img, &geom, 64, 512).unwrap();
        for j in 0..512 {
            let theta = 2.0 * PI * j as f64 / 512.0;
            let edge = PI / 8.0;
            let phase = (theta / edge).fract().min(1.0 - (theta / edge).fract()) * edge;
            // at least ~1.5 px from a stripe edge on the inner ring
            if phase * 31.0 < 1.5 {
                continue;
            }
            let expected = stripe(theta) as f32;
            for i in 2..62 {
                assert!(
                    (tex.value(i, j) - expected).abs() <= 1.0,
                    "cell ({i},{j}) = {} vs {expected}",
                    tex.value(i, j)
                );
            }
        }
    }

    #[test]
    fn clipped_limbus_marks_exact_angular_span() {
        // limbus crosses the right frame border
        let geom = IrisGeometry::new(
            Circle::new(270.0, 120.0, 25.0),
            Circle::new(270.0, 120.0, 70.0),
            320,
            240,
        );
        let img = GrayImage::filled(320, 240, 100);
        let tex = unwrap(&img, &geom, 64, 512).unwrap();
        let wmax = 319.0;
        for i in 0..64 {
            let rho = i as f64 / 63.0;
            let radius = 25.0 + rho * 45.0;
            for j in 0..512 {
                let theta = 2.0 * PI * j as f64 / 512.0;
                let visible = 270.0 + radius * theta.cos() <= wmax;
                assert_eq!(tex.is_valid(i, j), visible, "cell ({i},{j})");
            }
        }
        assert!(tex.valid_count() < 64 * 512);
    }

    #[test]
    fn constant_victim_fills_annulus_only() {
        let geom = concentric(28.0, 70.0);
        let img = render(&geom, |rho, theta| 90.0 + 40.0 * rho + 20.0 * theta.sin());
        let victim = PolarTexture::constant(64, 512, 200.0);
        let out = swap_iris(&img, &geom, &victim, &SwapOptions::default()).unwrap();
        let mask = geometry_to_mask(&geom);
        for y in 0..240 {
            for x in 0..320 {
                if mask.get(x, y) {
                    assert_eq!(out.image.get(x, y), 200);
                } else {
                    assert_eq!(out.image.get(x, y), img.get(x, y));
                }
            }
        }
        assert_eq!(out.fallback, 0);
        assert_eq!(out.written, mask.area());
    }

    #[test]
    fn invalid_victim_cells_fall_back() {
        let geom = concentric(28.0, 70.0);
        let img = render(&geom, |_, _| 111.0);
        let mut victim = PolarTexture::constant(64, 512, 222.0);
        for j in 0..256 {
            for i in 0..64 {
                victim.valid[i * 512 + j] = false;
            }
        }
        let out = swap_iris(&img, &geom, &victim, &SwapOptions::default()).unwrap();
        assert!(out.fallback > 0 && out.written > 0);
        let r = out.fill_ratio();
        assert!(r > 0.4 && r < 0.6, "{r}");
        // lower half (theta in (0, pi)) keeps the attacker texture
        assert_eq!(out.image.get(160, 120 + 50), 111);
        assert_eq!(out.image.get(160, 120 - 50), 222);
    }

    #[test]
    fn swap_rejects_invalid_geometry() {
        let img = GrayImage::filled(320, 240, 0);
        let bad = concentric(50.0, 40.0);
        assert!(matches!(
            swap_iris(&img, &bad, &PolarTexture::constant(8, 16, 1.0), &SwapOptions::default()),
            Err(RubberSheetError::InvalidGeometry(_))
        ));
        assert!(unwrap(&img, &bad, 64, 512).is_err());
    }

    #[test]
    fn swap_is_deterministic() {
        let geom = concentric(25.0, 66.0);
        let img = render(&geom, |rho, theta| 100.0 + 50.0 * (5.0 * theta).sin() * rho);
        let victim = PolarTexture::from_fn(64, 512, |i, j| (80 + (i * 7 + j * 3) % 90) as f32);
        let a = swap_iris(&img, &geom, &victim, &SwapOptions::default()).unwrap();
        let b = swap_iris(&img, &geom, &victim, &SwapOptions::default()).unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn match_intensity_examples() {
        // values 80 and 120 alternate: mean 100, std 20
        let tex = PolarTexture::from_fn(4, 8, |i, j| if (i + j) % 2 == 0 { 80.0 } else { 120.0 });
        let (m, s) = tex.valid_stats().unwrap();
        assert!((m - 100.0).abs() < 1e-9 && (s - 20.0).abs() < 1e-9);
        let shifted = match_intensity(&tex, 128.0, 20.0).unwrap();
        for (a, b) in shifted.intensities().iter().zip(tex.intensities()) {
            assert!((a - b - 28.0).abs() < 1e-4);
        }
        let same = match_intensity(&tex, m, s).unwrap();
        for (a, b) in same.intensities().iter().zip(tex.intensities()) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(matches!(
            match_intensity(&PolarTexture::constant(4, 8, 50.0), 100.0, 10.0),
            Err(RubberSheetError::DegenerateTexture)
        ));
    }

    #[test]
    fn match_intensity_clamps() {
        let tex = PolarTexture::from_fn(4, 8, |_, j| j as f32 * 30.0);
        let out = match_intensity(&tex, 250.0, 100.0).unwrap();
        assert!(out.intensities().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn texture_file_round_trip() {
        let mut tex = PolarTexture::from_fn(5, 12, |i, j| (i * 12 + j) as f32 * 0.37);
        tex.valid[7] = false;
        tex.valid[59] = false;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("victim.ptex");
        tex.save(&path).unwrap();
        assert_eq!(PolarTexture::load(&path).unwrap(), tex);
        let bytes = tex.to_bytes();
        assert!(PolarTexture::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(PolarTexture::from_bytes(b"NOPE\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn texture_sample_wraps_angle() {
        let tex = PolarTexture::from_fn(2, 4, |_, j| [0.0, 10.0, 20.0, 30.0][j]);
        assert_eq!(tex.sample(0.0, 3.5), Some(15.0));
        assert_eq!(tex.sample(0.0, -0.5), Some(15.0));
        assert_eq!(tex.sample(1.0, 4.0), Some(0.0));
    }
}
