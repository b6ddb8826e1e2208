//! Gabor phase iris codes and rotation-tolerant Hamming-distance matching.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rubbersheet::{pack_bits, unpack_bits, PolarTexture};

pub const DEFAULT_THRESHOLD: f64 = 0.37;
pub const DEFAULT_MAX_SHIFT: usize = 8;
/// Minimum usable-bit fraction for a template or a comparison.
pub const MIN_MASK_FRACTION: f64 = 0.25;

const TEMPLATE_MAGIC: &[u8; 4] = b"IRTM";

#[derive(Debug, Error)]
pub enum IrisCodeError {
    #[error("texture {radial}x{angular} smaller than the filter footprint")]
    TextureTooSmall { radial: usize, angular: usize },
    #[error("template geometry {a:?} does not match {b:?}")]
    GeometryMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("insufficient usable bits for comparison")]
    InsufficientMask,
    #[error("malformed template file: {0}")]
    MalformedFile(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub bands: usize,
    pub angular_positions: usize,
    /// Carrier wavelength in texture columns.
    pub wavelength: f64,
    /// Angular Gaussian sigma as a fraction of the wavelength.
    pub sigma_ratio: f64,
    /// Radial Gaussian sigma as a fraction of the band height.
    pub radial_sigma_ratio: f64,
    /// Minimum response magnitude as a fraction of the texture range.
    pub min_magnitude_fraction: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            bands: 8,
            angular_positions: 128,
            wavelength: 18.0,
            sigma_ratio: 0.5,
            radial_sigma_ratio: 0.5,
            min_magnitude_fraction: 1e-3,
        }
    }
}

/// Two phase bits per (band, angular position) cell plus a usability mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisTemplate {
    bands: usize,
    angular_positions: usize,
    code: Vec<bool>,
    mask: Vec<bool>,
}

impl IrisTemplate {
    pub fn new(
        bands: usize,
        angular_positions: usize,
        code: Vec<bool>,
        mask: Vec<bool>,
    ) -> Result<Self, IrisCodeError> {
        let n = 2 * bands * angular_positions;
        if n == 0 || code.len() != n || mask.len() != n {
            return Err(IrisCodeError::MalformedFile(format!(
                "expected {n} code and mask bits, found {} / {}",
                code.len(),
                mask.len()
            )));
        }
        Ok(Self {
            bands,
            angular_positions,
            code,
            mask,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn angular_positions(&self) -> usize {
        self.angular_positions
    }

    pub fn bit_len(&self) -> usize {
        self.code.len()
    }

    pub fn code(&self) -> &[bool] {
        &self.code
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    #[inline]
    fn index(&self, band: usize, pos: usize, bit: usize) -> usize {
        (band * self.angular_positions + pos) * 2 + bit
    }

    /// Complement of the code bits with the mask kept.
    pub fn complement(&self) -> Self {
        Self {
            code: self.code.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    /// Template whose position `p` holds this template's position `p + shift`.
    pub fn rotated(&self, shift: isize) -> Self {
        let p = self.angular_positions as isize;
        let mut code = vec![false; self.code.len()];
        let mut mask = vec![false; self.mask.len()];
        for band in 0..self.bands {
            for pos in 0..self.angular_positions {
                let src = (pos as isize + shift).rem_euclid(p) as usize;
                for bit in 0..2 {
                    code[self.index(band, pos, bit)] = self.code[self.index(band, src, bit)];
                    mask[self.index(band, pos, bit)] = self.mask[self.index(band, src, bit)];
                }
            }
        }
        Self {
            code,
            mask,
            ..*self
        }
    }

    /// Layout: magic `IRTM`, bands and angular positions as little-endian
    /// u32, then code bits and mask bits, each packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TEMPLATE_MAGIC);
        out.extend_from_slice(&(self.bands as u32).to_le_bytes());
        out.extend_from_slice(&(self.angular_positions as u32).to_le_bytes());
        out.extend_from_slice(&pack_bits(&self.code));
        out.extend_from_slice(&pack_bits(&self.mask));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IrisCodeError> {
        if bytes.len() < 12 || &bytes[..4] != TEMPLATE_MAGIC {
            return Err(IrisCodeError::MalformedFile("missing IRTM magic".into()));
        }
        let bands = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let positions = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = 2 * bands * positions;
        let packed = n.div_ceil(8);
        if bytes.len() != 12 + 2 * packed {
            return Err(IrisCodeError::MalformedFile(format!(
                "expected {} bytes, found {}",
                12 + 2 * packed,
                bytes.len()
            )));
        }
        let code = unpack_bits(&bytes[12..12 + packed], n);
        let mask = unpack_bits(&bytes[12 + packed..], n);
        Self::new(bands, positions, code, mask)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IrisCodeError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| IrisCodeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IrisCodeError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| IrisCodeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct BandKernel {
    rows: std::ops::Range<usize>,
    /// `[row][dj + half]` real / imaginary weights.
    re: Vec<f64>,
    im: Vec<f64>,
}

fn band_kernels(radial_res: usize, params: &GaborParams) -> (Vec<BandKernel>, usize) {
    let band_height = radial_res as f64 / params.bands as f64;
    let sigma_a = params.sigma_ratio * params.wavelength;
    let half = (3.0 * sigma_a).ceil() as usize;
    let width = 2 * half + 1;
    let sigma_r = (params.radial_sigma_ratio * band_height).max(1e-6);
    let kernels = (0..params.bands)
        .map(|b| {
            let lo = (b as f64 * band_height).floor() as usize;
            let hi = (((b + 1) as f64 * band_height).floor() as usize).min(radial_res);
            let centre = (b as f64 + 0.5) * band_height - 0.5;
            let rows = lo..hi.max(lo + 1);
            let n = rows.len() * width;
            let mut env = Vec::with_capacity(n);
            let mut re = Vec::with_capacity(n);
            let mut im = Vec::with_capacity(n);
            for r in rows.clone() {
                let dr = r as f64 - centre;
                for k in 0..width {
                    let dj = k as f64 - half as f64;
                    let e = (-dr * dr / (2.0 * sigma_r * sigma_r)
                        - dj * dj / (2.0 * sigma_a * sigma_a))
                        .exp();
                    let phase = 2.0 * PI * dj / params.wavelength;
                    env.push(e);
                    re.push(e * phase.cos());
                    im.push(e * phase.sin());
                }
            }
            // remove the DC response so flat regions give zero output
            let env_sum: f64 = env.iter().sum();
            let dc = re.iter().sum::<f64>() / env_sum;
            for (r, e) in re.iter_mut().zip(&env) {
                *r = (*r - dc * e) / env_sum;
            }
            for v in im.iter_mut() {
                *v /= env_sum;
            }
            BandKernel { rows, re, im }
        })
        .collect();
    (kernels, half)
}

/// Quantises the phase of 2D Gabor responses into two bits per cell.
pub fn encode(tex: &PolarTexture, params: &GaborParams) -> Result<IrisTemplate, IrisCodeError> {
    let (radial, angular) = (tex.radial_res(), tex.angular_res());
    let half = (3.0 * params.sigma_ratio * params.wavelength).ceil() as usize;
    if params.bands == 0
        || params.angular_positions == 0
        || radial < params.bands
        || angular < 2 * half + 1
        || angular < params.angular_positions
    {
        return Err(IrisCodeError::TextureTooSmall { radial, angular });
    }
    let (kernels, half) = band_kernels(radial, params);
    let width = 2 * half + 1;

    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for (&v, &ok) in tex.intensities().iter().zip(tex.valid_cells()) {
        if ok {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
    }
    let range = if hi >= lo { hi - lo } else { 0.0 };
    let min_mag = params.min_magnitude_fraction * range;

    let n = 2 * params.bands * params.angular_positions;
    let mut code = vec![false; n];
    let mut mask = vec![false; n];
    for (b, kernel) in kernels.iter().enumerate() {
        for p in 0..params.angular_positions {
            let centre = ((p * angular) as f64 / params.angular_positions as f64).round() as usize;
            let (mut sre, mut sim) = (0.0, 0.0);
            let mut usable = true;
            'rows: for (ri, r) in kernel.rows.clone().enumerate() {
                for k in 0..width {
                    let col = (centre + angular + k - half) % angular;
                    if !tex.is_valid(r, col) {
                        usable = false;
                        break 'rows;
                    }
                    let v = tex.value(r, col) as f64;
                    sre += v * kernel.re[ri * width + k];
                    sim += v * kernel.im[ri * width + k];
                }
            }
            let idx = (b * params.angular_positions + p) * 2;
            code[idx] = sre >= 0.0;
            code[idx + 1] = sim >= 0.0;
            let ok = usable && range > 0.0 && sre.hypot(sim) > min_mag;
            mask[idx] = ok;
            mask[idx + 1] = ok;
        }
    }
    IrisTemplate::new(params.bands, params.angular_positions, code, mask)
}

/// Fractional Hamming distance minimised over angular shifts in
/// `[-max_shift, max_shift]`.
pub fn hamming_distance(a: &IrisTemplate, b: &IrisTemplate, max_shift: usize) -> Result<f64, IrisCodeError> {
    if a.bands != b.bands || a.angular_positions != b.angular_positions {
        return Err(IrisCodeError::GeometryMismatch {
            a: (a.bands, a.angular_positions),
            b: (b.bands, b.angular_positions),
        });
    }
    if a.coverage() < MIN_MASK_FRACTION || b.coverage() < MIN_MASK_FRACTION {
        return Err(IrisCodeError::InsufficientMask);
    }
    let total = a.bit_len();
    let min_joint = (MIN_MASK_FRACTION * total as f64).ceil() as usize;
    let positions = a.angular_positions as isize;
    let max_shift = (max_shift as isize).min(positions / 2);
    let mut best: Option<f64> = None;
    for shift in -max_shift..=max_shift {
        let (mut joint, mut differ) = (0usize, 0usize);
        for band in 0..a.bands {
            for pos in 0..a.angular_positions {
                let src = (pos as isize + shift).rem_euclid(positions) as usize;
                for bit in 0..2 {
                    let ia = a.index(band, pos, bit);
                    let ib = b.index(band, src, bit);
                    if a.mask[ia] && b.mask[ib] {
                        joint += 1;
                        differ += (a.code[ia] != b.code[ib]) as usize;
                    }
                }
            }
        }
        if joint >= min_joint {
            let hd = differ as f64 / joint as f64;
            best = Some(best.map_or(hd, |b: f64| b.min(hd)));
        }
    }
    best.ok_or(IrisCodeError::InsufficientMask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Accepts strictly below the threshold.
pub fn decide(hd: f64, threshold: f64) -> Decision {
    if hd < threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthResult {
    pub hd: f64,
    pub decision: Decision,
}

pub fn authenticate(
    probe: &IrisTemplate,
    enrolled: &IrisTemplate,
    threshold: f64,
    max_shift: usize,
) -> Result<AuthResult, IrisCodeError> {
    let hd = hamming_distance(probe, enrolled, max_shift)?;
    Ok(AuthResult {
        hd,
        decision: decide(hd, threshold),
    })
}
