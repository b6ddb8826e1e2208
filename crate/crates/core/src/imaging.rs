//! Grayscale frames, binary PGM I/O and subpixel sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Smallest frame side accepted by the vision stages.
pub const MIN_PIPELINE_SIDE: usize = 32;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sample point ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("pixel buffer of length {len} does not match {width}x{height}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("frame {width}x{height} is smaller than the {min}x{min} pipeline minimum")]
    DegenerateFrame {
        width: usize,
        height: usize,
        min: usize,
    },
}

/// Subpixel image coordinate; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// 8-bit grayscale frame stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::DimensionMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Rejects frames too small for segmentation and warping.
    pub fn ensure_pipeline_size(&self) -> Result<(), ImagingError> {
        if self.width < MIN_PIPELINE_SIDE || self.height < MIN_PIPELINE_SIDE {
            return Err(ImagingError::DegenerateFrame {
                width: self.width,
                height: self.height,
                min: MIN_PIPELINE_SIDE,
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Bilinear blend of the four pixels around `p`. Points outside
    /// `[0, width-1] x [0, height-1]` are rejected rather than clamped.
    pub fn bilinear_sample(&self, p: PixelPoint) -> Result<f64, ImagingError> {
        if !p.is_finite() || self.width == 0 || self.height == 0 || !self.contains(p) {
            return Err(ImagingError::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.sample_unchecked(p.x, p.y))
    }

    /// Bilinear sample without the bounds check; callers guarantee the point
    /// lies inside the frame.
    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64, y: f64) -> f64 {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let p00 = self.pixels[row0 + x0] as f64;
        let p10 = self.pixels[row0 + x1] as f64;
        let p01 = self.pixels[row1 + x0] as f64;
        let p11 = self.pixels[row1 + x1] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Encodes the frame as binary PGM (P5, maxval 255).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, ImagingError> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor
            .token()
            .ok_or_else(|| ImagingError::MalformedHeader("empty file".into()))?;
        if magic != b"P5" {
            return Err(ImagingError::MalformedHeader(format!(
                "expected magic P5, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(ImagingError::MalformedHeader(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if maxval != 255 {
            return Err(ImagingError::UnsupportedMaxval(maxval as u32));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            Some(_) => {
                return Err(ImagingError::MalformedHeader(
                    "missing whitespace after maxval".into(),
                ))
            }
            None => {
                return Err(ImagingError::TruncatedPayload {
                    expected: width * height,
                    found: 0,
                })
            }
        }
        let expected = width * height;
        let payload = &bytes[cursor.pos..];
        if payload.len() < expected {
            return Err(ImagingError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels: payload[..expected].to_vec(),
        })
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize, ImagingError> {
        let tok = self
            .token()
            .ok_or_else(|| ImagingError::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                ImagingError::MalformedHeader(format!(
                    "invalid {what} {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImagingError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    GrayImage::from_pgm_bytes(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let io_err = |source| ImagingError::IoFailure {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&img.to_pgm_bytes()).map_err(io_err)?;
    Ok(())
}
