//! Image and volume containers with their file formats.
//!
//! 2D images are binary PGM (P5, maxval 255). Label volumes are a flat byte
//! grid (x fastest, then y, then z) next to a JSON sidecar holding dims and
//! voxel spacing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("not a binary PGM: {0}")]
    BadPgm(String),
    #[error("label value {value} at index {index} outside the allowed set")]
    BadLabel { index: usize, value: u8 },
    #[error("grid length {actual} does not match dimensions (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimensions must be positive")]
    ZeroDimension,
    #[error("voxel spacing must be strictly positive")]
    BadSpacing,
    #[error("invalid sidecar: {0}")]
    BadSidecar(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, FormatError> {
        if width == 0 || height == 0 {
            return Err(FormatError::ZeroDimension);
        }
        if pixels.len() != width * height {
            return Err(FormatError::LengthMismatch { expected: width * height, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(FormatError::BadPgm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(FormatError::BadPgm(format!("magic `{}`", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| FormatError::BadPgm(format!("bad number `{s}`")));
        let width = parse(&fields[1])?;
        let height = parse(&fields[2])?;
        let maxval = parse(&fields[3])?;
        if maxval == 0 || maxval > 255 {
            return Err(FormatError::BadPgm(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let data = bytes.get(pos..).unwrap_or_default();
        if data.len() < width * height {
            return Err(FormatError::LengthMismatch { expected: width * height, actual: data.len() });
        }
        GrayImage::new(width, height, data[..width * height].to_vec())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_pgm(&std::fs::read(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_pgm()).map_err(io_err(path))
    }

    /// Copies the pixels inside `region` (exclusive upper bounds).
    pub fn crop(&self, region: &CropRegion) -> GrayImage {
        let w = region.x1 - region.x0;
        let h = region.y1 - region.y0;
        let mut pixels = Vec::with_capacity(w * h);
        for y in region.y0..region.y1 {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + region.x0..row + region.x1]);
        }
        GrayImage { width: w, height: h, pixels }
    }
}

pub mod label2d {
    pub const BACKGROUND: u8 = 0;
    pub const DISC: u8 = 1;
    pub const CUP: u8 = 2;
}

/// Optic disc / cup segmentation: 0 background, 1 disc, 2 cup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    image: GrayImage,
}

impl Mask2D {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, FormatError> {
        let image = GrayImage::new(width, height, labels)?;
        Self::from_image(image)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { image: GrayImage::filled(width, height, label2d::BACKGROUND) }
    }

    pub fn from_image(image: GrayImage) -> Result<Self, FormatError> {
        if let Some((index, &value)) = image.pixels.iter().enumerate().find(|(_, &v)| v > label2d::CUP) {
            return Err(FormatError::BadLabel { index, value });
        }
        Ok(Self { image })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.image.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.image.get(x, y)
    }

    /// Panics on a label outside {0, 1, 2}.
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        assert!(label <= label2d::CUP, "label {label} out of range");
        self.image.set(x, y, label);
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        self.image.to_pgm()
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, FormatError> {
        Self::from_image(GrayImage::from_pgm(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_image(GrayImage::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        self.image.save(path)
    }
}

/// Pixel rectangle with exclusive upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

pub mod label3d {
    pub const BACKGROUND: u8 = 0;
    pub const MYOCARDIUM: u8 = 1;
    pub const LV_CAVITY: u8 = 2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

/// Voxel grid; `labels` is either a label map or raw intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub labels: Vec<u8>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self, FormatError> {
        if dims.contains(&0) {
            return Err(FormatError::ZeroDimension);
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(FormatError::BadSpacing);
        }
        let expected = dims[0] * dims[1] * dims[2];
        if labels.len() != expected {
            return Err(FormatError::LengthMismatch { expected, actual: labels.len() });
        }
        Ok(Self { dims, spacing, labels })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, FormatError> {
        Self::new(dims, spacing, vec![0; dims[0] * dims[1] * dims[2]])
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u8) {
        let i = self.index(x, y, z);
        self.labels[i] = value;
    }

    /// Rejects voxel values outside {0, 1, 2}.
    pub fn check_labels(&self) -> Result<(), FormatError> {
        match self.labels.iter().enumerate().find(|(_, &v)| v > label3d::LV_CAVITY) {
            Some((index, &value)) => Err(FormatError::BadLabel { index, value }),
            None => Ok(()),
        }
    }

    pub fn sidecar(&self, with_labels: bool) -> VolumeSidecar {
        let labels = if with_labels {
            BTreeMap::from([
                ("1".to_string(), "myocardium".to_string()),
                ("2".to_string(), "lv_cavity".to_string()),
            ])
        } else {
            BTreeMap::new()
        };
        VolumeSidecar { dims: self.dims, spacing_mm: self.spacing, labels }
    }

    /// Sidecar path for a grid file: same stem, `.json` extension.
    pub fn sidecar_path(grid: &Path) -> PathBuf {
        grid.with_extension("json")
    }

    pub fn save(&self, grid: &Path, with_labels: bool) -> Result<(), FormatError> {
        std::fs::write(grid, &self.labels).map_err(io_err(grid))?;
        let side = Self::sidecar_path(grid);
        let text = serde_json::to_string_pretty(&self.sidecar(with_labels))?;
        std::fs::write(&side, text).map_err(io_err(&side))
    }

    pub fn load(grid: &Path) -> Result<Self, FormatError> {
        let side = Self::sidecar_path(grid);
        let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
        let meta: VolumeSidecar = serde_json::from_str(&text)?;
        let labels = std::fs::read(grid).map_err(io_err(grid))?;
        Self::new(meta.dims, meta.spacing_mm, labels)
    }

    pub fn load_labels(grid: &Path) -> Result<Self, FormatError> {
        let v = Self::load(grid)?;
        v.check_labels()?;
        Ok(v)
    }
}
