//! Images, PNG I/O, and the context-based sampling prior.
//!
//! The prior assigns every pixel a weight from the local color variation
//! in a small window around it: flat regions (background, walls) get tiny
//! weights, edges and texture get large ones. Training draws most of its
//! rays from the high-weight pixels.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: unsupported pixel format, expected 8-bit RGB or RGBA")]
    UnsupportedFormat { path: String },
    #[error("probability map weights must be nonnegative and finite")]
    InvalidWeights,
    #[error("probability map has zero total mass")]
    ZeroMass,
    #[error("weight count {got} does not match {width}x{height}")]
    WeightCountMismatch { got: usize, width: u32, height: u32 },
}

/// An H×W RGB raster with channels in `[0, 1]`, stored row-major.
///
/// Pixel coordinates follow image-matrix convention: `u` is the row
/// (0 at the top) and `v` the column.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Image {
        assert_eq!(
            data.len(),
            (width as usize) * (height as usize) * 3,
            "image data length must be width*height*3"
        );
        assert!(
            data.iter().all(|c| (0.0..=1.0).contains(c)),
            "image channels must lie in [0,1]"
        );
        Image { width, height, data }
    }

    /// Builds an image by evaluating `f(u, v)` per pixel; channels are
    /// clamped to `[0, 1]` so renderer rounding cannot break the invariant.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Vec3) -> Image {
        let mut data = Vec::with_capacity((width as usize) * (height as usize) * 3);
        for u in 0..height {
            for v in 0..width {
                let c = f(u, v);
                data.push(c.x.clamp(0.0, 1.0));
                data.push(c.y.clamp(0.0, 1.0));
                data.push(c.z.clamp(0.0, 1.0));
            }
        }
        Image { width, height, data }
    }

    pub fn constant(width: u32, height: u32, color: Vec3) -> Image {
        Image::from_fn(width, height, |_, _| color)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> Vec3 {
        debug_assert!(u < self.height && v < self.width);
        let i = 3 * (u as usize * self.width as usize + v as usize);
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set(&mut self, u: u32, v: u32, color: Vec3) {
        debug_assert!(u < self.height && v < self.width);
        let i = 3 * (u as usize * self.width as usize + v as usize);
        self.data[i] = color.x.clamp(0.0, 1.0);
        self.data[i + 1] = color.y.clamp(0.0, 1.0);
        self.data[i + 2] = color.z.clamp(0.0, 1.0);
    }

    /// Mean of |a-b|^2 over all pixels and channels.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}

/// How local color variation is measured when building the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    StdDev,
    Variance,
    Entropy,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::StdDev => "std-dev",
            MetricKind::Variance => "variance",
            MetricKind::Entropy => "entropy",
        };
        f.write_str(s)
    }
}

impl FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "std-dev" => Ok(MetricKind::StdDev),
            "variance" => Ok(MetricKind::Variance),
            "entropy" => Ok(MetricKind::Entropy),
            other => Err(format!(
                "unknown context metric {other:?}, expected std-dev, variance or entropy"
            )),
        }
    }
}

pub const SUPPORTED_PATCH_SIZES: [u32; 4] = [3, 5, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ContextMetric {
    pub kind: MetricKind,
    /// Odd window side length; one of 3, 5, 7, 9.
    pub patch: u32,
}

impl ContextMetric {
    pub fn new(kind: MetricKind, patch: u32) -> Result<ContextMetric, String> {
        if !SUPPORTED_PATCH_SIZES.contains(&patch) {
            return Err(format!("patch size must be one of {SUPPORTED_PATCH_SIZES:?}, got {patch}"));
        }
        Ok(ContextMetric { kind, patch })
    }
}

impl Default for ContextMetric {
    fn default() -> Self {
        ContextMetric { kind: MetricKind::StdDev, patch: 3 }
    }
}

/// A per-pixel scalar field aligned with an image (raw context values).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl ScalarMap {
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[u as usize * self.width as usize + v as usize]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Normalized per-pixel sampling weights, all strictly positive.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    weights: Vec<f64>,
    total: f64,
}

impl ProbabilityMap {
    /// Direct construction from raw weights; the normal route is
    /// [`normalize`]. Weights must be finite, nonnegative, and not all zero.
    pub fn from_weights(width: u32, height: u32, weights: Vec<f64>) -> Result<Self, ImagingError> {
        if weights.len() != (width as usize) * (height as usize) {
            return Err(ImagingError::WeightCountMismatch { got: weights.len(), width, height });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ImagingError::InvalidWeights);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ImagingError::ZeroMass);
        }
        Ok(ProbabilityMap { width, height, weights, total })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.weights[u as usize * self.width as usize + v as usize]
    }

    /// Writes the map as a grayscale PNG, weight 1.0 -> byte 255.
    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let mut img = image::GrayImage::new(self.width, self.height);
        for (i, px) in img.pixels_mut().enumerate() {
            px.0 = [(self.weights[i].clamp(0.0, 1.0) * 255.0).round() as u8];
        }
        img.save(path).map_err(|source| ImagingError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Replicate-padded copy of a per-pixel scalar field, sized so every
/// window of the given radius reads without bounds checks. A window sum
/// is computed locally from the same values in the same order wherever
/// the window sits, which keeps the map exactly translation-equivariant
/// and free of large-term cancellation.
struct PaddedField {
    data: Vec<f64>,
    stride: usize,
    radius: usize,
}

impl PaddedField {
    /// `value(u, v)` is evaluated once per original pixel; the border is
    /// clamp-to-edge replicated.
    fn build(width: u32, height: u32, radius: u32, value: impl Fn(u32, u32) -> f64) -> PaddedField {
        let (w, h, r) = (width as i64, height as i64, radius as i64);
        let stride = (w + 2 * r) as usize;
        let mut data = vec![0.0; stride * (h + 2 * r) as usize];
        for up in 0..(h + 2 * r) as usize {
            for vp in 0..stride {
                let uu = (up as i64 - r).clamp(0, h - 1) as u32;
                let vv = (vp as i64 - r).clamp(0, w - 1) as u32;
                data[up * stride + vp] = value(uu, vv);
            }
        }
        PaddedField { data, stride, radius: radius as usize }
    }

    /// Sum of the (2r+1)² window centered on original-image pixel (u, v).
    fn window_sum(&self, u: u32, v: u32) -> f64 {
        let span = 2 * self.radius + 1;
        let mut acc = 0.0;
        for du in 0..span {
            let row = (u as usize + du) * self.stride + v as usize;
            for dv in 0..span {
                acc += self.data[row + dv];
            }
        }
        acc
    }
}

fn entropy_density(c: Vec3) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(c.x) + term(c.y) + term(c.z)
}

/// Raw context map: per-pixel local color variation in a `patch`-sized
/// window. Std-dev and variance treat the window colors as RGB vectors
/// (squared deviations summed over channels, divided by the window pixel
/// count); entropy sums `-c ln c` over window pixels and channels.
/// Borders are handled by replicate padding.
pub fn context_map(image: &Image, metric: ContextMetric) -> ScalarMap {
    let (w, h) = (image.width(), image.height());
    let radius = metric.patch / 2;
    let n = ((metric.patch as u64) * (metric.patch as u64)) as f64;

    let mut values = vec![0.0; (w as usize) * (h as usize)];
    match metric.kind {
        MetricKind::StdDev | MetricKind::Variance => {
            let red = PaddedField::build(w, h, radius, |u, v| image.get(u, v).x);
            let green = PaddedField::build(w, h, radius, |u, v| image.get(u, v).y);
            let blue = PaddedField::build(w, h, radius, |u, v| image.get(u, v).z);
            let span = 2 * radius as usize + 1;
            let stride = red.stride;
            for u in 0..h {
                for v in 0..w {
                    let mut sum = Vec3::ZERO;
                    for du in 0..span {
                        let row = (u as usize + du) * stride + v as usize;
                        for dv in 0..span {
                            sum.x += red.data[row + dv];
                            sum.y += green.data[row + dv];
                            sum.z += blue.data[row + dv];
                        }
                    }
                    let mean = sum / n;
                    let mut dev = 0.0;
                    for du in 0..span {
                        let row = (u as usize + du) * stride + v as usize;
                        for dv in 0..span {
                            let d = Vec3::new(
                                red.data[row + dv] - mean.x,
                                green.data[row + dv] - mean.y,
                                blue.data[row + dv] - mean.z,
                            );
                            dev += d.dot(d);
                        }
                    }
                    let var = dev / n;
                    values[(u * w + v) as usize] = match metric.kind {
                        MetricKind::Variance => var,
                        _ => var.sqrt(),
                    };
                }
            }
        }
        MetricKind::Entropy => {
            let density = PaddedField::build(w, h, radius, |u, v| entropy_density(image.get(u, v)));
            for u in 0..h {
                for v in 0..w {
                    values[(u * w + v) as usize] = density.window_sum(u, v).max(0.0);
                }
            }
        }
    }
    ScalarMap { width: w, height: h, values }
}

/// Clamp-below-then-rescale normalization of a raw context map.
///
/// The floor `s = 0.01 * mean(g)` keeps every pixel sampleable; dividing
/// by `max(g)` puts the weights in `(0, 1]`. An all-zero map (blank image)
/// degenerates to uniform weight 1 everywhere.
pub fn normalize(g: &ScalarMap) -> ProbabilityMap {
    let max = g.max();
    let count = g.values.len();
    if max <= 0.0 {
        let weights = vec![1.0; count];
        return ProbabilityMap { width: g.width, height: g.height, weights, total: count as f64 };
    }
    let s = 0.01 * g.mean();
    let weights: Vec<f64> = g.values.iter().map(|&v| v.max(s) / max).collect();
    let total = weights.iter().sum();
    ProbabilityMap { width: g.width, height: g.height, weights, total }
}

/// Computes the normalized sampling prior for one image.
pub fn probability_map(image: &Image, metric: ContextMetric) -> ProbabilityMap {
    normalize(&context_map(image, metric))
}

pub fn load_png(path: &Path) -> Result<Image, ImagingError> {
    let decoded = image::open(path).map_err(|source| ImagingError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let (width, height, data) = match decoded {
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width(), img.height());
            let data = img.pixels().flat_map(|p| p.0.map(|b| b as f64 / 255.0)).collect();
            (w, h, data)
        }
        image::DynamicImage::ImageRgba8(img) => {
            let (w, h) = (img.width(), img.height());
            let mut data = Vec::with_capacity((w as usize) * (h as usize) * 3);
            for p in img.pixels() {
                // Synthetic-style inputs have white backgrounds, so
                // composite transparent pixels over white.
                let a = p.0[3] as f64 / 255.0;
                for ch in 0..3 {
                    let c = p.0[ch] as f64 / 255.0;
                    data.push(a * c + (1.0 - a));
                }
            }
            (w, h, data)
        }
        _ => {
            return Err(ImagingError::UnsupportedFormat { path: path.display().to_string() });
        }
    };
    Ok(Image::new(width, height, data))
}

pub fn save_png(image: &Image, path: &Path) -> Result<(), ImagingError> {
    let mut out = image::RgbImage::new(image.width(), image.height());
    for (i, px) in out.pixels_mut().enumerate() {
        for ch in 0..3 {
            px.0[ch] = (image.data[3 * i + ch].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out.save(path).map_err(|source| ImagingError::Write {
        path: path.display().to_string(),
        source,
    })
}
