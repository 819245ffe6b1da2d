//! 8-bit rasters and the pixel statistics consumed by the quality gates.
//!
//! All variances are population variances. Percentiles use the nearest-rank
//! method. Grayscale conversion uses Rec. 601 luma weights with round-half-up.

use std::io::Cursor;

use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("invalid raster: {0}")]
    InvalidBuffer(String),
    #[error("window {window:?} exceeds {width}x{height} image")]
    OutOfBounds {
        window: PixelWindow,
        width: u32,
        height: u32,
    },
    #[error("window of {size} px does not fit a {width}x{height} image")]
    WindowTooLarge { size: u32, width: u32, height: u32 },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
}

/// Row-major interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidBuffer(format!("empty image {width}x{height}")));
        }
        let expected = 3 * width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::InvalidBuffer(format!(
                "buffer has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(col, row));
            }
        }
        Self::new(width, height, data).expect("from_fn produces a consistent buffer")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, col: u32, row: u32) -> [u8; 3] {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Lossless PNG encoding.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.data, self.width, self.height, ExtendedColorType::Rgb8)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out)
    }
}

/// Row-major 8-bit luminance raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidBuffer(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(RasterError::InvalidBuffer(format!(
                "buffer has {} pixels, expected {}",
                pixels.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(col, row));
            }
        }
        Self::new(width, height, pixels).expect("from_fn produces a consistent buffer")
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    fn require(&self, min: u32) -> Result<(), RasterError> {
        if self.width < min || self.height < min {
            return Err(RasterError::ImageTooSmall {
                width: self.width,
                height: self.height,
                min,
            });
        }
        Ok(())
    }

    fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }
}

/// Axis-aligned pixel rectangle with top-left corner `(col0, row0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub col0: u32,
    pub row0: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelWindow {
    pub fn square(col0: u32, row0: u32, size: u32) -> Self {
        Self {
            col0,
            row0,
            width: size,
            height: size,
        }
    }

    /// Continuous pixel coordinate of the window center.
    pub fn center(&self) -> (f64, f64) {
        (
            self.col0 as f64 + self.width as f64 / 2.0,
            self.row0 as f64 + self.height as f64 / 2.0,
        )
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && self.col0 as u64 + self.width as u64 <= width as u64
            && self.row0 as u64 + self.height as u64 <= height as u64
    }
}

/// Decodes a PNG or JPEG byte stream into RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| RasterError::Decode(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(other) => {
            return Err(RasterError::Decode(format!(
                "unsupported format {other:?}, expected PNG or JPEG"
            )))
        }
        None => {
            return Err(RasterError::Decode(
                "unrecognized signature, expected PNG or JPEG".into(),
            ))
        }
    }
    let decoded = reader
        .decode()
        .map_err(|e| RasterError::Decode(e.to_string()))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    RgbImage::new(w, h, decoded.into_raw())
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .data
        .chunks_exact(3)
        .map(|c| {
            // Integer form of round(0.299 R + 0.587 G + 0.114 B) with ties up.
            let acc = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32 + 500;
            (acc / 1000).min(255) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

pub fn crop(img: &RgbImage, w: &PixelWindow) -> Result<RgbImage, RasterError> {
    if !w.fits(img.width, img.height) {
        return Err(RasterError::OutOfBounds {
            window: *w,
            width: img.width,
            height: img.height,
        });
    }
    let stride = 3 * img.width as usize;
    let mut data = Vec::with_capacity(3 * w.width as usize * w.height as usize);
    for row in w.row0..w.row0 + w.height {
        let start = row as usize * stride + 3 * w.col0 as usize;
        data.extend_from_slice(&img.data[start..start + 3 * w.width as usize]);
    }
    RgbImage::new(w.width, w.height, data)
}

/// All `size`-square windows on a `stride` grid that fit the image, row-major.
pub fn sliding_windows(width: u32, height: u32, size: u32, stride: u32) -> Result<Vec<PixelWindow>, RasterError> {
    if stride == 0 {
        return Err(RasterError::ZeroStride);
    }
    if size == 0 || size > width.min(height) {
        return Err(RasterError::WindowTooLarge { size, width, height });
    }
    let per_axis = |extent: u32| (extent - size) / stride + 1;
    let mut out = Vec::with_capacity((per_axis(width) * per_axis(height)) as usize);
    for j in 0..per_axis(height) {
        for i in 0..per_axis(width) {
            out.push(PixelWindow::square(i * stride, j * stride, size));
        }
    }
    Ok(out)
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Variance of the 4-neighbor Laplacian response over interior pixels.
pub fn laplacian_variance(g: &GrayImage) -> Result<f64, RasterError> {
    g.require(3)?;
    let w = g.width as usize;
    let p = &g.pixels;
    let responses = (1..g.height as usize - 1).flat_map(move |r| {
        (1..w - 1).map(move |c| {
            let i = r * w + c;
            4.0 * p[i] as f64 - p[i - 1] as f64 - p[i + 1] as f64 - p[i - w] as f64 - p[i + w] as f64
        })
    });
    Ok(population_variance(responses))
}

pub fn pixel_variance(g: &GrayImage) -> f64 {
    population_variance(g.pixels.iter().map(|&v| v as f64))
}

/// Nearest-rank percentile of the luminance values, `p` in `[0, 100]`.
pub fn percentile(g: &GrayImage, p: f64) -> u8 {
    let n = g.pixels.len() as u64;
    let rank = ((p.clamp(0.0, 100.0) / 100.0 * n as f64).ceil() as u64).clamp(1, n);
    let hist = g.histogram();
    let mut seen = 0u64;
    for (value, &count) in hist.iter().enumerate() {
        seen += count;
        if seen >= rank {
            return value as u8;
        }
    }
    255
}

/// Gray-level spread between two nearest-rank percentiles.
pub fn contrast_range(g: &GrayImage, p_low: f64, p_high: f64) -> f64 {
    debug_assert!(0.0 <= p_low && p_low < p_high && p_high <= 100.0);
    percentile(g, p_high) as f64 - percentile(g, p_low) as f64
}

/// Shannon entropy in bits of the 256-bin histogram.
pub fn histogram_entropy(g: &GrayImage) -> f64 {
    let n = g.pixels.len() as f64;
    let h: f64 = g
        .histogram()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Fractions of pixels equal to 0 and to 255.
pub fn saturated_ratio(g: &GrayImage) -> (f64, f64) {
    let hist = g.histogram();
    let n = g.pixels.len() as f64;
    (hist[0] as f64 / n, hist[255] as f64 / n)
}

/// Variance of non-overlapping block means over the global pixel variance.
///
/// Partial tiles on the right and bottom edges are dropped. White noise keeps
/// block means nearly constant and scores about `1 / block^2`; structure at
/// scales above the block size scores close to 1.
pub fn block_mean_variance_ratio(g: &GrayImage, block: u32) -> Result<f64, RasterError> {
    g.require(block.max(1))?;
    let global = pixel_variance(g);
    if global == 0.0 {
        return Ok(0.0);
    }
    let bw = g.width / block;
    let bh = g.height / block;
    let area = (block * block) as f64;
    let means: Vec<f64> = (0..bh)
        .flat_map(|by| (0..bw).map(move |bx| (bx, by)))
        .map(|(bx, by)| {
            let mut sum = 0u64;
            for r in by * block..(by + 1) * block {
                for c in bx * block..(bx + 1) * block {
                    sum += g.get(c, r) as u64;
                }
            }
            sum as f64 / area
        })
        .collect();
    Ok(population_variance(means.iter().copied()) / global)
}

/// Box blur with a `(2 * radius + 1)` square kernel and clamped edges.
pub fn box_blur(g: &GrayImage, radius: u32) -> GrayImage {
    if radius == 0 {
        return g.clone();
    }
    let (w, h) = (g.width as i64, g.height as i64);
    let r = radius as i64;
    let pass = |src: &[u8], horizontal: bool| -> Vec<u8> {
        let mut out = vec![0u8; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0u32;
                for d in -r..=r {
                    let (sx, sy) = if horizontal {
                        ((x + d).clamp(0, w - 1), y)
                    } else {
                        (x, (y + d).clamp(0, h - 1))
                    };
                    sum += src[(sy * w + sx) as usize] as u32;
                }
                let n = (2 * r + 1) as u32;
                out[(y * w + x) as usize] = ((sum + n / 2) / n) as u8;
            }
        }
        out
    };
    let tmp = pass(&g.pixels, true);
    GrayImage {
        width: g.width,
        height: g.height,
        pixels: pass(&tmp, false),
    }
}
