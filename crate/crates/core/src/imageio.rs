//! Grayscale image carrier and raster I/O: PGM/PNG decoding, luma
//! conversion, bilinear resizing, and PGM output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Grayscale image with intensities in `[0, 1]`, plus an optional class
/// label carried through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    label: Option<String>,
}

impl GrayImage {
    /// Builds an image from row-major pixels, validating range and length.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", width * height),
                actual: format!("{}", pixels.len()),
            });
        }
        for (i, &p) in pixels.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::PixelOutOfRange {
                    row: i / width,
                    col: i % width,
                    value: p,
                });
            }
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            label: None,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        GrayImage::new(width, height, vec![value; width * height]).expect("constant in range")
    }

    /// Converts a matrix to an image, clamping entries into `[0, 1]`.
    pub fn from_matrix_clamped(m: &DenseMatrix) -> Self {
        let (height, width) = (m.nrows(), m.ncols());
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(m[(r, c)].clamp(0.0, 1.0));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
            label: None,
        }
    }

    /// Pixel grid as a `height x width` matrix.
    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_row_slice(self.height, self.width, &self.pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Side length if the image is square.
    pub fn square_side(&self) -> Option<usize> {
        (self.width == self.height).then_some(self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Copies the provenance label from another image.
    pub fn with_label_of(mut self, other: &GrayImage) -> Self {
        self.label = other.label.clone();
        self
    }
}

/// Rec. 601 luma weights applied to RGB channels scaled to `[0, 1]`.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Decodes a raster file (PGM and PNG at minimum) into a grayscale image.
///
/// Grayscale sources map intensity directly; color sources go through the
/// luma weights. Either way the result lands in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::ImageDecode {
            path: path.to_path_buf(),
            message: "zero-dimension image".into(),
        });
    }

    let pixels = match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
        }
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels()
                .map(|p| {
                    let v = LUMA[0] * (p.0[0] as f64 / 255.0)
                        + LUMA[1] * (p.0[1] as f64 / 255.0)
                        + LUMA[2] * (p.0[2] as f64 / 255.0);
                    v.clamp(0.0, 1.0)
                })
                .collect()
        }
    };
    GrayImage::new(width, height, pixels)
}

/// Resizes to `side x side` with bilinear interpolation and pixel-center
/// alignment: source coordinate `(dst + 0.5) * scale - 0.5`, clamped.
pub fn resize_bilinear(img: &GrayImage, side: usize) -> Result<GrayImage> {
    if side == 0 {
        return Err(Error::InvalidInput("resize target must be positive".into()));
    }
    let sx = img.width() as f64 / side as f64;
    let sy = img.height() as f64 / side as f64;
    let mut pixels = Vec::with_capacity(side * side);
    for dy in 0..side {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height() - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height() - 1);
        let wy = fy - y0 as f64;
        for dx in 0..side {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width() - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width() - 1);
            let wx = fx - x0 as f64;
            let top = img.get(y0, x0) * (1.0 - wx) + img.get(y0, x1) * wx;
            let bottom = img.get(y1, x0) * (1.0 - wx) + img.get(y1, x1) * wx;
            pixels.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    let mut out = GrayImage::new(side, side, pixels)?;
    if let Some(label) = &img.label {
        out = out.with_label(label.clone());
    }
    Ok(out)
}

fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary (P5) PGM file with maxval 255.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&p| quantize(p)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Lays out images left to right, separated by one black column, for the
/// side-by-side panels the denoise command can emit.
pub fn hstack_panel(images: &[GrayImage]) -> Result<GrayImage> {
    if images.is_empty() {
        return Err(Error::InvalidInput("panel needs at least one image".into()));
    }
    let height = images[0].height();
    if images.iter().any(|i| i.height() != height) {
        return Err(Error::InvalidInput("panel images must share a height".into()));
    }
    let width: usize = images.iter().map(|i| i.width()).sum::<usize>() + images.len() - 1;
    let mut pixels = vec![0.0; width * height];
    let mut x_off = 0;
    for img in images {
        for r in 0..height {
            for c in 0..img.width() {
                pixels[r * width + x_off + c] = img.get(r, c);
            }
        }
        x_off += img.width() + 1;
    }
    GrayImage::new(width, height, pixels)
}
