//! Pixel containers, image decoding and the binary vegetation mask format.
//!
//! Every decoded image is materialized as 8-bit RGB. Masks are stored on disk
//! as single-channel 8-bit PNGs where 0 is background and 255 is vegetation.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot read {path}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image format (expected PNG or JPEG)")]
    UnsupportedFormat { path: PathBuf },
    #[error("{path}: corrupt image: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("not a label image: channels differ at ({x}, {y})")]
    NotALabelImage { x: u32, y: u32 },
    #[error("{path}: non-binary mask value {value} at ({x}, {y})")]
    NonBinaryMask {
        path: PathBuf,
        value: u8,
        x: u32,
        y: u32,
    },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Camera orientation of a street-level capture, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub heading: f64,
    pub pitch: f64,
}

/// A decoded RGB street-level image plus the metadata it was sampled with.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    id: String,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    pub city: Option<String>,
    pub location: Option<LatLon>,
    pub pose: Option<CameraPose>,
}

impl RasterImage {
    /// Wraps a row-major RGB buffer. The buffer must hold exactly
    /// `width * height * 3` bytes and both dimensions must be non-zero.
    pub fn new(id: impl Into<String>, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!(
                "dimensions must be non-zero, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImagingError::InvalidRaster(format!(
                "buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
            city: None,
            location: None,
            pose: None,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        id: impl Into<String>,
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(id, width, height, pixels)
    }

    pub fn filled(id: impl Into<String>, width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(id, width, height, |_, _| rgb)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn with_city(mut self, city: impl Into<String>) -> Self {
        self.city = Some(city.into());
        self
    }

    pub fn with_location(mut self, location: LatLon) -> Self {
        self.location = Some(location);
        self
    }

    pub fn with_pose(mut self, pose: CameraPose) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    fn from_dynamic(id: String, img: DynamicImage) -> Result<Self> {
        let (width, height) = (img.width(), img.height());
        let pixels = match img {
            DynamicImage::ImageRgb8(buf) => buf.into_raw(),
            // 16-bit sources keep their high byte.
            DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_) => img
                .to_rgb16()
                .into_raw()
                .into_iter()
                .map(|v| (v >> 8) as u8)
                .collect(),
            other => other.to_rgb8().into_raw(),
        };
        Self::new(id, width, height, pixels)
    }
}

/// Binary per-pixel vertical-vegetation classification, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VegetationMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl VegetationMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(ImagingError::InvalidRaster(format!(
                "mask holds {} bits, {width}x{height} needs {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn total_pixels(&self) -> usize {
        self.bits.len()
    }

    pub fn vegetation_pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Nearest-neighbour resample to `width` x `height`.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let src_x = (((x as f64 + 0.5) * sx) as u32).min(self.width - 1);
            let src_y = (((y as f64 + 0.5) * sy) as u32).min(self.height - 1);
            self.get(src_x, src_y)
        })
    }

    fn to_gray_image(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("length checked at construction")
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| ImagingError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })
}

fn guess_format(path: &Path, bytes: &[u8]) -> Result<ImageFormat> {
    match image::guess_format(bytes) {
        Ok(format @ (ImageFormat::Png | ImageFormat::Jpeg)) => Ok(format),
        _ => Err(ImagingError::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

/// Decodes an in-memory PNG or JPEG. `origin` is only used in error messages.
pub fn decode_image_bytes(id: impl Into<String>, bytes: &[u8], origin: &Path) -> Result<RasterImage> {
    let format = guess_format(origin, bytes)?;
    let img = ImageReader::with_format(Cursor::new(bytes), format)
        .decode()
        .map_err(|e| ImagingError::CorruptImage {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
    RasterImage::from_dynamic(id.into(), img)
}

/// Reads and decodes a PNG or JPEG file into 8-bit RGB. The image id is the
/// file stem.
pub fn decode_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_image_bytes(id, &bytes, path)
}

/// Decodes a label raster. Palettized PNGs are flattened to their palette
/// indices instead of being expanded to palette colors; everything else goes
/// through [`decode_image`].
pub fn decode_label_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if guess_format(path, &bytes)? != ImageFormat::Png {
        return decode_image(path);
    }
    let corrupt = |e: &dyn std::fmt::Display| ImagingError::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(&bytes[..]));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| corrupt(&e))?;
    if reader.info().color_type != png::ColorType::Indexed {
        return decode_image(path);
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| corrupt(&"image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| corrupt(&e))?;
    let (width, height) = (frame.width, frame.height);
    let depth = frame.bit_depth as usize;
    let row_bytes = frame.line_size;
    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height as usize {
        let row = &buf[y * row_bytes..(y + 1) * row_bytes];
        for x in 0..width as usize {
            let bit = x * depth;
            let byte = row[bit / 8];
            let index = if depth == 8 {
                byte
            } else {
                let shift = 8 - depth - (bit % 8);
                (byte >> shift) & ((1u8 << depth) - 1)
            };
            pixels.extend_from_slice(&[index, index, index]);
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RasterImage::new(id, width, height, pixels)
}

/// Collapses a label raster to a binary mask: a bit is set exactly where the
/// label value equals `vegetation_value`.
pub fn mask_from_label_image(img: &RasterImage, vegetation_value: u8) -> Result<VegetationMask> {
    let mut bits = Vec::with_capacity(img.pixel_count());
    for (i, [r, g, b]) in img.rgb_pixels().enumerate() {
        if r != g || g != b {
            let w = img.width() as usize;
            return Err(ImagingError::NotALabelImage {
                x: (i % w) as u32,
                y: (i / w) as u32,
            });
        }
        bits.push(r == vegetation_value);
    }
    VegetationMask::new(img.width(), img.height(), bits)
}

/// 8-bit RGB PNG of `img`.
pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut encoded = Vec::new();
    img.to_rgb_image()
        .write_to(&mut Cursor::new(&mut encoded), ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    encoded
}

/// 8-bit grayscale PNG with 255 for vegetation and 0 elsewhere.
pub fn encode_mask_png(mask: &VegetationMask) -> Vec<u8> {
    let mut encoded = Vec::new();
    mask.to_gray_image()
        .write_to(&mut Cursor::new(&mut encoded), ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    encoded
}

pub fn mask_to_png(mask: &VegetationMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask_png(mask)).map_err(|source| ImagingError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })
}

pub fn mask_from_png(path: impl AsRef<Path>) -> Result<VegetationMask> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let format = guess_format(path, &bytes)?;
    let img = ImageReader::with_format(Cursor::new(&bytes), format)
        .decode()
        .map_err(|e| ImagingError::CorruptImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let width = gray.width();
    let mut bits = Vec::with_capacity(gray.len());
    for (i, &value) in gray.as_raw().iter().enumerate() {
        match value {
            0 => bits.push(false),
            255 => bits.push(true),
            _ => {
                return Err(ImagingError::NonBinaryMask {
                    path: path.to_path_buf(),
                    value,
                    x: (i % width as usize) as u32,
                    y: (i / width as usize) as u32,
                })
            }
        }
    }
    VegetationMask::new(gray.width(), gray.height(), bits)
}
