//! 8-bit RGB rasters, PNG codec and one-pixel perturbations.
//!
//! Coordinates follow the usual raster convention: `x` is the column, `y` is
//! the row and the origin is the top-left pixel.

use std::cell::Cell;
use std::fmt;
use std::io::{self, BufRead, Cursor, Read, Seek, SeekFrom};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("PNG decode failed at byte offset {offset}: {message}")]
    Decode { offset: u64, message: String },
    #[error("PNG encode failed: {0}")]
    Encode(String),
    #[error("pixel buffer holds {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be non-zero, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel ({x}, {y}) is outside a {width}x{height} image")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
}

/// An RGB color as `[r, g, b]`.
pub type Rgb = [u8; 3];

/// Immutable 8-bit RGB raster stored row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImagingError::BufferSize {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: &[Rgb]) -> Result<Self, ImagingError> {
        Self::from_raw(width, height, pixels.iter().flatten().copied().collect())
    }

    /// A `width` x `height` image filled with a single color.
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, ImagingError> {
        let pixels = vec![color; width as usize * height as usize];
        Self::from_pixels(width, height, &pixels)
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

    /// Raw row-major RGB bytes.
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> Result<Rgb, ImagingError> {
        let i = self.offset(x, y)?;
        Ok([self.data[i], self.data[i + 1], self.data[i + 2]])
    }

    fn offset(&self, x: u32, y: u32) -> Result<usize, ImagingError> {
        if !self.contains(x, y) {
            return Err(ImagingError::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok((y as usize * self.width as usize + x as usize) * 3)
    }

    /// Copy of this image with pixel `(p.x, p.y)` set to `(p.r, p.g, p.b)`.
    pub fn apply_perturbation(&self, p: &PixelPerturbation) -> Result<RgbImage, ImagingError> {
        let i = self.offset(p.x, p.y)?;
        let mut data = self.data.clone();
        data[i..i + 3].copy_from_slice(&p.color());
        Ok(RgbImage {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Number of pixels whose color differs between two equally sized images.
    pub fn diff_count(&self, other: &RgbImage) -> Option<usize> {
        if self.width != other.width || self.height != other.height {
            return None;
        }
        Some(self.pixels().zip(other.pixels()).filter(|(a, b)| a != b).count())
    }
}

/// Free-function form of [`RgbImage::apply_perturbation`].
pub fn apply_perturbation(image: &RgbImage, p: &PixelPerturbation) -> Result<RgbImage, ImagingError> {
    image.apply_perturbation(p)
}

/// The five-component attack vector: pixel position and replacement color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPerturbation {
    pub x: u32,
    pub y: u32,
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl PixelPerturbation {
    pub fn new(x: u32, y: u32, r: u8, g: u8, b: u8) -> Self {
        Self { x, y, r, g, b }
    }

    pub fn color(&self) -> Rgb {
        [self.r, self.g, self.b]
    }

    /// Builds a perturbation from an integer vector `(x, y, r, g, b)`,
    /// clamping each component into the image and channel ranges.
    pub fn from_vector(v: &[i64], width: u32, height: u32) -> Self {
        assert_eq!(v.len(), 5, "perturbation vectors have five components");
        let clamp = |value: i64, hi: i64| value.clamp(0, hi);
        Self {
            x: clamp(v[0], width as i64 - 1) as u32,
            y: clamp(v[1], height as i64 - 1) as u32,
            r: clamp(v[2], 255) as u8,
            g: clamp(v[3], 255) as u8,
            b: clamp(v[4], 255) as u8,
        }
    }

    pub fn to_vector(&self) -> [i64; 5] {
        [
            self.x as i64,
            self.y as i64,
            self.r as i64,
            self.g as i64,
            self.b as i64,
        ]
    }
}

/// Cursor wrapper that publishes its read position so decode errors can
/// report how far into the stream the decoder got.
struct TrackedCursor<'a> {
    inner: Cursor<&'a [u8]>,
    position: Rc<Cell<u64>>,
}

impl TrackedCursor<'_> {
    fn sync(&self) {
        self.position.set(self.inner.position());
    }
}

impl Read for TrackedCursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.sync();
        Ok(n)
    }
}

impl BufRead for TrackedCursor<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.sync();
    }
}

impl Seek for TrackedCursor<'_> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.sync();
        Ok(p)
    }
}

/// Decodes a PNG into 8-bit RGB. Alpha is dropped, grayscale is expanded to
/// three equal channels, palettes are expanded and 16-bit samples stripped.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, ImagingError> {
    let position = Rc::new(Cell::new(0));
    let reader = TrackedCursor {
        inner: Cursor::new(bytes),
        position: Rc::clone(&position),
    };
    let fail = |e: png::DecodingError| ImagingError::Decode {
        offset: position.get(),
        message: e.to_string(),
    };

    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader.output_buffer_size().ok_or_else(|| ImagingError::Decode {
        offset: position.get(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImagingError::Decode {
            offset: position.get(),
            message: format!("unsupported output bit depth {:?}", info.bit_depth),
        });
    }

    let (width, height) = (info.width, info.height);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(ImagingError::Decode {
                offset: position.get(),
                message: "palette was not expanded".into(),
            })
        }
    };
    let mut data = Vec::with_capacity(width as usize * height as usize * 3);
    for row in buf.chunks_exact(info.line_size).take(height as usize) {
        for px in row[..width as usize * channels].chunks_exact(channels) {
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0]; 3]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    RgbImage::from_raw(width, height, data)
}

/// Encodes an image as an 8-bit RGB PNG. Encoder settings are fixed, so the
/// same image always produces the same bytes.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, ImagingError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width, image.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        encoder.set_filter(png::Filter::Sub);
        let mut writer = encoder
            .write_header()
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        writer
            .write_image_data(&image.data)
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| ImagingError::Encode(e.to_string()))?;
    }
    Ok(out)
}
