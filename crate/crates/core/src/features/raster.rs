use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::FeatureError;

/// Row-major 8-bit RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl ImageRaster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 {
            return Err(FeatureError::InvalidRaster(format!("{width}x{height} has no pixels")));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(FeatureError::InvalidRaster(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(ImageRaster { width, height, pixels })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        ImageRaster { width, height, pixels }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Decodes PNG bytes. Alpha is dropped.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| FeatureError::Decode(e.to_string()))?;
        let rgb = decoded.to_rgb8();
        let (width, height) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(width, height, pixels)
    }

    pub fn open_png(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = RgbImage::from_raw(self.width, self.height, flat).expect("buffer matches dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encoding");
        out.into_inner()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn map_pixels(&self, f: impl Fn([u8; 3]) -> [u8; 3]) -> Self {
        ImageRaster { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&p| f(p)).collect() }
    }

    /// Left-right mirror image.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Top-bottom mirror image.
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }
}
