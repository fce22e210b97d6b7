use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit image, `height × width × channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Format(format!(
                "buffer of {} bytes does not hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Decode any supported file into RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Self {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data: rgb.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(Error::Format(format!("cannot encode {c}-channel image"))),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer(path, &self.data, self.width as u32, self.height as u32, color).map_err(
            |e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        )
    }
}

/// Binary mask, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Format("mask buffer size mismatch".into()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Decode a mask image; any nonzero luminance counts as foreground.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let l = img.to_luma8();
        let (w, h) = l.dimensions();
        let data = l.into_raw().into_iter().map(|v| (v > 127) as u8).collect();
        Ok(Self {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        ImageU8::new(self.height, self.width, 1, data)?.save_png(path)
    }
}
