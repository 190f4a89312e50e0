use std::path::Path;

use crate::error::{Error, Result};

/// Row-major float image with 1 or 3 interleaved channels.
///
/// Values are nominally in [0, 1] (the 8-bit PNG range divided by 255), but
/// intermediate maps such as residuals and enhanced illumination may leave
/// that range. PNG export clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    /// Maximum over channels (the max-chromaticity map).
    pub fn channel_max(&self) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| {
            (0..self.channels).map(|c| self.get(x, y, c)).fold(f64::MIN, f64::max)
        })
    }

    /// Rec. 601 luma for 3-channel images; identity for gray.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        Image::from_fn(self.width, self.height, 1, |x, y, _| {
            0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2)
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Linear rescale so that `lo -> 0` and `hi -> 1`; constant images map to 0.
    pub fn normalized(&self, lo: f64, hi: f64) -> Image {
        let span = hi - lo;
        self.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let gray = img.color().channel_count() <= 2;
        let channels = if gray { 1 } else { 3 };
        let data = if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
            let words = if gray {
                img.into_luma16().into_raw()
            } else {
                img.into_rgb16().into_raw()
            };
            words.iter().map(|&v| v as f64 / 65535.0).collect()
        } else {
            let bytes = if gray {
                img.into_luma8().into_raw()
            } else {
                img.into_rgb8().into_raw()
            };
            bytes.iter().map(|&b| b as f64 / 255.0).collect()
        };
        Image::from_data(w, h, channels, data)
    }

    /// 8-bit quantization used for PNG export: clamp to [0, 1] and round.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::invalid(format!("cannot save {c}-channel image"))),
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// 16-bit PNG export, for maps that need more than 8 bits (depth, illumination).
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L16,
            3 => image::ExtendedColorType::Rgb16,
            c => return Err(Error::invalid(format!("cannot save {c}-channel image"))),
        };
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_ne_bytes())
            .collect();
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}
