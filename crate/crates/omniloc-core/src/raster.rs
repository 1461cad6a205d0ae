//! Row-major 8-bit raster images and f32 depth maps, with the nearest and
//! bilinear samplers used by the virtual-camera resamplers.
//!
//! Continuous coordinates follow the camera convention: the image spans
//! `[0, width] x [0, height]` with pixel centers at integer + 0.5.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    BadDataLength { width: u32, height: u32, channels: u8, got: usize },
    #[error("channel count {0} unsupported (must be 1 or 3)")]
    BadChannels(u8),
    #[error("zero-sized image")]
    ZeroSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Nearest,
    Bilinear,
}

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroSize);
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels as usize],
        })
    }

    pub fn from_data(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroSize);
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        let want = width as usize * height as usize * channels as usize;
        if data.len() != want {
            return Err(RasterError::BadDataLength { width, height, channels, got: data.len() });
        }
        Ok(RasterImage { width, height, channels, data })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels as usize]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, px: &[u8]) {
        let i = self.idx(x, y);
        self.data[i..i + self.channels as usize].copy_from_slice(px);
    }

    /// Samples at a continuous position, clamping to the image borders.
    /// Returns per-channel values in the first `channels` slots.
    pub fn sample(&self, u: f64, v: f64, mode: SampleMode) -> [f64; 3] {
        self.sample_inner(u, v, mode, false)
    }

    /// Samples with horizontal wrap-around (equirectangular seam) and
    /// vertical clamping (pole rows).
    pub fn sample_wrapped(&self, u: f64, v: f64, mode: SampleMode) -> [f64; 3] {
        self.sample_inner(u, v, mode, true)
    }

    fn sample_inner(&self, u: f64, v: f64, mode: SampleMode, wrap_x: bool) -> [f64; 3] {
        let mut out = [0.0; 3];
        let w = self.width as i64;
        let h = self.height as i64;
        match mode {
            SampleMode::Nearest => {
                let x = resolve(u.floor() as i64, w, wrap_x);
                let y = resolve(v.floor() as i64, h, false);
                let px = self.pixel(x, y);
                for (o, &p) in out.iter_mut().zip(px) {
                    *o = p as f64;
                }
            }
            SampleMode::Bilinear => {
                let x = u - 0.5;
                let y = v - 0.5;
                let x0f = x.floor();
                let y0f = y.floor();
                let tx = x - x0f;
                let ty = y - y0f;
                let x0 = resolve(x0f as i64, w, wrap_x);
                let x1 = resolve(x0f as i64 + 1, w, wrap_x);
                let y0 = resolve(y0f as i64, h, false);
                let y1 = resolve(y0f as i64 + 1, h, false);
                let p00 = self.pixel(x0, y0);
                let p10 = self.pixel(x1, y0);
                let p01 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..self.channels as usize {
                    let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
                    let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
                    out[c] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        out
    }
}

#[inline]
fn resolve(i: i64, n: i64, wrap: bool) -> u32 {
    if wrap {
        i.rem_euclid(n) as u32
    } else {
        i.clamp(0, n - 1) as u32
    }
}

/// Depth in meters along the unprojected ray; non-positive or non-finite
/// entries mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroSize);
        }
        Ok(DepthMap { width, height, data: vec![0.0; width as usize * height as usize] })
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroSize);
        }
        let want = width as usize * height as usize;
        if data.len() != want {
            return Err(RasterError::BadDataLength { width, height, channels: 1, got: data.len() });
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: f32) {
        self.data[y as usize * self.width as usize + x as usize] = d;
    }

    /// Nearest-pixel depth at a continuous position; `None` when the pixel
    /// is invalid or outside the image.
    pub fn at(&self, u: f64, v: f64) -> Option<f32> {
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
        let x = u.floor() as i64;
        let y = v.floor() as i64;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            // positions exactly on the right/bottom edge still belong to the last pixel
            let x = x.clamp(0, self.width as i64 - 1);
            let y = y.clamp(0, self.height as i64 - 1);
            if u >= 0.0 && u <= self.width as f64 && v >= 0.0 && v <= self.height as f64 {
                return Self::valid(self.get(x as u32, y as u32));
            }
            return None;
        }
        Self::valid(self.get(x as u32, y as u32))
    }

    fn valid(d: f32) -> Option<f32> {
        (d.is_finite() && d > 0.0).then_some(d)
    }
}
