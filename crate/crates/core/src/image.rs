//! Minimal owned 8-bit RGB and grayscale rasters.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{} bytes for {}x{} RGB",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(i, j)`
    /// has its center at `(i, j)`. Columns wrap when `wrap_x`, otherwise clamp;
    /// rows always clamp.
    pub fn sample_bilinear(&self, x: f64, y: f64, wrap_x: bool) -> [f64; 3] {
        let w = self.width as i64;
        let h = self.height as i64;
        let x0f = libm::floor(x);
        let y0f = libm::floor(y);
        let fx = x - x0f;
        let fy = y - y0f;
        let x0 = x0f as i64;
        let y0 = y0f as i64;
        let col = |c: i64| -> usize {
            if wrap_x {
                c.rem_euclid(w) as usize
            } else {
                c.clamp(0, w - 1) as usize
            }
        };
        let row = |r: i64| -> usize { r.clamp(0, h - 1) as usize };
        let (c0, c1) = (col(x0), col(x0 + 1));
        let (r0, r1) = (row(y0), row(y0 + 1));
        let p00 = self.get(c0, r0);
        let p10 = self.get(c1, r0);
        let p01 = self.get(c0, r1);
        let p11 = self.get(c1, r1);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
            let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
            out[ch] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                // integer BT.601 luma
                ((p[0] as u32 * 299 + p[1] as u32 * 587 + p[2] as u32 * 114 + 500) / 1000) as u8
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

pub fn round_channel(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Separable box blur with the given radius, clamped at borders.
    pub fn box_blur(&self, radius: usize) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let r = radius as i64;
        let n = (2 * r + 1) as u32;
        let mut tmp = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u32;
                for d in -r..=r {
                    let xx = (x as i64 + d).clamp(0, w as i64 - 1) as usize;
                    s += self.data[y * w + xx] as u32;
                }
                tmp[y * w + x] = ((s + n / 2) / n) as u8;
            }
        }
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u32;
                for d in -r..=r {
                    let yy = (y as i64 + d).clamp(0, h as i64 - 1) as usize;
                    s += tmp[yy * w + x] as u32;
                }
                out[y * w + x] = ((s + n / 2) / n) as u8;
            }
        }
        GrayImage {
            width: w,
            height: h,
            data: out,
        }
    }
}
