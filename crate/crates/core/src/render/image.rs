use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major float image with 1 or 3 channels, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::DimMismatch(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DimMismatch("non-finite pixel".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Luminance as a single-channel image (channel mean for RGB).
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample at continuous pixel-center coordinates; zero outside.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as i64, y0 as i64);
        out.iter_mut().for_each(|v| *v = 0.0);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (tx, ty, w) in taps {
            if w == 0.0 || tx < 0 || ty < 0 || tx >= self.width as i64 || ty >= self.height as i64 {
                continue;
            }
            let base = (ty as usize * self.width + tx as usize) * self.channels;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.data[base + c];
            }
        }
    }

    /// Binary PPM (P6) for RGB, PGM (P5) for grey.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut buf = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reads P2/P3 (ASCII) and P5/P6 (binary) with maxval ≤ 255.
    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let bad = |r: &str| Error::format(path, r.to_string());
        let mut pos = 0;
        let mut token = || -> Option<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (start < pos).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token().ok_or_else(|| bad("empty file"))?;
        let channels = match magic.as_str() {
            "P2" | "P5" => 1,
            "P3" | "P6" => 3,
            _ => return Err(bad("unknown magic")),
        };
        let mut num = || -> Result<usize> {
            token()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad header number"))
        };
        let (w, h, maxval) = (num()?, num()?, num()?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("maxval must be in 1..=255"));
        }
        let n = w * h * channels;
        let scale = 1.0 / maxval as f32;
        let data: Vec<f32> = if magic == "P5" || magic == "P6" {
            let start = pos + 1;
            if bytes.len() < start + n {
                return Err(bad("truncated pixel data"));
            }
            bytes[start..start + n].iter().map(|&b| b as f32 * scale).collect()
        } else {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(num()? as f32 * scale);
            }
            v
        };
        Self::from_data(w, h, channels, data)
    }
}
