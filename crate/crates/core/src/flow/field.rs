use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense per-pixel displacement; invalid pixels carry zero flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub du: Vec<f32>,
    pub dv: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            du: vec![0.0; n],
            dv: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Same displacement everywhere, all valid.
    pub fn constant(width: usize, height: usize, du: f32, dv: f32) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            du: vec![du; n],
            dv: vec![dv; n],
            valid: vec![true; n],
        }
    }

    pub fn set(&mut self, i: usize, du: f32, dv: f32) {
        self.du[i] = du;
        self.dv[i] = dv;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, i: usize) {
        self.du[i] = 0.0;
        self.dv[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_dims(&self, w: usize, h: usize) -> bool {
        self.width == w && self.height == h
    }

    pub(crate) fn check_dims(&self, w: usize, h: usize, what: &str) -> Result<()> {
        if self.same_dims(w, h) {
            Ok(())
        } else {
            Err(Error::DimMismatch(format!(
                "flow is {}x{}, {what} is {w}x{h}",
                self.width, self.height
            )))
        }
    }

    /// Little-endian `RFLW` file: u32 width, u32 height, du plane, dv plane
    /// (f32), valid plane (u8).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.width * self.height;
        let mut buf = Vec::with_capacity(12 + 9 * n);
        buf.extend_from_slice(b"RFLW");
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in self.du.iter().chain(&self.dv) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(self.valid.iter().map(|&v| v as u8));
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let b = fs::read(path)?;
        if b.len() < 12 || &b[..4] != b"RFLW" {
            return Err(Error::format(path, "missing RFLW header"));
        }
        let w = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let n = w * h;
        if b.len() != 12 + 9 * n {
            return Err(Error::format(path, format!("expected {} bytes, got {}", 12 + 9 * n, b.len())));
        }
        let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let mut out = FlowField::invalid(w, h);
        for i in 0..n {
            let (du, dv) = (f(12 + 4 * i), f(12 + 4 * (n + i)));
            if !(du.is_finite() && dv.is_finite()) {
                return Err(Error::format(path, "non-finite flow"));
            }
            if b[12 + 8 * n + i] != 0 {
                out.set(i, du, dv);
            }
        }
        Ok(out)
    }
}
