use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Per-pixel model-frame coordinates, camera depth and visibility mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryMap {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
    pub depth: Vec<f32>,
}

impl GeometryMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            coords: vec![[0.0; 3]; width * height],
            mask: vec![false; width * height],
            depth: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coord(&self, i: usize) -> Vector3<f64> {
        let c = self.coords[i];
        Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
    }

    pub fn set(&mut self, i: usize, coord: [f32; 3], depth: f32) {
        self.coords[i] = coord;
        self.depth[i] = depth;
        self.mask[i] = true;
    }

    pub fn clear(&mut self, i: usize) {
        self.coords[i] = [0.0; 3];
        self.depth[i] = 0.0;
        self.mask[i] = false;
    }

    /// Bilinear coordinate and depth at a sub-pixel position when the four
    /// neighbors are masked and their depths agree within `rel_depth` of
    /// their mean; otherwise the nearest masked pixel, if any.
    pub fn sample(&self, x: f64, y: f64, rel_depth: f64) -> Option<([f32; 3], f32)> {
        let (x0, y0) = (x.floor(), y.floor());
        if x0 >= 0.0 && y0 >= 0.0 && x0 + 1.0 < self.width as f64 && y0 + 1.0 < self.height as f64 {
            let (ix, iy) = (x0 as usize, y0 as usize);
            let idx = [
                self.index(ix, iy),
                self.index(ix + 1, iy),
                self.index(ix, iy + 1),
                self.index(ix + 1, iy + 1),
            ];
            if idx.iter().all(|&i| self.mask[i]) {
                let d = idx.map(|i| self.depth[i] as f64);
                let (lo, hi) = d.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                if hi - lo <= rel_depth * 0.25 * d.iter().sum::<f64>() {
                    let (fx, fy) = (x - x0, y - y0);
                    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                    let mut c = [0.0f64; 3];
                    let mut z = 0.0;
                    for (k, &i) in idx.iter().enumerate() {
                        for (a, v) in c.iter_mut().zip(self.coords[i]) {
                            *a += w[k] * v as f64;
                        }
                        z += w[k] * d[k];
                    }
                    return Some((c.map(|v| v as f32), z as f32));
                }
            }
        }
        let (rx, ry) = (x.round(), y.round());
        if !(rx >= 0.0 && ry >= 0.0 && rx < self.width as f64 && ry < self.height as f64) {
            return None;
        }
        let i = self.index(rx as usize, ry as usize);
        self.mask[i].then(|| (self.coords[i], self.depth[i]))
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_dims(&self, w: usize, h: usize) -> bool {
        self.width == w && self.height == h
    }

    /// Little-endian `RGMP` file: u32 width, u32 height, then the coordinate
    /// plane (3 × f32 per pixel), the depth plane (f32) and the mask plane (u8).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.width * self.height;
        let mut buf = Vec::with_capacity(12 + n * 17);
        buf.extend_from_slice(b"RGMP");
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for c in &self.coords {
            for v in c {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for d in &self.depth {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.extend(self.mask.iter().map(|&m| m as u8));
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let b = fs::read(path)?;
        if b.len() < 12 || &b[..4] != b"RGMP" {
            return Err(Error::format(path, "missing RGMP header"));
        }
        let w = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let n = w * h;
        if b.len() != 12 + n * 17 {
            return Err(Error::format(path, format!("expected {} bytes, got {}", 12 + n * 17, b.len())));
        }
        let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let mut g = GeometryMap::empty(w, h);
        for i in 0..n {
            let o = 12 + i * 12;
            g.coords[i] = [f(o), f(o + 4), f(o + 8)];
            g.depth[i] = f(12 + n * 12 + i * 4);
            g.mask[i] = b[12 + n * 16 + i] != 0;
        }
        Ok(g)
    }
}
