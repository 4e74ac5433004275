use super::field::FlowField;
use crate::error::Result;
use crate::render::crop::nearest_index;
use crate::render::{GeometryMap, ImageBuffer};

/// Backward warping: `out(p) = self(p + flow(p))`.
pub trait Warp: Sized {
    fn warp(&self, flow: &FlowField) -> Result<Self>;
}

impl Warp for GeometryMap {
    /// Nearest neighbor; invalid flow, out-of-bounds or unmasked sources
    /// give unmasked output.
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        flow.check_dims(self.width, self.height, "geometry")?;
        let mut out = GeometryMap::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if !flow.valid[i] {
                    continue;
                }
                let (sx, sy) = (x as f64 + flow.du[i] as f64, y as f64 + flow.dv[i] as f64);
                if let Some(j) = nearest_index(sx, sy, self.width, self.height) {
                    if self.mask[j] {
                        out.set(i, self.coords[j], self.depth[j]);
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Warp for ImageBuffer {
    /// Bilinear; invalid-flow pixels are zero.
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        flow.check_dims(self.width, self.height, "image")?;
        let mut out = ImageBuffer::new(self.width, self.height, self.channels);
        let mut px = vec![0.0f32; self.channels];
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if !flow.valid[i] {
                    continue;
                }
                self.sample_bilinear(x as f64 + flow.du[i] as f64, y as f64 + flow.dv[i] as f64, &mut px);
                out.data[i * self.channels..(i + 1) * self.channels].copy_from_slice(&px);
            }
        }
        Ok(out)
    }
}

/// Per-pixel error in pixels; `valid[i]` false where undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub width: usize,
    pub height: usize,
    pub error: Vec<f32>,
    pub valid: Vec<bool>,
}

/// `e(p) = ‖f(p) + b(p + f(p))‖`, with `b` read at the nearest pixel.
pub fn forward_backward_consistency(f: &FlowField, b: &FlowField) -> Result<ErrorMap> {
    b.check_dims(f.width, f.height, "forward flow")?;
    let n = f.width * f.height;
    let mut out = ErrorMap {
        width: f.width,
        height: f.height,
        error: vec![0.0; n],
        valid: vec![false; n],
    };
    for i in 0..n {
        if !f.valid[i] {
            continue;
        }
        let (x, y) = ((i % f.width) as f64, (i / f.width) as f64);
        let Some(j) = nearest_index(x + f.du[i] as f64, y + f.dv[i] as f64, f.width, f.height) else {
            continue;
        };
        if b.valid[j] {
            out.error[i] = (f.du[i] + b.du[j]).hypot(f.dv[i] + b.dv[j]);
            out.valid[i] = true;
        }
    }
    Ok(out)
}
