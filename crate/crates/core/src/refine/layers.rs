use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense `height × width × channels` field, channel-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    t.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        t
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_grid(&self, other: &Tensor) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Channel-wise concatenation of tensors on the same grid.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("nothing to concatenate".into()))?;
        if parts.iter().any(|p| !p.same_grid(first)) {
            return Err(Error::DimMismatch("concatenating tensors on different grids".into()));
        }
        let c: usize = parts.iter().map(|p| p.channels).sum();
        let mut out = Tensor::zeros(first.width, first.height, c);
        for i in 0..first.width * first.height {
            let mut o = 0;
            for p in parts {
                out.data[i * c + o..i * c + o + p.channels].copy_from_slice(p.pixel(i));
                o += p.channels;
            }
        }
        Ok(out)
    }

    /// 2×2 average pooling.
    pub fn avg_pool2(&self) -> Tensor {
        let (w, h, c) = (self.width / 2, self.height / 2, self.channels);
        let mut out = Tensor::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                let o = (y * w + x) * c;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let src = self.pixel((2 * y + dy) * self.width + 2 * x + dx);
                    for k in 0..c {
                        out.data[o + k] += 0.25 * src[k];
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbor 2× upsampling.
    pub fn upsample2(&self) -> Tensor {
        let (w, h, c) = (self.width * 2, self.height * 2, self.channels);
        let mut out = Tensor::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                out.pixel_mut(y * w + x).copy_from_slice(self.pixel((y / 2) * self.width + x / 2));
            }
        }
        out
    }

    pub fn relu(mut self) -> Tensor {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Shape and parameter offset of one convolution. Weights are stored as
/// `[tap][in][out]` followed by `out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub offset: usize,
    pub cin: usize,
    pub cout: usize,
    /// Kernel side, 1 or 3.
    pub k: usize,
    pub bias: bool,
}

impl Conv {
    pub fn new(offset: usize, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Self { offset, cin, cout, k, bias }
    }

    pub fn weight_count(&self) -> usize {
        self.k * self.k * self.cin * self.cout
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.cout } else { 0 }
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    #[inline]
    pub fn weight_index(&self, tap: usize, ci: usize, co: usize) -> usize {
        self.offset + (tap * self.cin + ci) * self.cout + co
    }

    pub fn bias_index(&self, co: usize) -> usize {
        self.offset + self.weight_count() + co
    }

    /// He-normal weights, zero biases.
    pub fn init(&self, params: &mut [f64], gain: f64, rng: &mut impl Rng) {
        let std = gain * (2.0 / (self.k * self.k * self.cin) as f64).sqrt();
        let n = Normal::new(0.0, std).expect("finite std");
        for p in &mut params[self.offset..self.offset + self.weight_count()] {
            *p = n.sample(rng);
        }
        if self.bias {
            params[self.offset + self.weight_count()..self.end()].fill(0.0);
        }
    }

    /// Same-size convolution with zero padding.
    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        if x.channels != self.cin {
            return Err(Error::DimMismatch(format!("conv expects {} channels, got {}", self.cin, x.channels)));
        }
        let (w, h) = (x.width, x.height);
        let mut out = Tensor::zeros(w, h, self.cout);
        let r = (self.k / 2) as i64;
        let wt = &params[self.offset..self.offset + self.weight_count()];
        for y in 0..h as i64 {
            for xx in 0..w as i64 {
                let o = (y as usize * w + xx as usize) * self.cout;
                let acc = &mut out.data[o..o + self.cout];
                if self.bias {
                    acc.copy_from_slice(&params[self.bias_index(0)..self.end()]);
                }
                for ky in -r..=r {
                    let sy = y + ky;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for kx in -r..=r {
                        let sx = xx + kx;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        let tap = ((ky + r) * self.k as i64 + kx + r) as usize;
                        let src = x.pixel(sy as usize * w + sx as usize);
                        for (ci, &v) in src.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let row = &wt[(tap * self.cin + ci) * self.cout..(tap * self.cin + ci + 1) * self.cout];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += v * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Lays out consecutive convolutions in one flat parameter vector.
#[derive(Default)]
pub(crate) struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn conv(&mut self, cin: usize, cout: usize, k: usize, bias: bool) -> Conv {
        let c = Conv::new(self.next, cin, cout, k, bias);
        self.next = c.end();
        c
    }

    pub fn total(&self) -> usize {
        self.next
    }
}
