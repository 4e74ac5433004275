use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::GeometryMap;

/// Bands whose (sin, cos) amplitude falls below this carry no usable phase.
const MIN_BAND_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub n_freq: usize,
    /// Half the object diameter; coordinates are divided by it.
    pub half_extent: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            n_freq: 5,
            half_extent: 0.5,
        }
    }
}

impl EncodingConfig {
    pub fn for_diameter(n_freq: usize, diameter: f64) -> Self {
        Self {
            n_freq,
            half_extent: diameter * 0.5,
        }
    }

    pub fn channels(&self) -> usize {
        6 * self.n_freq
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq == 0 {
            return Err(Error::Config("n_freq must be at least 1".into()));
        }
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::Config("half_extent must be positive".into()));
        }
        Ok(())
    }
}

/// Multi-band sine/cosine expansion of a geometry map. Per pixel the layout
/// is x-bands, y-bands, z-bands; each band stores `(sin, cos)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGeometryMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl EncodedGeometryMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
            mask: vec![false; width * height],
        }
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mean over the masked pixels of each `factor`×`factor` block. A block
    /// is masked when any of its pixels is.
    pub fn pool(&self, factor: usize) -> EncodedGeometryMap {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = EncodedGeometryMap::zeros(w, h, self.channels);
        for cy in 0..h {
            for cx in 0..w {
                let o = cy * w + cx;
                let mut n = 0usize;
                for y in cy * factor..(cy + 1) * factor {
                    for x in cx * factor..(cx + 1) * factor {
                        let i = y * self.width + x;
                        if self.mask[i] {
                            n += 1;
                            let src = &self.values[i * self.channels..(i + 1) * self.channels];
                            for (d, s) in out.values[o * self.channels..(o + 1) * self.channels]
                                .iter_mut()
                                .zip(src)
                            {
                                *d += s;
                            }
                        }
                    }
                }
                if n > 0 {
                    out.mask[o] = true;
                    out.pixel_mut(o).iter_mut().for_each(|v| *v /= n as f64);
                }
            }
        }
        out
    }

    /// Zeroes every unmasked pixel.
    pub fn apply_mask(&mut self) {
        for i in 0..self.mask.len() {
            if !self.mask[i] {
                self.pixel_mut(i).fill(0.0);
            }
        }
    }
}

fn encode_scalar(p: f64, n_freq: usize, out: &mut [f64]) {
    for l in 0..n_freq {
        let (s, c) = ((1u64 << l) as f64 * PI * p).sin_cos();
        out[2 * l] = s;
        out[2 * l + 1] = c;
    }
}

/// Encodes one model-frame coordinate.
pub fn encode_point(c: &[f64; 3], cfg: &EncodingConfig, out: &mut [f64]) {
    let k = 2 * cfg.n_freq;
    for a in 0..3 {
        let p = c[a] / cfg.half_extent;
        if p.abs() > 1.0 + 1e-6 {
            log::warn!("coordinate {p:.6} outside the encoding range, clamped");
        }
        encode_scalar(p.clamp(-1.0, 1.0), cfg.n_freq, &mut out[a * k..(a + 1) * k]);
    }
}

pub fn positional_encode(geom: &GeometryMap, cfg: &EncodingConfig) -> EncodedGeometryMap {
    let mut out = EncodedGeometryMap::zeros(geom.width, geom.height, cfg.channels());
    for i in 0..geom.mask.len() {
        if geom.mask[i] {
            let c = geom.coords[i].map(|v| v as f64);
            encode_point(&c, cfg, out.pixel_mut(i));
            out.mask[i] = true;
        }
    }
    out
}

/// Phase-unwraps one coordinate: band 0 gives an unambiguous estimate, each
/// finer band then picks its branch nearest the running estimate.
fn decode_scalar(bands: &[f64], n_freq: usize) -> Option<f64> {
    let mut p = 0.0;
    for l in 0..n_freq {
        let (s, c) = (bands[2 * l], bands[2 * l + 1]);
        if s.hypot(c) < MIN_BAND_AMPLITUDE {
            return None;
        }
        let f = (1u64 << l) as f64;
        let phase = s.atan2(c) / (f * PI);
        if l == 0 {
            p = phase;
        } else {
            let period = 2.0 / f;
            p = phase + ((p - phase) / period).round() * period;
        }
    }
    Some(p)
}

/// Inverse of [`encode_point`]; `None` when a band has lost its phase.
pub fn decode_point(px: &[f64], cfg: &EncodingConfig) -> Option<[f64; 3]> {
    let k = 2 * cfg.n_freq;
    let mut c = [0.0; 3];
    for (a, v) in c.iter_mut().enumerate() {
        *v = decode_scalar(&px[a * k..(a + 1) * k], cfg.n_freq)? * cfg.half_extent;
    }
    Some(c)
}

/// Inverse of [`positional_encode`]. Decoded maps carry no depth.
pub fn positional_decode(enc: &EncodedGeometryMap, cfg: &EncodingConfig) -> Result<GeometryMap> {
    if enc.channels != cfg.channels() {
        return Err(Error::DimMismatch(format!(
            "encoding has {} channels, config expects {}",
            enc.channels,
            cfg.channels()
        )));
    }
    let mut out = GeometryMap::empty(enc.width, enc.height);
    for i in 0..enc.mask.len() {
        if !enc.mask[i] {
            continue;
        }
        let c = decode_point(enc.pixel(i), cfg).ok_or(Error::InconsistentBands {
            x: i % enc.width,
            y: i / enc.width,
        })?;
        out.set(i, c.map(|v| v as f32), 0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn one_pixel(c: [f32; 3]) -> GeometryMap {
        let mut g = GeometryMap::empty(1, 1);
        g.set(0, c, 1.0);
        g
    }

    #[test]
    fn zero_maps_to_unit_cosines() {
        let e = positional_encode(&one_pixel([0.0; 3]), &EncodingConfig::default());
        assert_eq!(e.channels, 30);
        for (j, v) in e.pixel(0).iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn quarter_period_on_band_zero() {
        let cfg = EncodingConfig::for_diameter(5, 2.0);
        let e = positional_encode(&one_pixel([0.5, 0.0, 0.0]), &cfg);
        assert!((e.pixel(0)[0] - 1.0).abs() < 1e-15);
        assert!(e.pixel(0)[1].abs() < 1e-15);
    }

    #[test]
    fn unmasked_pixels_stay_empty() {
        let cfg = EncodingConfig::default();
        let e = EncodedGeometryMap::zeros(4, 3, cfg.channels());
        let g = positional_decode(&e, &cfg).unwrap();
        assert_eq!(g.mask_count(), 0);
        assert_eq!(positional_encode(&GeometryMap::empty(4, 3), &cfg), e);
    }

    #[test]
    fn dead_band_is_inconsistent() {
        let cfg = EncodingConfig::default();
        let mut e = positional_encode(&one_pixel([0.1, 0.2, 0.3]), &cfg);
        e.pixel_mut(0)[12] = 0.0;
        e.pixel_mut(0)[13] = 0.0;
        assert!(matches!(positional_decode(&e, &cfg), Err(Error::InconsistentBands { x: 0, y: 0 })));
    }

    #[test]
    fn channel_count_checked() {
        let e = EncodedGeometryMap::zeros(2, 2, 12);
        assert!(positional_decode(&e, &EncodingConfig::default()).is_err());
    }

    #[test]
    fn noisy_decode_is_close() {
        let cfg = EncodingConfig::for_diameter(5, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut errs = Vec::new();
        for _ in 0..2000 {
            let c = [0; 3].map(|_| rng.gen_range(-0.499..0.499f32));
            let mut e = positional_encode(&one_pixel(c), &cfg);
            e.pixel_mut(0).iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
            let d = positional_decode(&e, &cfg).unwrap();
            for a in 0..3 {
                errs.push(((d.coords[0][a] - c[a]) as f64).abs() / 0.5);
            }
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[errs.len() * 95 / 100] < 0.01);
    }

    #[test]
    fn pooling_averages_masked_pixels() {
        let mut e = EncodedGeometryMap::zeros(2, 2, 1);
        e.values = vec![1.0, 3.0, 5.0, 100.0];
        e.mask = vec![true, true, true, false];
        let p = e.pool(2);
        assert_eq!(p.values, vec![3.0]);
        assert!(p.mask[0]);
    }

    proptest! {
        #[test]
        fn round_trip(x in -0.999f64..0.999, y in -0.999f64..0.999, z in -0.999f64..0.999, d in 0.1f64..5.0) {
            let cfg = EncodingConfig::for_diameter(5, d);
            let h = d * 0.5;
            let c = [(x * h) as f32, (y * h) as f32, (z * h) as f32];
            let back = positional_decode(&positional_encode(&one_pixel(c), &cfg), &cfg).unwrap();
            for a in 0..3 {
                prop_assert!(((back.coords[0][a] - c[a]) as f64).abs() < 1e-6 * h);
            }
        }
    }
}
