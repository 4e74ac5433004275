use super::layers::Tensor;
use crate::error::{Error, Result};

/// Upsampling factor of the convex upsampler.
pub const UPSAMPLE: usize = 8;
/// Mask logits per coarse cell: 9 neighbors × 8×8 sub-pixels.
pub const MASK_CHANNELS: usize = 9 * UPSAMPLE * UPSAMPLE;

/// Per fine pixel, softmax weights over its 3×3 coarse neighborhood. Logit
/// `k·64 + sy·8 + sx` of a coarse cell belongs to neighbor `k` (row-major,
/// `(dy+1)·3 + dx+1`) and sub-pixel `(sx, sy)`. Neighbors beyond the border
/// are dropped and the rest renormalized.
#[derive(Clone, Debug)]
pub struct UpsampleWeights {
    pub width: usize,
    pub height: usize,
    coarse_width: usize,
    /// `(coarse index, weight)` per fine pixel, 9 slots, unused slots weight 0.
    taps: Vec<[(u32, f64); 9]>,
}

impl UpsampleWeights {
    pub fn new(mask: &Tensor) -> Result<Self> {
        if mask.channels != MASK_CHANNELS {
            return Err(Error::DimMismatch(format!(
                "up-mask has {} channels, expected {MASK_CHANNELS}",
                mask.channels
            )));
        }
        let (cw, ch) = (mask.width, mask.height);
        let (w, h) = (cw * UPSAMPLE, ch * UPSAMPLE);
        let mut taps = vec![[(0u32, 0.0); 9]; w * h];
        for cy in 0..ch {
            for cx in 0..cw {
                let logits = mask.pixel(cy * cw + cx);
                for sy in 0..UPSAMPLE {
                    for sx in 0..UPSAMPLE {
                        let mut slot = [(0u32, 0.0); 9];
                        let mut m = f64::NEG_INFINITY;
                        for k in 0..9 {
                            let (nx, ny) = (cx as i64 + (k % 3) as i64 - 1, cy as i64 + (k / 3) as i64 - 1);
                            if nx >= 0 && ny >= 0 && nx < cw as i64 && ny < ch as i64 {
                                m = m.max(logits[k * UPSAMPLE * UPSAMPLE + sy * UPSAMPLE + sx]);
                            }
                        }
                        let mut z = 0.0;
                        for (k, s) in slot.iter_mut().enumerate() {
                            let (nx, ny) = (cx as i64 + (k % 3) as i64 - 1, cy as i64 + (k / 3) as i64 - 1);
                            if nx >= 0 && ny >= 0 && nx < cw as i64 && ny < ch as i64 {
                                let e = (logits[k * UPSAMPLE * UPSAMPLE + sy * UPSAMPLE + sx] - m).exp();
                                *s = ((ny as usize * cw + nx as usize) as u32, e);
                                z += e;
                            }
                        }
                        slot.iter_mut().for_each(|s| s.1 /= z);
                        let (fx, fy) = (cx * UPSAMPLE + sx, cy * UPSAMPLE + sy);
                        taps[fy * w + fx] = slot;
                    }
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            coarse_width: cw,
            taps,
        })
    }

    fn check(&self, coarse: &Tensor) -> Result<()> {
        if coarse.width != self.coarse_width || coarse.width * UPSAMPLE * coarse.height * UPSAMPLE != self.taps.len() {
            return Err(Error::DimMismatch("coarse field does not match the up-mask".into()));
        }
        Ok(())
    }

    pub fn apply(&self, coarse: &Tensor) -> Result<Tensor> {
        self.check(coarse)?;
        let c = coarse.channels;
        let mut out = Tensor::zeros(self.width, self.height, c);
        for (i, slot) in self.taps.iter().enumerate() {
            let dst = &mut out.data[i * c..(i + 1) * c];
            for &(k, w) in slot.iter().filter(|s| s.1 > 0.0) {
                for (d, v) in dst.iter_mut().zip(coarse.pixel(k as usize)) {
                    *d += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Upsamples channel `c` of a flat coarse channel plane into `out`.
    pub fn apply_plane(&self, plane: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().zip(&self.taps) {
            *o = slot.iter().map(|&(k, w)| w * plane[k as usize]).sum();
        }
    }
}

/// Learned convex 8× upsampling of `coarse` under `up_mask` logits.
pub fn convex_upsample(coarse: &Tensor, up_mask: &Tensor) -> Result<Tensor> {
    if !coarse.same_grid(up_mask) {
        return Err(Error::DimMismatch("coarse field and up-mask grids differ".into()));
    }
    UpsampleWeights::new(up_mask)?.apply(coarse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(w: usize, h: usize, c: usize, lo: f64, hi: f64, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(w, h, c, |_, _, _| rng.gen_range(lo..hi))
    }

    #[test]
    fn constants_are_preserved() {
        let coarse = Tensor::from_fn(4, 3, 2, |_, _, c| if c == 0 { 0.37 } else { -2.5 });
        let out = convex_upsample(&coarse, &random(4, 3, MASK_CHANNELS, -30.0, 30.0, 1)).unwrap();
        assert_eq!((out.width, out.height), (32, 24));
        for p in out.data.chunks(2) {
            assert!((p[0] - 0.37).abs() <= 1e-12 && (p[1] + 2.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_center_is_nearest_neighbor() {
        let coarse = random(3, 3, 4, -1.0, 1.0, 2);
        let mask = Tensor::from_fn(3, 3, MASK_CHANNELS, |_, _, c| if c / 64 == 4 { 20.0 } else { 0.0 });
        let out = convex_upsample(&coarse, &mask).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                for c in 0..4 {
                    assert!((out.at(x, y, c) - coarse.at(x / 8, y / 8, c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn output_stays_in_neighborhood_bounds() {
        let coarse = Tensor::from_fn(5, 4, 1, |x, y, _| x as f64 * 0.3 - y as f64 * 0.7);
        let noisy = random(5, 4, 3, -5.0, 5.0, 3);
        let mut mask = random(5, 4, MASK_CHANNELS, -3.0, 3.0, 4);
        for (i, v) in mask.data.iter_mut().enumerate() {
            if (i % MASK_CHANNELS) / 64 == 4 {
                *v += 4.0;
            }
        }
        for field in [&coarse, &noisy] {
            let out = convex_upsample(field, &mask).unwrap();
            for y in 0..32usize {
                for x in 0..40usize {
                    let (cx, cy) = (x / 8, y / 8);
                    for c in 0..field.channels {
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        for ny in cy.saturating_sub(1)..=(cy + 1).min(3) {
                            for nx in cx.saturating_sub(1)..=(cx + 1).min(4) {
                                lo = lo.min(field.at(nx, ny, c));
                                hi = hi.max(field.at(nx, ny, c));
                            }
                        }
                        let v = out.at(x, y, c);
                        assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sub_pixels_get_distinct_weights() {
        let coarse = random(2, 2, 1, -1.0, 1.0, 5);
        let out = convex_upsample(&coarse, &random(2, 2, MASK_CHANNELS, -2.0, 2.0, 6)).unwrap();
        assert_ne!(out.at(0, 0, 0), out.at(1, 0, 0));
    }

    #[test]
    fn plane_matches_full_apply() {
        let coarse = random(3, 2, 3, -1.0, 1.0, 7);
        let w = UpsampleWeights::new(&random(3, 2, MASK_CHANNELS, -2.0, 2.0, 8)).unwrap();
        let full = w.apply(&coarse).unwrap();
        let plane: Vec<f64> = (0..6).map(|i| coarse.pixel(i)[1]).collect();
        let mut out = vec![0.0; 24 * 16];
        w.apply_plane(&plane, &mut out);
        for (i, v) in out.iter().enumerate() {
            assert!((full.pixel(i)[1] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_mask_width_is_rejected() {
        assert!(convex_upsample(&Tensor::zeros(2, 2, 1), &Tensor::zeros(2, 2, 10)).is_err());
        assert!(convex_upsample(&Tensor::zeros(2, 2, 1), &Tensor::zeros(3, 2, MASK_CHANNELS)).is_err());
    }
}
