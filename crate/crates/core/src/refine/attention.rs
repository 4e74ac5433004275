use super::encoding::EncodedGeometryMap;
use super::layers::Tensor;
use crate::error::{Error, Result};
use crate::flow::{CorrelationVolume, FEATURE_DIM};

/// Softmax temperature `1/√C` for `C`-dimensional features.
pub fn temperature(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

/// Softmax over row `p` of `corr / tau`, as `(key cell, weight)` pairs.
/// Keys outside the map are skipped.
pub fn attention_weights(corr: &CorrelationVolume, p: usize, tau: f64) -> Vec<(usize, f64)> {
    let row = corr.row(p);
    let keyed: Vec<(usize, f64)> = (0..row.len())
        .filter_map(|j| corr.key(p, j).map(|k| (k, row[j] as f64 / tau)))
        .collect();
    let m = keyed.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<(usize, f64)> = keyed.iter().map(|&(k, l)| (k, (l - m).exp())).collect();
    let z: f64 = out.iter().map(|&(_, e)| e).sum();
    out.iter_mut().for_each(|(_, e)| *e /= z);
    out
}

/// Correlation-guided attention on a raw tensor.
pub fn attend(corr: &CorrelationVolume, value: &Tensor, tau: f64) -> Result<Tensor> {
    if value.width != corr.width || value.height != corr.height {
        return Err(Error::DimMismatch(format!(
            "value {}x{} against a {}x{} correlation volume",
            value.width, value.height, corr.width, corr.height
        )));
    }
    let mut out = Tensor::zeros(value.width, value.height, value.channels);
    for p in 0..corr.rows() {
        let dst = out.pixel_mut(p);
        for (k, w) in attention_weights(corr, p, tau) {
            for (d, v) in dst.iter_mut().zip(value.pixel(k)) {
                *d += w * v;
            }
        }
    }
    Ok(out)
}

/// `out(p) = Σ_q softmax_q(corr(p, q)·√C)·value(q)` with `C` the flow feature
/// dimension. Every output pixel is masked.
pub fn cg_attention(corr: &CorrelationVolume, value: &EncodedGeometryMap) -> Result<EncodedGeometryMap> {
    let t = Tensor {
        width: value.width,
        height: value.height,
        channels: value.channels,
        data: value.values.clone(),
    };
    let a = attend(corr, &t, temperature(FEATURE_DIM))?;
    Ok(EncodedGeometryMap {
        width: a.width,
        height: a.height,
        channels: a.channels,
        values: a.data,
        mask: vec![true; a.width * a.height],
    })
}

/// Scaled dot-product attention with queries and keys already projected.
pub fn dot_product_attention(q: &Tensor, k: &Tensor, value: &Tensor) -> Result<Tensor> {
    if !q.same_grid(k) || !k.same_grid(value) || q.channels != k.channels {
        return Err(Error::DimMismatch("attention operands disagree in shape".into()));
    }
    let n = q.width * q.height;
    let scale = 1.0 / (q.channels as f64).sqrt();
    let mut out = Tensor::zeros(value.width, value.height, value.channels);
    let mut logits = vec![0.0; n];
    for p in 0..n {
        let qp = q.pixel(p);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = scale * qp.iter().zip(k.pixel(j)).map(|(a, b)| a * b).sum::<f64>();
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            z += *l;
        }
        let dst = out.pixel_mut(p);
        for (j, &e) in logits.iter().enumerate() {
            let w = e / z;
            for (d, v) in dst.iter_mut().zip(value.pixel(j)) {
                *d += w * v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::CorrelationMode;
    use rand::{Rng, SeedableRng};

    fn value(w: usize, h: usize, c: usize, seed: u64) -> EncodedGeometryMap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = EncodedGeometryMap::zeros(w, h, c);
        v.values.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        v.mask.fill(true);
        v
    }

    fn random_corr(w: usize, h: usize, mode: CorrelationMode, seed: u64) -> CorrelationVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = w * h
            * match mode {
                CorrelationMode::Full => w * h,
                CorrelationMode::Windowed(r) => (2 * r + 1) * (2 * r + 1),
            };
        CorrelationVolume::from_values(w, h, mode, (0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect()).unwrap()
    }

    #[test]
    fn one_hot_rows_copy_the_value() {
        let (w, h) = (4, 3);
        let v = value(w, h, 6, 1);
        let mut raw = vec![0.0f32; (w * h) * (w * h)];
        for p in 0..w * h {
            raw[p * w * h + (p * 5) % (w * h)] = 20.0;
        }
        let c = CorrelationVolume::from_values(w, h, CorrelationMode::Full, raw).unwrap();
        let out = cg_attention(&c, &v).unwrap();
        for p in 0..w * h {
            for (a, b) in out.pixel(p).iter().zip(v.pixel((p * 5) % (w * h))) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_rows_average_the_value() {
        let (w, h) = (3, 3);
        let v = value(w, h, 4, 2);
        let c = CorrelationVolume::from_values(w, h, CorrelationMode::Full, vec![0.3; 81]).unwrap();
        let out = cg_attention(&c, &v).unwrap();
        for ch in 0..4 {
            let mean = (0..9).map(|i| v.pixel(i)[ch]).sum::<f64>() / 9.0;
            assert!((out.pixel(4)[ch] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_reference_and_rows_are_convex() {
        let (w, h, ch) = (5, 4, 3);
        let v = value(w, h, ch, 3);
        let c = random_corr(w, h, CorrelationMode::Full, 4);
        let out = cg_attention(&c, &v).unwrap();
        let tau = temperature(FEATURE_DIM);
        for p in 0..w * h {
            let logits: Vec<f64> = c.row(p).iter().map(|&x| x as f64 / tau).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let weights: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let s: f64 = attention_weights(&c, p, tau).iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-6);
            for k in 0..ch {
                let r: f64 = (0..w * h).map(|q| weights[q] * v.pixel(q)[k]).sum();
                assert!((out.pixel(p)[k] - r).abs() < 1e-6);
                let lo = (0..w * h).map(|q| v.pixel(q)[k]).fold(f64::INFINITY, f64::min);
                let hi = (0..w * h).map(|q| v.pixel(q)[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.pixel(p)[k] >= lo - 1e-12 && out.pixel(p)[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn windowed_volume_attends_inside_the_map() {
        let (w, h) = (4, 4);
        let c = random_corr(w, h, CorrelationMode::Windowed(1), 5);
        let corner = attention_weights(&c, 0, 0.5);
        assert_eq!(corner.len(), 4);
        assert!((corner.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(attention_weights(&c, 5, 0.5).len(), 9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let c = random_corr(3, 3, CorrelationMode::Full, 6);
        assert!(matches!(cg_attention(&c, &value(4, 3, 2, 0)), Err(Error::DimMismatch(_))));
    }
}
