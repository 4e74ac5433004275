use crate::error::{Error, Result};
use crate::render::ImageBuffer;

/// Feature dimension: 25 patch values, 2 Sobel responses, 4 orientation bins.
pub const FEATURE_DIM: usize = 31;
/// Storage stride per cell (one zero pad lane).
pub const FEATURE_STRIDE: usize = 32;
/// Downsampling factor of pyramid level 0.
pub const BASE_CELL: usize = 8;
/// Smallest accepted input side.
pub const MIN_IMAGE_SIDE: usize = 32;

const PATCH_RADIUS: i64 = 2;
const FLAT_PATCH_VARIANCE: f32 = 1e-8;

/// Dense per-cell features of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    /// Pixel size of one cell in the source image.
    pub cell: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, cell: usize) -> Self {
        Self {
            width,
            height,
            cell,
            data: vec![0.0; width * height * FEATURE_STRIDE],
        }
    }

    /// Builds a map from explicit feature vectors (each `FEATURE_DIM` long or
    /// shorter, zero-filled).
    pub fn from_vectors(width: usize, height: usize, cell: usize, vectors: &[Vec<f32>]) -> Result<Self> {
        if vectors.len() != width * height || vectors.iter().any(|v| v.len() > FEATURE_DIM) {
            return Err(Error::DimMismatch("feature vectors do not fit the map".into()));
        }
        let mut m = Self::zeros(width, height, cell);
        for (i, v) in vectors.iter().enumerate() {
            m.data[i * FEATURE_STRIDE..i * FEATURE_STRIDE + v.len()].copy_from_slice(v);
        }
        Ok(m)
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.data[i * FEATURE_STRIDE..(i + 1) * FEATURE_STRIDE]
    }

    #[inline]
    pub fn feature_at(&self, x: usize, y: usize) -> &[f32] {
        self.feature(y * self.width + x)
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.feature(i).iter().all(|&v| v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    acc.iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    /// Level 0 at 1/8 resolution, each further level halved.
    pub levels: Vec<FeatureMap>,
    pub image_width: usize,
    pub image_height: usize,
}

/// Handcrafted, zero-mean, unit-norm per-cell descriptors. Level `l` has
/// cells of `8·2^l` pixels; each descriptor reads the cell-mean grey image on
/// the 5x5 cell neighborhood.
pub fn build_feature_pyramid(image: &ImageBuffer, levels: usize) -> Result<FeaturePyramid> {
    if image.width < MIN_IMAGE_SIDE || image.height < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            min: MIN_IMAGE_SIDE,
        });
    }
    let gray = image.to_gray();
    let mut out = Vec::with_capacity(levels);
    let mut cell = BASE_CELL;
    let mut small = box_downsample(&gray.data, gray.width, gray.height, BASE_CELL);
    for l in 0..levels.max(1) {
        if l > 0 {
            if small.1 < 4 || small.2 < 4 {
                break;
            }
            cell *= 2;
            small = box_downsample(&small.0, small.1, small.2, 2);
        }
        out.push(describe(&small.0, small.1, small.2, cell));
    }
    Ok(FeaturePyramid {
        levels: out,
        image_width: gray.width,
        image_height: gray.height,
    })
}

/// Mean over non-overlapping `f x f` blocks; trailing partial blocks dropped.
pub(crate) fn box_downsample(src: &[f32], w: usize, h: usize, f: usize) -> (Vec<f32>, usize, usize) {
    let (ow, oh) = (w / f, h / f);
    let mut out = vec![0.0f32; ow * oh];
    let norm = 1.0 / (f * f) as f32;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s = 0.0f32;
            for y in oy * f..(oy + 1) * f {
                s += src[y * w + ox * f..y * w + (ox + 1) * f].iter().sum::<f32>();
            }
            out[oy * ow + ox] = s * norm;
        }
    }
    (out, ow, oh)
}

pub(crate) fn describe(g: &[f32], cw: usize, ch: usize, cell: usize) -> FeatureMap {
    let mut map = FeatureMap::zeros(cw, ch, cell);
    let mut f = [0.0f32; FEATURE_DIM];
    for cy in 0..ch {
        for cx in 0..cw {
            let (x, y) = (cx as i64, cy as i64);
            let at = |dx: i64, dy: i64| {
                let xc = (x + dx).clamp(0, cw as i64 - 1) as usize;
                let yc = (y + dy).clamp(0, ch as i64 - 1) as usize;
                g[yc * cw + xc]
            };
            let mut k = 0;
            let mut mean = 0.0f32;
            for dy in -PATCH_RADIUS..=PATCH_RADIUS {
                for dx in -PATCH_RADIUS..=PATCH_RADIUS {
                    f[k] = at(dx, dy);
                    mean += f[k];
                    k += 1;
                }
            }
            mean /= 25.0;
            let var = f[..25].iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 25.0;
            if var < FLAT_PATCH_VARIANCE {
                continue;
            }
            for v in &mut f[..25] {
                *v -= mean;
            }
            let sx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
            let sy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
            f[25] = sx / 4.0;
            f[26] = sy / 4.0;
            let mut bins = [0.0f32; 4];
            for dy in -PATCH_RADIUS..=PATCH_RADIUS {
                for dx in -PATCH_RADIUS..=PATCH_RADIUS {
                    let gx = (at(dx + 1, dy) - at(dx - 1, dy)) * 0.5;
                    let gy = (at(dx, dy + 1) - at(dx, dy - 1)) * 0.5;
                    let m = (gx * gx + gy * gy).sqrt();
                    if m == 0.0 {
                        continue;
                    }
                    // Unsigned orientation in [0, 4) bin units, linear soft assignment.
                    let mut a = gy.atan2(gx);
                    if a < 0.0 {
                        a += std::f32::consts::PI;
                    }
                    let pos = (a / (std::f32::consts::PI / 4.0)) % 4.0;
                    let b0 = pos.floor() as usize % 4;
                    let t = pos - pos.floor();
                    bins[b0] += m * (1.0 - t);
                    bins[(b0 + 1) % 4] += m * t;
                }
            }
            for (i, b) in bins.iter().enumerate() {
                f[27 + i] = b / 12.5;
            }
            let mu = f.iter().sum::<f32>() / FEATURE_DIM as f32;
            let mut norm = 0.0f32;
            for v in f.iter_mut() {
                *v -= mu;
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            if norm < 1e-12 {
                continue;
            }
            let i = (cy * cw + cx) * FEATURE_STRIDE;
            for (d, v) in f.iter().enumerate() {
                map.data[i + d] = v / norm;
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn textured(width: usize, height: usize, shift: (i64, i64)) -> ImageBuffer {
        let mut img = ImageBuffer::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = ((x as i64 - shift.0) as f32, (y as i64 - shift.1) as f32);
                let val = 0.5
                    + 0.2 * (u * 0.071 + v * 0.023).sin()
                    + 0.15 * (u * 0.019 - v * 0.083 + 1.0).sin()
                    + 0.1 * ((u + v) * 0.041).cos();
                img.set(x, y, 0, val);
            }
        }
        img
    }

    #[test]
    fn level_sizes() {
        let p = build_feature_pyramid(&textured(256, 256, (0, 0)), 3).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(32, 32), (16, 16), (8, 8)]);
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(
            build_feature_pyramid(&ImageBuffer::new(31, 64, 1), 1),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn constant_image_has_zero_features() {
        let mut img = ImageBuffer::new(64, 64, 3);
        img.data.iter_mut().for_each(|v| *v = 0.4);
        let p = build_feature_pyramid(&img, 2).unwrap();
        for l in &p.levels {
            assert!((0..l.len()).all(|i| l.is_zero(i)));
        }
    }

    #[test]
    fn features_are_unit_norm_zero_mean() {
        let p = build_feature_pyramid(&textured(128, 96, (0, 0)), 2).unwrap();
        for l in &p.levels {
            for i in 0..l.len() {
                let f = &l.feature(i)[..FEATURE_DIM];
                let n: f32 = f.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-6, "norm {n}");
                assert!(f.iter().sum::<f32>().abs() < 1e-5);
                assert_eq!(l.feature(i)[FEATURE_DIM], 0.0);
            }
        }
    }

    #[test]
    fn eight_pixel_shift_moves_one_cell() {
        let a = build_feature_pyramid(&textured(256, 256, (0, 0)), 1).unwrap();
        let b = build_feature_pyramid(&textured(256, 256, (8, 0)), 1).unwrap();
        let (la, lb) = (&a.levels[0], &b.levels[0]);
        for y in 3..29 {
            for x in 3..28 {
                let c = dot(la.feature_at(x, y), lb.feature_at(x + 1, y));
                assert!(c > 0.99, "cos {c} at ({x}, {y})");
            }
        }
    }
}
