use super::features::{dot, FeatureMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationMode {
    /// Every query cell against every key cell.
    Full,
    /// Each query cell against the `(2r + 1)²` key cells around the same position.
    Windowed(usize),
}

/// Pairwise feature similarities. Rows are query cells (raster order).
/// Windowed entries whose key falls outside the map hold `OUTSIDE`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVolume {
    pub width: usize,
    pub height: usize,
    pub mode: CorrelationMode,
    values: Vec<f32>,
}

impl CorrelationVolume {
    pub const OUTSIDE: f32 = -1.0;

    /// Wraps raw similarities laid out as [`correlate`] produces them.
    pub fn from_values(width: usize, height: usize, mode: CorrelationMode, values: Vec<f32>) -> Result<Self> {
        let v = Self {
            width,
            height,
            mode,
            values: Vec::new(),
        };
        if values.len() != v.rows() * v.row_len() {
            return Err(Error::DimMismatch(format!(
                "{} similarities for a {width}x{height} volume",
                values.len()
            )));
        }
        Ok(Self { values, ..v })
    }

    /// Key cell of column `j` in row `p`; `None` outside the map.
    pub fn key(&self, p: usize, j: usize) -> Option<usize> {
        match self.mode {
            CorrelationMode::Full => Some(j),
            CorrelationMode::Windowed(r) => {
                let side = 2 * r + 1;
                let x = (p % self.width) as i64 + (j % side) as i64 - r as i64;
                let y = (p / self.width) as i64 + (j / side) as i64 - r as i64;
                ((0..self.width as i64).contains(&x) && (0..self.height as i64).contains(&y))
                    .then(|| y as usize * self.width + x as usize)
            }
        }
    }

    pub fn row_len(&self) -> usize {
        match self.mode {
            CorrelationMode::Full => self.width * self.height,
            CorrelationMode::Windowed(r) => (2 * r + 1) * (2 * r + 1),
        }
    }

    pub fn rows(&self) -> usize {
        self.width * self.height
    }

    pub fn row(&self, p: usize) -> &[f32] {
        let n = self.row_len();
        &self.values[p * n..(p + 1) * n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column of the row maximum; ties go to the lowest column.
    pub fn row_argmax(&self, p: usize) -> usize {
        let mut best = 0;
        for (j, &v) in self.row(p).iter().enumerate() {
            if v > self.row(p)[best] {
                best = j;
            }
        }
        best
    }
}

pub fn correlate(a: &FeatureMap, b: &FeatureMap, mode: CorrelationMode) -> Result<CorrelationVolume> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimMismatch(format!(
            "correlating {}x{} with {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let values = match mode {
        CorrelationMode::Full => {
            let n = w * h;
            let mut v = Vec::with_capacity(n * n);
            for p in 0..n {
                let fa = a.feature(p);
                v.extend((0..n).map(|q| dot(fa, b.feature(q))));
            }
            v
        }
        CorrelationMode::Windowed(r) => {
            let side = 2 * r + 1;
            let mut v = Vec::with_capacity(w * h * side * side);
            let r = r as i64;
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let fa = a.feature_at(x as usize, y as usize);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (qx, qy) = (x + dx, y + dy);
                            v.push(if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                                CorrelationVolume::OUTSIDE
                            } else {
                                dot(fa, b.feature_at(qx as usize, qy as usize))
                            });
                        }
                    }
                }
            }
            v
        }
    };
    Ok(CorrelationVolume {
        width: w,
        height: h,
        mode,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::features::{build_feature_pyramid, FEATURE_DIM};
    use crate::render::ImageBuffer;

    fn textured(shift: (i64, i64)) -> ImageBuffer {
        let mut img = ImageBuffer::new(128, 128, 1);
        for y in 0..128 {
            for x in 0..128 {
                let (u, v) = ((x - shift.0) as f32, (y - shift.1) as f32);
                let val = 0.5 + 0.2 * (u * 0.13 + v * 0.05).sin() + 0.2 * (u * 0.04 - v * 0.11).cos();
                img.set(x as usize, y as usize, 0, val);
            }
        }
        img
    }

    #[test]
    fn self_correlation_argmax_on_diagonal() {
        let p = build_feature_pyramid(&textured((0, 0)), 1).unwrap();
        let c = correlate(&p.levels[0], &p.levels[0], CorrelationMode::Full).unwrap();
        for i in 0..c.rows() {
            assert_eq!(c.row_argmax(i), i);
        }
        assert!(c.values().iter().all(|v| v.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn orthonormal_features_are_uncorrelated() {
        let vecs: Vec<Vec<f32>> = (0..4)
            .map(|i| {
                let mut v = vec![0.0; FEATURE_DIM];
                v[2 * i] = std::f32::consts::FRAC_1_SQRT_2;
                v[2 * i + 1] = -std::f32::consts::FRAC_1_SQRT_2;
                v
            })
            .collect();
        let m = FeatureMap::from_vectors(2, 2, 8, &vecs).unwrap();
        let c = correlate(&m, &m, CorrelationMode::Full).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((c.row(p)[q] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shifted_pair_displaces_argmax() {
        let a = build_feature_pyramid(&textured((0, 0)), 1).unwrap();
        let b = build_feature_pyramid(&textured((16, -8)), 1).unwrap();
        let c = correlate(&a.levels[0], &b.levels[0], CorrelationMode::Windowed(3)).unwrap();
        // Window index of (dx, dy) = (2, -1) cells.
        let want = (-1 + 3) * 7 + (2 + 3);
        let w = c.width;
        for y in 3..12 {
            for x in 3..12 {
                assert_eq!(c.row_argmax(y * w + x), want as usize, "cell ({x}, {y})");
            }
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = FeatureMap::zeros(4, 4, 8);
        let b = FeatureMap::zeros(4, 5, 8);
        assert!(matches!(
            correlate(&a, &b, CorrelationMode::Full),
            Err(Error::DimMismatch(_))
        ));
    }
}
