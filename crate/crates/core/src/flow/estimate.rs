use serde::{Deserialize, Serialize};

use super::features::{box_downsample, build_feature_pyramid, dot, FeatureMap, FeaturePyramid};
use super::field::FlowField;
use crate::error::{Error, Result};
use crate::render::ImageBuffer;

/// Correlations at or above this are treated as an exact match and skip the
/// subpixel fit.
const UNIT_PEAK: f32 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub levels: usize,
    /// Search window radius in cells, per level.
    pub radius: usize,
    /// Quadratic fit on the 3x3 correlations around the argmax.
    pub subpixel: bool,
    /// Photometric least-squares polish of each level-0 match.
    pub polish: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            radius: 4,
            subpixel: true,
            polish: true,
        }
    }
}

/// Matching result on the level-0 cell grid. Displacements are in cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFlow {
    pub width: usize,
    pub height: usize,
    /// Source pixels per cell.
    pub cell: usize,
    pub du: Vec<f32>,
    pub dv: Vec<f32>,
    /// Correlation at the matched cell.
    pub peak: Vec<f32>,
    pub valid: Vec<bool>,
}

impl CellFlow {
    fn new(width: usize, height: usize, cell: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            cell,
            du: vec![0.0; n],
            dv: vec![0.0; n],
            peak: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Valid-weighted bilinear sample at continuous cell coordinates.
    fn sample(&self, x: f32, y: f32) -> Option<(f32, f32)> {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let (mut su, mut sv, mut sw) = (0.0f32, 0.0f32, 0.0f32);
        for (tx, ty, w) in taps {
            let i = ty * self.width + tx;
            if self.valid[i] && w > 0.0 {
                su += w * self.du[i];
                sv += w * self.dv[i];
                sw += w;
            }
        }
        (sw > 1e-6).then(|| (su / sw, sv / sw))
    }

    /// Full-resolution field: bilinear interpolation of the cell flow, scaled
    /// to pixels. A pixel is valid when its containing cell is.
    pub fn upsample(&self, width: usize, height: usize) -> FlowField {
        let mut out = FlowField::invalid(width, height);
        let c = self.cell as f32;
        for y in 0..height {
            let cy = y / self.cell;
            for x in 0..width {
                let cx = x / self.cell;
                if cx >= self.width || cy >= self.height || !self.valid[cy * self.width + cx] {
                    continue;
                }
                let (gx, gy) = ((x as f32 + 0.5) / c - 0.5, (y as f32 + 0.5) / c - 0.5);
                if let Some((u, v)) = self.sample(gx, gy) {
                    out.set(y * width + x, u * c, v * c);
                }
            }
        }
        out
    }

    /// Forward-backward error per cell in source pixels, `None` where either
    /// direction is invalid or the forward target leaves the grid.
    pub fn forward_backward(&self, back: &CellFlow) -> Vec<Option<f32>> {
        (0..self.width * self.height)
            .map(|i| {
                if !self.valid[i] {
                    return None;
                }
                let (x, y) = ((i % self.width) as f32, (i / self.width) as f32);
                let (tx, ty) = ((x + self.du[i]).round(), (y + self.dv[i]).round());
                if tx < 0.0 || ty < 0.0 || tx >= back.width as f32 || ty >= back.height as f32 {
                    return None;
                }
                let j = ty as usize * back.width + tx as usize;
                if !back.valid[j] {
                    return None;
                }
                let (eu, ev) = (self.du[i] + back.du[j], self.dv[i] + back.dv[j]);
                Some((eu * eu + ev * ev).sqrt() * self.cell as f32)
            })
            .collect()
    }
}

pub fn estimate_flow(query: &ImageBuffer, target: &ImageBuffer, cfg: &FlowConfig) -> Result<FlowField> {
    Ok(estimate_flow_detailed(query, target, cfg)?.0)
}

/// Flow plus the underlying level-0 cell matches.
pub fn estimate_flow_detailed(
    query: &ImageBuffer,
    target: &ImageBuffer,
    cfg: &FlowConfig,
) -> Result<(FlowField, CellFlow)> {
    if !query.same_dims(target) {
        return Err(Error::DimMismatch(format!(
            "query {}x{}, target {}x{}",
            query.width, query.height, target.width, target.height
        )));
    }
    let q = build_feature_pyramid(query, cfg.levels)?;
    let t = build_feature_pyramid(target, cfg.levels)?;
    let mut cells = match_pyramids(&q, &t, cfg)?;
    if cfg.polish {
        polish(&mut cells, query, target)?;
    }
    Ok((cells.upsample(query.width, query.height), cells))
}

/// Coarse-to-fine windowed argmax matching from the coarsest level down to
/// level 0. Each cell searches a window around its propagated estimate and,
/// when different, one around zero displacement.
pub fn match_pyramids(q: &FeaturePyramid, t: &FeaturePyramid, cfg: &FlowConfig) -> Result<CellFlow> {
    if q.levels.len() != t.levels.len()
        || q.levels
            .iter()
            .zip(&t.levels)
            .any(|(a, b)| a.width != b.width || a.height != b.height)
    {
        return Err(Error::DimMismatch("feature pyramids differ in shape".into()));
    }
    let mut prev: Option<CellFlow> = None;
    for l in (0..q.levels.len()).rev() {
        let (a, b) = (&q.levels[l], &t.levels[l]);
        let smoothed = prev.as_ref().map(median_filter);
        let mut cur = CellFlow::new(a.width, a.height, a.cell);
        for y in 0..a.height {
            for x in 0..a.width {
                let i = y * a.width + x;
                if a.is_zero(i) {
                    continue;
                }
                let (fu, fv) = match &smoothed {
                    None => (0.0, 0.0),
                    Some(p) => {
                        let sx = p.width as f32 / a.width as f32;
                        let sy = p.height as f32 / a.height as f32;
                        let (gx, gy) = ((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5);
                        p.sample(gx, gy).map_or((0.0, 0.0), |(u, v)| (u / sx, v / sy))
                    }
                };
                let fa = a.feature(i);
                let Some((bx, by, best)) = search(a, b, x, y, fu, fv, cfg.radius) else {
                    continue;
                };
                let (ox, oy) = if cfg.subpixel && best < UNIT_PEAK {
                    quadratic_offset(fa, b, bx, by, best)
                } else {
                    (0.0, 0.0)
                };
                cur.du[i] = bx as f32 + ox - x as f32;
                cur.dv[i] = by as f32 + oy - y as f32;
                cur.peak[i] = best;
                cur.valid[i] = true;
            }
        }
        prev = Some(cur);
    }
    prev.ok_or_else(|| Error::DimMismatch("empty feature pyramid".into()))
}

/// Raw candidates re-ranked by neighborhood-aggregated correlation.
const RERANK: usize = 4;

/// Integer match over the search windows: the `RERANK` best raw correlations
/// are re-ranked by their 3x3 aggregated correlation. `None` when the chosen
/// raw correlation is not positive. Ties go to the first candidate in scan
/// order.
fn search(a: &FeatureMap, b: &FeatureMap, x: usize, y: usize, fu: f32, fv: f32, radius: usize) -> Option<(i64, i64, f32)> {
    let (w, h) = (b.width as i64, b.height as i64);
    let r = radius as i64;
    let fa = a.feature_at(x, y);
    let cx = ((x as f32 + fu).round() as i64).clamp(0, w - 1);
    let cy = ((y as f32 + fv).round() as i64).clamp(0, h - 1);
    let (x, y) = (x as i64, y as i64);
    let mut top: Vec<(i64, i64, f32)> = Vec::with_capacity(RERANK + 1);
    let mut scan = |cx: i64, cy: i64, skip: Option<(i64, i64)>| {
        for qy in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for qx in (cx - r).max(0)..=(cx + r).min(w - 1) {
                if let Some((sx, sy)) = skip {
                    if (qx - sx).abs() <= r && (qy - sy).abs() <= r {
                        continue;
                    }
                }
                let c = dot(fa, b.feature_at(qx as usize, qy as usize));
                if top.len() < RERANK || c > top[top.len() - 1].2 {
                    let pos = top.iter().position(|t| c > t.2).unwrap_or(top.len());
                    top.insert(pos, (qx, qy, c));
                    top.truncate(RERANK);
                }
            }
        }
    };
    scan(cx, cy, None);
    if (cx, cy) != (x, y) {
        scan(x, y, Some((cx, cy)));
    }
    if top.first().map_or(true, |t| t.2 >= UNIT_PEAK) {
        return top.first().copied().filter(|t| t.2 > 0.0);
    }
    let mut best = (0, f32::NEG_INFINITY);
    for (k, &(qx, qy, _)) in top.iter().enumerate() {
        let s = aggregated(a, b, x, y, qx - x, qy - y);
        if s > best.1 {
            best = (k, s);
        }
    }
    let chosen = top[best.0];
    (chosen.2 > 0.0).then_some(chosen)
}

/// Mean correlation over the textured 3x3 neighborhood of `(x, y)` under a
/// common displacement; neighbors displaced off the map count as zero.
fn aggregated(a: &FeatureMap, b: &FeatureMap, x: i64, y: i64, dx: i64, dy: i64) -> f32 {
    let (w, h) = (a.width as i64, a.height as i64);
    let (mut sum, mut n) = (0.0f32, 0usize);
    for ny in (y - 1).max(0)..=(y + 1).min(h - 1) {
        for nx in (x - 1).max(0)..=(x + 1).min(w - 1) {
            let i = (ny * w + nx) as usize;
            if a.is_zero(i) {
                continue;
            }
            n += 1;
            let (tx, ty) = (nx + dx, ny + dy);
            if tx >= 0 && ty >= 0 && tx < w && ty < h {
                sum += dot(a.feature(i), b.feature_at(tx as usize, ty as usize));
            }
        }
    }
    sum / n.max(1) as f32
}

/// Vertex offsets of 1-D parabolas through the argmax and its axis neighbors,
/// clamped to half a step.
fn quadratic_offset(fa: &[f32], b: &FeatureMap, bx: i64, by: i64, best: f32) -> (f32, f32) {
    let (w, h) = (b.width as i64, b.height as i64);
    let corr = |qx: i64, qy: i64| -> Option<f32> {
        (qx >= 0 && qy >= 0 && qx < w && qy < h).then(|| dot(fa, b.feature_at(qx as usize, qy as usize)))
    };
    (
        parabola(corr(bx - 1, by), best, corr(bx + 1, by)),
        parabola(corr(bx, by - 1), best, corr(bx, by + 1)),
    )
}

fn parabola(m: Option<f32>, c: f32, p: Option<f32>) -> f32 {
    match (m, p) {
        (Some(m), Some(p)) => {
            let den = m - 2.0 * c + p;
            if den < 0.0 {
                (0.5 * (m - p) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Photometric polish of level-0 matches: iterative least-squares
/// translation of a zero-mean 2-cell window on half-resolution grey images.
/// A cell keeps its correlation match when the solve is ill-conditioned,
/// leaves the image, moves more than 3/4 cell, or raises the residual.
pub fn polish(cells: &mut CellFlow, query: &ImageBuffer, target: &ImageBuffer) -> Result<()> {
    if !query.same_dims(target) {
        return Err(Error::DimMismatch("polish images differ in size".into()));
    }
    let half = |img: &ImageBuffer| {
        let g = img.to_gray();
        box_downsample(&g.data, g.width, g.height, 2)
    };
    let (q, w, h) = half(query);
    let (t, _, _) = half(target);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let at = |x: usize, y: usize| t[y * w + x];
            gx[y * w + x] = 0.5 * (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y));
            gy[y * w + x] = 0.5 * (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1)));
        }
    }
    let bilinear = |img: &[f32], x: f32, y: f32| -> Option<f32> {
        if x < 0.0 || y < 0.0 || x > (w - 1) as f32 || y > (h - 1) as f32 {
            return None;
        }
        let (x0, y0) = ((x as usize).min(w - 2), (y as usize).min(h - 2));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let i = y0 * w + x0;
        Some(
            (1.0 - fy) * ((1.0 - fx) * img[i] + fx * img[i + 1])
                + fy * ((1.0 - fx) * img[i + w] + fx * img[i + w + 1]),
        )
    };
    let scale = cells.cell as f32 / 2.0;
    let radius = (cells.cell / 2) as i64;
    for cy in 0..cells.height {
        for cx in 0..cells.width {
            let i = cy * cells.width + cx;
            if !cells.valid[i] {
                continue;
            }
            // Half-resolution window centered on the cell center.
            let (x0, y0) = (cx as i64 * radius - radius / 2, cy as i64 * radius - radius / 2);
            let (x1, y1) = (x0 + 2 * radius, y0 + 2 * radius);
            if x0 < 0 || y0 < 0 || x1 > w as i64 || y1 > h as i64 {
                continue;
            }
            let mut qs = Vec::with_capacity((4 * radius * radius) as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    qs.push((x as f32, y as f32, q[y as usize * w + x as usize]));
                }
            }
            let qmean = qs.iter().map(|s| s.2).sum::<f32>() / qs.len() as f32;
            let residual = |d: (f32, f32)| -> Option<f32> {
                let mut vals = Vec::with_capacity(qs.len());
                for &(x, y, _) in &qs {
                    vals.push(bilinear(&t, x + d.0, y + d.1)?);
                }
                let tmean = vals.iter().sum::<f32>() / vals.len() as f32;
                Some(qs.iter().zip(&vals).map(|(s, v)| (v - tmean - (s.2 - qmean)).powi(2)).sum())
            };
            let d0 = (cells.du[i] * scale, cells.dv[i] * scale);
            let Some(r0) = residual(d0) else {
                continue;
            };
            let mut d = d0;
            let mut ok = true;
            for _ in 0..8 {
                let mut samples = Vec::with_capacity(qs.len());
                for &(x, y, qv) in &qs {
                    let (sx, sy) = (x + d.0, y + d.1);
                    match (bilinear(&t, sx, sy), bilinear(&gx, sx, sy), bilinear(&gy, sx, sy)) {
                        (Some(v), Some(a), Some(b)) => samples.push((v, a, b, qv)),
                        _ => break,
                    }
                }
                if samples.len() != qs.len() {
                    ok = false;
                    break;
                }
                let n = samples.len() as f32;
                let (mut tm, mut am, mut bm) = (0.0f32, 0.0f32, 0.0f32);
                for s in &samples {
                    tm += s.0;
                    am += s.1;
                    bm += s.2;
                }
                let (tm, am, bm) = (tm / n, am / n, bm / n);
                let (mut hxx, mut hxy, mut hyy, mut bx, mut by) = (0.0f32, 0.0f32, 0.0f32, 0.0f32, 0.0f32);
                for s in &samples {
                    let e = (s.0 - tm) - (s.3 - qmean);
                    let (a, b) = (s.1 - am, s.2 - bm);
                    hxx += a * a;
                    hxy += a * b;
                    hyy += b * b;
                    bx += a * e;
                    by += b * e;
                }
                let det = hxx * hyy - hxy * hxy;
                if !(det > 1e-10 * (hxx + hyy).powi(2).max(1e-20)) {
                    ok = false;
                    break;
                }
                let step = (-(hyy * bx - hxy * by) / det, -(hxx * by - hxy * bx) / det);
                d = (d.0 + step.0, d.1 + step.1);
                if step.0.hypot(step.1) < 1e-3 {
                    break;
                }
            }
            if !ok || !(d.0.is_finite() && d.1.is_finite()) {
                continue;
            }
            if (d.0 - d0.0).hypot(d.1 - d0.1) > 0.75 * scale {
                continue;
            }
            if residual(d).map_or(true, |r| r > r0) {
                continue;
            }
            cells.du[i] = d.0 / scale;
            cells.dv[i] = d.1 / scale;
        }
    }
    Ok(())
}

/// Component-wise 3x3 median over valid neighbors.
fn median_filter(f: &CellFlow) -> CellFlow {
    let mut out = f.clone();
    let (w, h) = (f.width as i64, f.height as i64);
    let mut us = Vec::with_capacity(9);
    let mut vs = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !f.valid[i] {
                continue;
            }
            us.clear();
            vs.clear();
            for ny in (y - 1).max(0)..=(y + 1).min(h - 1) {
                for nx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                    let j = (ny * w + nx) as usize;
                    if f.valid[j] {
                        us.push(f.du[j]);
                        vs.push(f.dv[j]);
                    }
                }
            }
            us.sort_by(f32::total_cmp);
            vs.sort_by(f32::total_cmp);
            out.du[i] = us[us.len() / 2];
            out.dv[i] = vs[vs.len() / 2];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(width: usize, height: usize, shift: (f32, f32)) -> ImageBuffer {
        let mut img = ImageBuffer::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = (x as f32 - shift.0, y as f32 - shift.1);
                let val = 0.5
                    + 0.2 * (u * 0.071 + v * 0.023).sin()
                    + 0.15 * (u * 0.019 - v * 0.083 + 1.0).sin()
                    + 0.1 * ((u + v) * 0.041).cos()
                    + 0.05 * (u * 0.23 - v * 0.17).sin();
                img.set(x, y, 0, val);
            }
        }
        img
    }

    fn median(mut v: Vec<f32>) -> f32 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    /// EPE against a constant expected flow over valid pixels whose
    /// displaced position stays inside the interior.
    fn shift_epe(f: &FlowField, du: f32, dv: f32) -> Vec<f32> {
        let mut out = vec![];
        for y in 16..f.height - 16 {
            for x in 16..f.width - 16 {
                let i = y * f.width + x;
                if f.valid[i] {
                    out.push(((f.du[i] - du).powi(2) + (f.dv[i] - dv).powi(2)).sqrt());
                }
            }
        }
        out
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let img = textured(256, 256, (0.0, 0.0));
        let f = estimate_flow(&img, &img, &FlowConfig::default()).unwrap();
        assert!(f.valid_count() > 60_000);
        for i in 0..f.du.len() {
            if f.valid[i] {
                assert!(f.du[i].hypot(f.dv[i]) < 0.1);
            }
        }
    }

    #[test]
    fn known_shift_recovered() {
        let q = textured(256, 256, (0.0, 0.0));
        let t = textured(256, 256, (12.0, -4.0));
        let f = estimate_flow(&q, &t, &FlowConfig::default()).unwrap();
        let e = shift_epe(&f, 12.0, -4.0);
        assert!(e.len() > 30_000);
        let m = median(e);
        assert!(m < 0.5, "median EPE {m}");
    }

    #[test]
    fn shift_equivariance() {
        let cfg = FlowConfig::default();
        let a = estimate_flow(&textured(256, 256, (0.0, 0.0)), &textured(256, 256, (5.0, 3.0)), &cfg).unwrap();
        let b = estimate_flow(&textured(256, 256, (8.0, 8.0)), &textured(256, 256, (13.0, 11.0)), &cfg).unwrap();
        let mut dev = vec![];
        for y in 24..232 {
            for x in 24..232 {
                let (i, j) = (y * 256 + x, (y + 8) * 256 + x + 8);
                if a.valid[i] && b.valid[j] {
                    dev.push((a.du[i] - b.du[j]).hypot(a.dv[i] - b.dv[j]));
                }
            }
        }
        let m = median(dev);
        assert!(m < 0.25, "median deviation {m}");
    }

    #[test]
    fn flat_regions_are_invalid() {
        let mut img = ImageBuffer::new(64, 64, 1);
        img.data.iter_mut().for_each(|v| *v = 0.3);
        let f = estimate_flow(&img, &img, &FlowConfig::default()).unwrap();
        assert_eq!(f.valid_count(), 0);
        assert!(f.du.iter().chain(&f.dv).all(|&v| v == 0.0));
    }

    #[test]
    fn size_mismatch_rejected() {
        let r = estimate_flow(&ImageBuffer::new(64, 64, 1), &ImageBuffer::new(64, 72, 1), &FlowConfig::default());
        assert!(matches!(r, Err(Error::DimMismatch(_))));
    }

    #[test]
    fn forward_backward_of_inverse_shifts_is_small() {
        let cfg = FlowConfig::default();
        let q = textured(256, 256, (0.0, 0.0));
        let t = textured(256, 256, (16.0, 8.0));
        let (_, f) = estimate_flow_detailed(&q, &t, &cfg).unwrap();
        let (_, b) = estimate_flow_detailed(&t, &q, &cfg).unwrap();
        let e: Vec<f32> = f.forward_backward(&b).into_iter().flatten().collect();
        assert!(e.len() > 500);
        assert!(median(e) < 0.5);
    }
}
