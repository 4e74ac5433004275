use serde::{Deserialize, Serialize};

use crate::render::GeometryMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    #[default]
    Medoid,
    Mean,
}

/// Per-pixel lists of candidate model points.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateMap {
    pub width: usize,
    pub height: usize,
    pub lists: Vec<Vec<[f32; 3]>>,
}

impl CandidateMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            lists: vec![Vec::new(); width * height],
        }
    }

    /// Appends every masked pixel of `geom` (same dims) to its list.
    pub fn push_map(&mut self, geom: &GeometryMap) {
        for (i, list) in self.lists.iter_mut().enumerate() {
            if geom.mask[i] {
                list.push(geom.coords[i]);
            }
        }
    }
}

fn dist(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let d = [0, 1, 2].map(|k| a[k] as f64 - b[k] as f64);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Index of the candidate minimizing the summed distance to all others;
/// ties go to the lowest index.
pub fn medoid_index(c: &[[f32; 3]]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in c.iter().enumerate() {
        let s: f64 = c.iter().map(|b| dist(a, b)).sum();
        if best.map_or(true, |(_, bs)| s < bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Per-pixel medoid; pixels without candidates stay unmasked. Depth is not
/// known from candidates and is left at zero.
pub fn medoid_vote(candidates: &CandidateMap) -> GeometryMap {
    let mut out = GeometryMap::empty(candidates.width, candidates.height);
    for (i, list) in candidates.lists.iter().enumerate() {
        if let Some(k) = medoid_index(list) {
            out.set(i, list[k], 0.0);
        }
    }
    out
}

/// Per-pixel arithmetic mean of the candidates.
pub fn mean_vote(candidates: &CandidateMap) -> GeometryMap {
    let mut out = GeometryMap::empty(candidates.width, candidates.height);
    for (i, list) in candidates.lists.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mut s = [0.0f64; 3];
        for c in list {
            for k in 0..3 {
                s[k] += c[k] as f64;
            }
        }
        let n = list.len() as f64;
        out.set(i, s.map(|v| (v / n) as f32), 0.0);
    }
    out
}

pub fn vote(candidates: &CandidateMap, mode: VoteMode) -> GeometryMap {
    match mode {
        VoteMode::Medoid => medoid_vote(candidates),
        VoteMode::Mean => mean_vote(candidates),
    }
}
