use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{positional_encode, EncodedGeometryMap, EncodingConfig};
use super::net::{AttentionMode, GeometryNet, NetInputs};
use super::upsample::UpsampleWeights;
use crate::error::{Error, Result};
use crate::geometry::sampling::random_rotation;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::losses::geo_loss;
use crate::pipeline::scene::object_mesh;
use crate::refine::layers::Tensor;
use crate::render::{render, Shading};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Central-difference step.
    pub fd_step: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for MicroTrainConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            learning_rate: 0.05,
            fd_step: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// One training pair: network inputs and the encoded ground truth.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub inputs: NetInputs,
    pub gt: EncodedGeometryMap,
}

/// `n` query/reference pairs of `size`×`size` pixels over the procedural
/// objects. References sit at the query pose perturbed by up to 10° and 5% of
/// the diameter.
pub fn micro_set(n: usize, size: usize, n_freq: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size as f64 / 2.0 - 0.5;
    let f = 2.0 * size as f64;
    let cam = CameraIntrinsics::new(f, f, half, half, size, size)?;
    (0..n)
        .map(|i| {
            let mesh = object_mesh(i, seed)?;
            let enc = EncodingConfig::for_diameter(n_freq, mesh.diameter);
            // Object spans about 60% of the crop.
            let z = f * mesh.diameter / (0.6 * size as f64);
            let q = Pose {
                rotation: random_rotation(&mut rng),
                translation: nalgebra::Vector3::new(0.0, 0.0, z),
            };
            let mut d = [0.0; 6];
            for (k, v) in d.iter_mut().enumerate() {
                *v = rng.gen_range(-1.0..1.0) * if k < 3 { 0.1 } else { 0.05 * mesh.diameter };
            }
            let r = q.retract(&d);
            let (iq, gq) = render(&mesh, &q, &cam, Shading::Lambertian)?;
            let (ir, gr) = render(&mesh, &r, &cam, Shading::Lambertian)?;
            Ok(TrainSample {
                inputs: NetInputs::new(&iq, &ir, &positional_encode(&gr, &enc))?,
                gt: positional_encode(&gq, &enc),
            })
        })
        .collect()
}

/// Mean `L_geo` of the upsampled network prediction over the set.
pub fn mean_geo_loss(net: &GeometryNet, set: &[TrainSample], attention: AttentionMode) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyInput("micro-set".into()));
    }
    let mut s = 0.0;
    for t in set {
        let out = net.forward_inputs(&t.inputs, attention)?;
        let full = UpsampleWeights::new(&out.up_mask)?.apply(&out.geo)?;
        let pred = EncodedGeometryMap {
            width: full.width,
            height: full.height,
            channels: full.channels,
            values: full.data,
            mask: t.gt.mask.clone(),
        };
        s += geo_loss(&pred, &t.gt)?.value;
    }
    Ok(s / set.len() as f64)
}

/// Everything upstream of the geo head, frozen during training.
struct Cached {
    features: Tensor,
    attended: Tensor,
    up: UpsampleWeights,
    /// Ground truth per channel, full resolution.
    gt_planes: Vec<Vec<f64>>,
    mask: Vec<bool>,
    norm: f64,
}

impl Cached {
    /// Masked L1 sum of channel `c` for head parameters `p`.
    fn channel_sum(&self, net: &GeometryNet, p: &[f64], c: usize, plane: &mut [f64], fine: &mut [f64]) -> f64 {
        let head = net.geo_head();
        for (i, v) in plane.iter_mut().enumerate() {
            let x = self.features.pixel(i);
            let mut s = p[head.bias_index(c)] + self.attended.pixel(i)[c];
            for (ci, xv) in x.iter().enumerate() {
                s += p[head.weight_index(0, ci, c)] * xv;
            }
            *v = s.clamp(-1.0, 1.0);
        }
        self.up.apply_plane(plane, fine);
        fine.iter()
            .zip(&self.gt_planes[c])
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).abs())
            .sum()
    }
}

/// Finite-difference gradient descent (Adam) on the geo-head parameters with
/// the trunk frozen. Returns the mean `L_geo` before each step and after the
/// last.
pub fn train_geo_head(
    net: &mut GeometryNet,
    set: &[TrainSample],
    attention: AttentionMode,
    cfg: &MicroTrainConfig,
) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptyInput("micro-set".into()));
    }
    let c = net.channels();
    let mut cache = Vec::with_capacity(set.len());
    for t in set {
        let trunk = net.trunk(&t.inputs, attention)?;
        let up = UpsampleWeights::new(&net.mask_from_trunk(&trunk)?)?;
        let n = t.gt.mask_count();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        cache.push(Cached {
            gt_planes: (0..c).map(|k| t.gt.values.iter().skip(k).step_by(c).copied().collect()).collect(),
            mask: t.gt.mask.clone(),
            norm: 1.0 / (n * c * set.len()) as f64,
            features: trunk.features,
            attended: trunk.attended,
            up,
        });
    }
    let head = net.geo_head();
    let coarse = cache[0].features.width * cache[0].features.height;
    let mut plane = vec![0.0; coarse];
    let mut fine = vec![0.0; coarse * 64];
    let channel_loss = |net: &GeometryNet, p: &[f64], k: usize, plane: &mut [f64], fine: &mut [f64]| -> f64 {
        cache.iter().map(|s| s.norm * s.channel_sum(net, p, k, plane, fine)).sum()
    };
    let total = |net: &GeometryNet, p: &[f64], plane: &mut [f64], fine: &mut [f64]| -> f64 {
        (0..c).map(|k| channel_loss(net, p, k, plane, fine)).sum()
    };
    let idx: Vec<(usize, usize)> = (0..c)
        .flat_map(|k| (0..head.cin).map(move |ci| (head.weight_index(0, ci, k), k)).chain([(head.bias_index(k), k)]))
        .collect();
    let (mut m, mut v) = (vec![0.0; idx.len()], vec![0.0; idx.len()]);
    let mut params = net.params.clone();
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        history.push(total(net, &params, &mut plane, &mut fine));
        let mut grad = vec![0.0; idx.len()];
        for (g, &(pi, k)) in grad.iter_mut().zip(&idx) {
            let orig = params[pi];
            params[pi] = orig + cfg.fd_step;
            let up = channel_loss(net, &params, k, &mut plane, &mut fine);
            params[pi] = orig - cfg.fd_step;
            let down = channel_loss(net, &params, k, &mut plane, &mut fine);
            params[pi] = orig;
            *g = (up - down) / (2.0 * cfg.fd_step);
        }
        let t = (step + 1) as i32;
        for (j, &(pi, _)) in idx.iter().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
            let mh = m[j] / (1.0 - cfg.beta1.powi(t));
            let vh = v[j] / (1.0 - cfg.beta2.powi(t));
            params[pi] -= cfg.learning_rate * mh / (vh.sqrt() + 1e-8);
        }
    }
    history.push(total(net, &params, &mut plane, &mut fine));
    net.params = params;
    Ok(history)
}
