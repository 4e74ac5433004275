use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attend, dot_product_attention, temperature};
use super::encoding::EncodedGeometryMap;
use super::layers::{Conv, LayoutBuilder, Tensor};
use super::upsample::MASK_CHANNELS;
use crate::error::{Error, Result};
use crate::flow::features::BASE_CELL;
use crate::flow::{build_feature_pyramid, correlate, CorrelationMode, FeatureMap, FEATURE_DIM};
use crate::render::ImageBuffer;

/// Encoder widths at 1/8, 1/16 and 1/32.
pub const WIDTHS: [usize; 3] = [16, 32, 64];
/// Decoder width.
const DEC: usize = 32;
/// Query/key width of the vanilla attention projections.
const ATTN_DIM: usize = 16;
const WEIGHTS_MAGIC: &[u8; 4] = b"RNET";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum AttentionMode {
    /// Softmax over the flow-feature correlation volume.
    #[default]
    #[serde(rename = "cg")]
    #[value(name = "cg")]
    CorrelationGuided,
    /// Learned query/key projections of the same features.
    #[serde(rename = "vanilla")]
    Vanilla,
}

/// Per-level inputs shared by every forward pass on one image pair.
#[derive(Clone, Debug)]
pub struct NetInputs {
    /// Query features at 1/8, 1/16, 1/32.
    pub query: [Tensor; 3],
    pub reference: [Tensor; 3],
    /// Reference encoding pooled to each level.
    pub ref_pe: [Tensor; 3],
}

fn feature_tensor(m: &FeatureMap) -> Tensor {
    let mut t = Tensor::zeros(m.width, m.height, FEATURE_DIM);
    for i in 0..m.len() {
        for (d, &s) in t.pixel_mut(i).iter_mut().zip(&m.feature(i)[..FEATURE_DIM]) {
            *d = s as f64;
        }
    }
    t
}

/// Average pooling followed by per-cell renormalization to unit length.
fn pool_features(t: &Tensor) -> Tensor {
    let mut p = t.avg_pool2();
    for i in 0..p.width * p.height {
        let px = p.pixel_mut(i);
        let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            px.iter_mut().for_each(|v| *v /= n);
        }
    }
    p
}

fn encoded_tensor(e: &EncodedGeometryMap) -> Tensor {
    Tensor {
        width: e.width,
        height: e.height,
        channels: e.channels,
        data: e.values.clone(),
    }
}

fn feature_levels(image: &ImageBuffer) -> Result<[Tensor; 3]> {
    let l0 = feature_tensor(&build_feature_pyramid(image, 1)?.levels[0]);
    let l1 = pool_features(&l0);
    let l2 = pool_features(&l1);
    Ok([l0, l1, l2])
}

fn to_feature_map(t: &Tensor, cell: usize) -> Result<FeatureMap> {
    let v: Vec<Vec<f32>> = t.data.chunks(t.channels).map(|c| c.iter().map(|&x| x as f32).collect()).collect();
    FeatureMap::from_vectors(t.width, t.height, cell, &v)
}

impl NetInputs {
    pub fn new(query: &ImageBuffer, reference: &ImageBuffer, ref_geom: &EncodedGeometryMap) -> Result<Self> {
        let (w, h) = (query.width, query.height);
        if !query.same_dims(reference) || ref_geom.width != w || ref_geom.height != h {
            return Err(Error::DimMismatch("query, reference and reference geometry differ in size".into()));
        }
        if w % 32 != 0 || h % 32 != 0 || w < 64 || h < 64 {
            return Err(Error::DimMismatch(format!("network inputs must be multiples of 32 and at least 64, got {w}x{h}")));
        }
        Ok(Self {
            query: feature_levels(query)?,
            reference: feature_levels(reference)?,
            ref_pe: [8, 16, 32].map(|f| encoded_tensor(&ref_geom.pool(f))),
        })
    }
}

/// Decoder output and the level-0 attended reference encoding.
#[derive(Clone, Debug)]
pub struct Trunk {
    pub features: Tensor,
    pub attended: Tensor,
}

/// Coarse outputs at 1/8 resolution.
#[derive(Clone, Debug)]
pub struct NetOutput {
    /// `6·n_freq` encoded channels.
    pub geo: Tensor,
    /// Convex-upsampling logits, [`MASK_CHANNELS`] channels.
    pub up_mask: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct GeoLayers {
    enc: [Conv; 3],
    dec2: Conv,
    dec1: Conv,
    geo: Conv,
    mask: Conv,
    q_proj: Conv,
    k_proj: Conv,
}

impl GeoLayers {
    fn new(channels: usize) -> (Self, usize) {
        let mut b = LayoutBuilder::default();
        let enc = [
            b.conv(FEATURE_DIM + channels, WIDTHS[0], 3, true),
            b.conv(WIDTHS[0] + channels, WIDTHS[1], 3, true),
            b.conv(WIDTHS[1] + channels, WIDTHS[2], 3, true),
        ];
        let dec2 = b.conv(WIDTHS[2] + WIDTHS[1], DEC, 3, true);
        let dec1 = b.conv(DEC + WIDTHS[0], DEC, 3, true);
        let geo = b.conv(DEC, channels, 1, true);
        let mask = b.conv(DEC, MASK_CHANNELS, 1, true);
        let q_proj = b.conv(FEATURE_DIM, ATTN_DIM, 1, false);
        let k_proj = b.conv(FEATURE_DIM, ATTN_DIM, 1, false);
        (
            Self {
                enc,
                dec2,
                dec1,
                geo,
                mask,
                q_proj,
                k_proj,
            },
            b.total(),
        )
    }
}

/// Three-level U-Net estimating the query encoding at 1/8 resolution from
/// the query image, a reference render and its encoding.
#[derive(Clone, Debug)]
pub struct GeometryNet {
    pub n_freq: usize,
    pub params: Vec<f64>,
    layers: GeoLayers,
}

impl GeometryNet {
    pub fn new(n_freq: usize, seed: u64) -> Self {
        let (layers, n) = GeoLayers::new(6 * n_freq);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = &layers;
        for c in [l.enc[0], l.enc[1], l.enc[2], l.dec2, l.dec1, l.geo, l.mask, l.q_proj, l.k_proj] {
            c.init(&mut params, 1.0, &mut rng);
        }
        Self { n_freq, params, layers }
    }

    pub fn channels(&self) -> usize {
        6 * self.n_freq
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// The 1×1 geo head: its parameters are the ones micro-training updates.
    pub fn geo_head(&self) -> Conv {
        self.layers.geo
    }

    pub fn load(path: impl AsRef<Path>, n_freq: usize) -> Result<Self> {
        let mut net = Self::new(n_freq, 0);
        let params = read_weights(&path)?;
        if params.len() != net.params.len() {
            return Err(Error::format(
                path,
                format!("{} parameters, the network has {}", params.len(), net.params.len()),
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_weights(path, &self.params)
    }

    fn attention(&self, inputs: &NetInputs, level: usize, mode: AttentionMode) -> Result<Tensor> {
        let (q, r, v) = (&inputs.query[level], &inputs.reference[level], &inputs.ref_pe[level]);
        match mode {
            AttentionMode::CorrelationGuided => {
                let cell = BASE_CELL << level;
                let corr = correlate(&to_feature_map(q, cell)?, &to_feature_map(r, cell)?, CorrelationMode::Full)?;
                attend(&corr, v, temperature(FEATURE_DIM))
            }
            AttentionMode::Vanilla => {
                let qp = self.layers.q_proj.forward(&self.params, q)?;
                let kp = self.layers.k_proj.forward(&self.params, r)?;
                dot_product_attention(&qp, &kp, v)
            }
        }
    }

    pub fn trunk(&self, inputs: &NetInputs, mode: AttentionMode) -> Result<Trunk> {
        let p = &self.params;
        let l = &self.layers;
        let a0 = self.attention(inputs, 0, mode)?;
        let a1 = self.attention(inputs, 1, mode)?;
        let a2 = self.attention(inputs, 2, mode)?;
        let e0 = l.enc[0].forward(p, &Tensor::concat(&[&inputs.query[0], &a0])?)?.relu();
        let e1 = l.enc[1].forward(p, &Tensor::concat(&[&e0.avg_pool2(), &a1])?)?.relu();
        let e2 = l.enc[2].forward(p, &Tensor::concat(&[&e1.avg_pool2(), &a2])?)?.relu();
        let d1 = l.dec2.forward(p, &Tensor::concat(&[&e2.upsample2(), &e1])?)?.relu();
        let d0 = l.dec1.forward(p, &Tensor::concat(&[&d1.upsample2(), &e0])?)?.relu();
        Ok(Trunk {
            features: d0,
            attended: a0,
        })
    }

    /// Geo head: residual on the attended reference encoding, clamped to the
    /// encoding range.
    pub fn geo_from_trunk(&self, trunk: &Trunk) -> Result<Tensor> {
        let mut g = self.layers.geo.forward(&self.params, &trunk.features)?;
        for (v, a) in g.data.iter_mut().zip(&trunk.attended.data) {
            *v = (*v + a).clamp(-1.0, 1.0);
        }
        Ok(g)
    }

    pub fn mask_from_trunk(&self, trunk: &Trunk) -> Result<Tensor> {
        self.layers.mask.forward(&self.params, &trunk.features)
    }

    pub fn forward_inputs(&self, inputs: &NetInputs, mode: AttentionMode) -> Result<NetOutput> {
        let t = self.trunk(inputs, mode)?;
        Ok(NetOutput {
            geo: self.geo_from_trunk(&t)?,
            up_mask: self.mask_from_trunk(&t)?,
        })
    }
}

/// Coarse query encoding and up-mask for one image pair.
pub fn geometry_net_forward(
    net: &GeometryNet,
    query: &ImageBuffer,
    reference: &ImageBuffer,
    ref_geom: &EncodedGeometryMap,
    attention: AttentionMode,
) -> Result<NetOutput> {
    if ref_geom.channels != net.channels() {
        return Err(Error::DimMismatch(format!(
            "reference encoding has {} channels, the network expects {}",
            ref_geom.channels,
            net.channels()
        )));
    }
    net.forward_inputs(&NetInputs::new(query, reference, ref_geom)?, attention)
}

/// Small regressor from stacked query and reference encodings (1/8
/// resolution) to `[ω; δu, δv, δz]`.
#[derive(Clone, Debug)]
pub struct RelPoseNet {
    pub n_freq: usize,
    pub params: Vec<f64>,
    conv1: Conv,
    conv2: Conv,
    fc: Conv,
}

impl RelPoseNet {
    pub fn new(n_freq: usize, seed: u64) -> Self {
        let mut b = LayoutBuilder::default();
        let conv1 = b.conv(12 * n_freq, 16, 3, true);
        let conv2 = b.conv(16, 32, 3, true);
        let fc = b.conv(32, 6, 1, true);
        let mut params = vec![0.0; b.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        conv1.init(&mut params, 1.0, &mut rng);
        conv2.init(&mut params, 1.0, &mut rng);
        fc.init(&mut params, 1e-3, &mut rng);
        Self {
            n_freq,
            params,
            conv1,
            conv2,
            fc,
        }
    }

    /// A regressor whose output is identically zero.
    pub fn zeroed(n_freq: usize) -> Self {
        let mut n = Self::new(n_freq, 0);
        n.params.fill(0.0);
        n
    }

    pub fn load(path: impl AsRef<Path>, n_freq: usize) -> Result<Self> {
        let mut net = Self::new(n_freq, 0);
        let params = read_weights(&path)?;
        if params.len() != net.params.len() {
            return Err(Error::format(path, "parameter count does not match the regressor"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn forward(&self, query: &Tensor, reference: &Tensor) -> Result<[f64; 6]> {
        let x = Tensor::concat(&[query, reference])?;
        let h = self.conv1.forward(&self.params, &x)?.relu().avg_pool2();
        let h = self.conv2.forward(&self.params, &h)?.relu();
        let mut g = Tensor::zeros(1, 1, h.channels);
        let n = (h.width * h.height) as f64;
        for i in 0..h.width * h.height {
            for (d, s) in g.data.iter_mut().zip(h.pixel(i)) {
                *d += s / n;
            }
        }
        let o = self.fc.forward(&self.params, &g)?;
        Ok([o.data[0], o.data[1], o.data[2], o.data[3], o.data[4], o.data[5]])
    }
}

/// Writes `RNET`, a little-endian u32 count and the parameters as f32.
pub fn write_weights(path: impl AsRef<Path>, params: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * params.len());
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for &p in params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let b = fs::read(path)?;
    if b.len() < 8 || &b[..4] != WEIGHTS_MAGIC {
        return Err(Error::format(path, "missing RNET header"));
    }
    let n = u32::from_le_bytes([b[4], b[5], b[6], b[7]]) as usize;
    if b.len() != 8 + 4 * n {
        return Err(Error::format(path, format!("expected {n} parameters, file holds {} bytes", b.len())));
    }
    Ok(b[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
