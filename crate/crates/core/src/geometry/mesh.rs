use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{Error, Result};

/// Triangle mesh in model units with its discrete symmetry group and an
/// optional procedural albedo.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub diameter: f64,
    /// Symmetry transforms; the identity is always the first entry.
    pub symmetries: Vec<Pose>,
    pub texture: Option<Texture>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        symmetries: Vec<Pose>,
        texture: Option<Texture>,
    ) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices or triangles".into()));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let diameter = max_pairwise_distance(&vertices);
        if diameter <= 0.0 {
            return Err(Error::InvalidMesh("zero diameter".into()));
        }
        let mut syms = Vec::with_capacity(symmetries.len() + 1);
        syms.push(Pose::identity());
        for s in symmetries {
            Pose::new(s.rotation, s.translation)
                .map_err(|e| Error::InvalidMesh(format!("bad symmetry: {e}")))?;
            let is_identity = (s.to_matrix4() - Pose::identity().to_matrix4()).amax() < 1e-12;
            if !is_identity {
                syms.push(s);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            diameter,
            symmetries: syms,
            texture,
        })
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Largest vertex distance from the model origin.
    pub fn max_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Outward-facing unit normal of triangle `i` (counter-clockwise winding).
    pub fn face_normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangles[i];
        let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::z()
        }
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0)
            .sum()
    }

    /// Every directed edge is matched by exactly one opposite edge.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        edges
            .iter()
            .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    /// Albedo at a model-frame point; mid grey when the mesh is untextured.
    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        match &self.texture {
            Some(t) => t.albedo(p),
            None => [0.7; 3],
        }
    }

    pub fn load(ply: impl AsRef<Path>, sidecar: Option<&Path>) -> Result<Self> {
        let (vertices, triangles) = read_ply(ply.as_ref())?;
        let (symmetries, texture) = match sidecar {
            Some(p) => read_sidecar(p)?,
            None => (Vec::new(), None),
        };
        Self::new(vertices, triangles, symmetries, texture)
    }

    pub fn save(&self, ply: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<()> {
        write_ply(ply.as_ref(), &self.vertices, &self.triangles)?;
        write_sidecar(sidecar.as_ref(), self)
    }
}

fn max_pairwise_distance(vertices: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Isotropic RGB albedo on model coordinates: two octaves of 3-D value
/// noise shared by all channels plus a coarser per-channel tint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "TextureParams", into = "TextureParams")]
pub struct Texture {
    params: TextureParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub seed: u64,
    /// Dominant feature size of the pattern, model units.
    pub wavelength: f64,
    /// Rotational symmetry order about the model z axis.
    #[serde(default = "one")]
    pub fold: u32,
}

fn one() -> u32 {
    1
}

impl From<TextureParams> for Texture {
    fn from(params: TextureParams) -> Self {
        Texture::new(params)
    }
}

impl From<Texture> for TextureParams {
    fn from(t: Texture) -> Self {
        t.params
    }
}

impl Texture {
    pub fn new(params: TextureParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> TextureParams {
        self.params
    }

    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        let p = if self.params.fold > 1 {
            // Wrap the azimuth n times, keeping arc length on each circle.
            let n = self.params.fold as f64;
            let (r, a) = (p.x.hypot(p.y), p.y.atan2(p.x) * n);
            Vector3::new(r / n * a.cos(), r / n * a.sin(), p.z)
        } else {
            *p
        };
        let q = p / (0.5 * self.params.wavelength);
        let seed = self.params.seed;
        let base = value_noise(&q, seed) + 0.6 * value_noise(&(q * 2.0), seed ^ 1);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let tint = value_noise(&(q * 0.7), seed.wrapping_add(101 + c as u64));
            *o = 0.5 + 0.45 * (1.4 * base + 0.7 * tint).tanh();
        }
        out
    }
}

/// Smoothly interpolated lattice noise in [-1, 1].
fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let f = [p.x.floor(), p.y.floor(), p.z.floor()];
    let t = [p.x - f[0], p.y - f[1], p.z - f[2]].map(|t| t * t * t * (t * (t * 6.0 - 15.0) + 10.0));
    let base = f.map(|v| v as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for k in 0..3 {
            w *= if d[k] == 1 { t[k] } else { 1.0 - t[k] };
        }
        acc += w * lattice_value(base[0] + d[0] as i64, base[1] + d[1] as i64, base[2] + d[2] as i64, seed);
    }
    acc
}

fn lattice_value(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h = (h ^ v as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Parameters of the procedural object families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeshSpec {
    Box {
        size: [f64; 3],
    },
    CappedCylinder {
        radius: f64,
        height: f64,
        segments: usize,
        /// Discrete rotational symmetry order about z; 1 means none.
        symmetry_fold: usize,
    },
    DeformedIcosphere {
        radius: f64,
        subdivisions: u32,
        amplitude: f64,
    },
    /// A box with two coaxial cylindrical arms along ±x.
    Composite {
        body: [f64; 3],
        arm_radius: f64,
        arm_length: f64,
        segments: usize,
    },
}

/// Builds a watertight, centered, textured mesh. Texture wavelength is a
/// quarter of the diameter.
pub fn generate_procedural_mesh(spec: &MeshSpec, seed: u64) -> Result<TriangleMesh> {
    let positive = |v: f64, what: &str| -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidMesh(format!("{what} must be positive, got {v}")))
        }
    };
    let (vertices, triangles, symmetries) = match *spec {
        MeshSpec::Box { size } => {
            for s in size {
                positive(s, "box side")?;
            }
            let (v, t) = box_mesh(Vector3::from(size) * 0.5, Vector3::zeros());
            (v, t, Vec::new())
        }
        MeshSpec::CappedCylinder {
            radius,
            height,
            segments,
            symmetry_fold,
        } => {
            positive(radius, "radius")?;
            positive(height, "height")?;
            if segments < 3 {
                return Err(Error::InvalidMesh("cylinder needs at least 3 segments".into()));
            }
            if symmetry_fold == 0 || segments % symmetry_fold != 0 {
                return Err(Error::InvalidMesh(format!(
                    "symmetry fold {symmetry_fold} must divide segment count {segments}"
                )));
            }
            let (v, t) = cylinder_mesh(radius, height, segments, &Matrix3::identity(), Vector3::zeros());
            let syms = (1..symmetry_fold)
                .map(|k| Pose::rot_z(2.0 * PI * k as f64 / symmetry_fold as f64))
                .collect();
            (v, t, syms)
        }
        MeshSpec::DeformedIcosphere {
            radius,
            subdivisions,
            amplitude,
        } => {
            positive(radius, "radius")?;
            if !(0.0..0.5).contains(&amplitude) {
                return Err(Error::InvalidMesh("amplitude must lie in [0, 0.5)".into()));
            }
            if subdivisions > 5 {
                return Err(Error::InvalidMesh("at most 5 subdivisions".into()));
            }
            let (v, t) = icosphere(radius, subdivisions, amplitude, seed);
            (v, t, Vec::new())
        }
        MeshSpec::Composite {
            body,
            arm_radius,
            arm_length,
            segments,
        } => {
            for s in body {
                positive(s, "body side")?;
            }
            positive(arm_radius, "arm radius")?;
            positive(arm_length, "arm length")?;
            if segments < 3 {
                return Err(Error::InvalidMesh("arms need at least 3 segments".into()));
            }
            let half = Vector3::from(body) * 0.5;
            let (mut v, mut t) = box_mesh(half, Vector3::zeros());
            // Cylinder axis z mapped onto x.
            let to_x = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
            for sign in [1.0, -1.0] {
                let center = Vector3::new(sign * (half.x + arm_length * 0.5), 0.0, 0.0);
                let (cv, ct) = cylinder_mesh(arm_radius, arm_length, segments, &to_x, center);
                let off = v.len();
                v.extend(cv);
                t.extend(ct.into_iter().map(|[a, b, c]| [a + off, b + off, c + off]));
            }
            (v, t, Vec::new())
        }
    };
    let diameter = max_pairwise_distance(&vertices);
    let fold = match spec {
        MeshSpec::CappedCylinder { symmetry_fold, .. } => *symmetry_fold as u32,
        _ => 1,
    };
    let texture = Texture::new(TextureParams {
        seed,
        wavelength: diameter / 4.0,
        fold,
    });
    TriangleMesh::new(vertices, triangles, symmetries, Some(texture))
}

fn box_mesh(half: Vector3<f64>, center: Vector3<f64>) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        let sx = if i & 1 != 0 { 1.0 } else { -1.0 };
        let sy = if i & 2 != 0 { 1.0 } else { -1.0 };
        let sz = if i & 4 != 0 { 1.0 } else { -1.0 };
        v.push(center + Vector3::new(sx * half.x, sy * half.y, sz * half.z));
    }
    // Outward counter-clockwise quads, split into two triangles each.
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let t = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    (v, t)
}

fn cylinder_mesh(
    radius: f64,
    height: f64,
    segments: usize,
    rot: &Matrix3<f64>,
    center: Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let h = height * 0.5;
    let mut v = Vec::with_capacity(2 * segments + 2);
    for z in [-h, h] {
        for k in 0..segments {
            let a = 2.0 * PI * k as f64 / segments as f64;
            v.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom = v.len();
    v.push(Vector3::new(0.0, 0.0, -h));
    let top = v.len();
    v.push(Vector3::new(0.0, 0.0, h));
    let mut t = Vec::with_capacity(4 * segments);
    for k in 0..segments {
        let k1 = (k + 1) % segments;
        let (b0, b1, t0, t1) = (k, k1, segments + k, segments + k1);
        t.push([b0, b1, t1]);
        t.push([b0, t1, t0]);
        t.push([bottom, b1, b0]);
        t.push([top, t0, t1]);
    }
    let v = v.into_iter().map(|p| rot * p + center).collect();
    (v, t)
}

fn icosphere(radius: f64, subdivisions: u32, amplitude: f64, seed: u64) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) * 0.5;
    let mut v: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut t: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(t.len() * 4);
        for &[a, b, c] in &t {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        t = next;
    }
    // cos is even, so antipodal vertices keep equal radii and the shape stays
    // centrally symmetric.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1c05_u64);
    let bumps: Vec<(Vector3<f64>, f64, f64)> = (0..4)
        .map(|_| (random_unit_vector(&mut rng), rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let v = v
        .into_iter()
        .map(|d| {
            let s: f64 = bumps.iter().map(|(k, f, w)| w * (PI * f * k.dot(&d)).cos()).sum::<f64>() / 4.0;
            d * radius * (1.0 + amplitude * s)
        })
        .collect();
    (v, t)
}

/// Reads the ASCII PLY subset: `vertex` with x y z (extra properties ignored)
/// and triangular `face` lists.
pub fn read_ply(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    let text = fs::read_to_string(path)?;
    let bad = |r: &str| Error::format(path, r.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let (mut n_vert, mut n_face) = (0usize, 0usize);
    let mut vert_props: Vec<String> = Vec::new();
    let mut current = "";
    for line in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii PLY is supported")),
            ["element", "vertex", n] => {
                n_vert = n.parse().map_err(|_| bad("bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| bad("bad face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", .., name] if current == "vertex" => vert_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let idx = |name: &str| vert_props.iter().position(|p| p == name).ok_or_else(|| bad("vertex lacks x/y/z"));
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut vertices = Vec::with_capacity(n_vert);
    let mut body = lines.filter(|l| !l.trim().is_empty());
    for _ in 0..n_vert {
        let line = body.next().ok_or_else(|| bad("truncated vertex list"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad vertex line"))?;
        if vals.len() < vert_props.len() {
            return Err(bad("short vertex line"));
        }
        vertices.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
    }
    let mut triangles = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        let line = body.next().ok_or_else(|| bad("truncated face list"))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad face line"))?;
        if vals.first() != Some(&3) || vals.len() != 4 {
            return Err(bad("only triangular faces are supported"));
        }
        triangles.push([vals[1], vals[2], vals[3]]);
    }
    Ok((vertices, triangles))
}

pub fn write_ply(path: &Path, vertices: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Result<()> {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        triangles.len()
    );
    for v in vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for t in triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    symmetries: Vec<[f64; 16]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    texture: Option<TextureParams>,
}

pub fn read_sidecar(path: &Path) -> Result<(Vec<Pose>, Option<Texture>)> {
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
    let syms = side
        .symmetries
        .iter()
        .map(Pose::from_row_major)
        .collect::<Result<Vec<_>>>()?;
    Ok((syms, side.texture.map(Texture::new)))
}

pub fn write_sidecar(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let side = Sidecar {
        symmetries: mesh.symmetries.iter().map(Pose::to_row_major).collect(),
        texture: mesh.texture.as_ref().map(Texture::params),
    };
    fs::write(path, serde_json::to_string(&side)?)?;
    Ok(())
}
