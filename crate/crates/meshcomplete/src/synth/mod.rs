//! Synthetic face-like mesh family on a fixed template topology.
//!
//! The template is a deformed icosphere at face scale (about 150 x 200 x 90
//! mm) with nose, brow, mouth, chin and cheek features built from fixed
//! radial-basis displacements. Identities are parameterized by a 12-d vector
//! `g` in [-1, 1]^12: the first 8 coordinates drive linear blendshape fields,
//! the last 4 drive interacting radial-basis bumps whose amplitudes are
//! pairwise products and whose centers drift with `g`, so the family does not
//! sit inside any low-dimensional linear subspace.

mod defect;

pub use defect::{make_defect, DefectKind, DefectResult, DefectSpec};

use crate::mesh::{load_mesh, save_mesh, TriMesh};
use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("identity parameter {index} = {value} out of [-1, 1]")]
    ParamOutOfBounds { index: usize, value: f64 },
    #[error("identity parameters need {expected} coordinates, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("dataset needs n >= 20, got {0}")]
    DatasetTooSmall(usize),
    #[error("defect removed every face")]
    DefectEmpty,
    #[error("defect spec invalid: {0}")]
    BadDefectSpec(String),
    #[error("seed vertex {seed} out of range (vertex count {vertex_count})")]
    SeedOutOfRange { seed: u32, vertex_count: usize },
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("dataset manifest error: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Number of identity coordinates: 8 linear + 4 interacting.
pub const IDENTITY_DIM: usize = 12;

/// Identity coordinates, each in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub g: Vec<f64>,
}

impl IdentityParams {
    pub fn new(g: Vec<f64>) -> Result<Self, SynthError> {
        if g.len() != IDENTITY_DIM {
            return Err(SynthError::ParamLength {
                expected: IDENTITY_DIM,
                got: g.len(),
            });
        }
        for (index, &value) in g.iter().enumerate() {
            if !(value.is_finite() && (-1.0..=1.0).contains(&value)) {
                return Err(SynthError::ParamOutOfBounds { index, value });
            }
        }
        Ok(IdentityParams { g })
    }

    pub fn zeros() -> Self {
        IdentityParams {
            g: vec![0.0; IDENTITY_DIM],
        }
    }
}

/// A unit icosphere: icosahedron subdivided `subdivisions` times with
/// vertices normalized onto the unit sphere. Deterministic vertex and face
/// order. `subdivisions = 4` gives 2562 vertices / 5120 faces.
pub fn unit_icosphere(subdivisions: usize) -> TriMesh {
    // Icosahedron oriented so the vertex set is symmetric under x -> -x.
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
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
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
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
        let mut midpoints: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0u32; 3];
            for (k, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].iter().enumerate() {
                let key = (*a.min(b), *a.max(b));
                mids[k] = *midpoints.entry(key).or_insert_with(|| {
                    let m = (vertices[*a as usize].coords + vertices[*b as usize].coords) / 2.0;
                    vertices.push(Point3::from(m.normalize()));
                    (vertices.len() - 1) as u32
                });
            }
            new_faces.push([f[0], mids[0], mids[2]]);
            new_faces.push([f[1], mids[1], mids[0]]);
            new_faces.push([f[2], mids[2], mids[1]]);
            new_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = new_faces;
    }
    TriMesh {
        vertices,
        faces,
        labels: None,
    }
}

/// Template semi-axes in mm: x half-width, y half-height, z half-depth.
const SEMI_AXES: [f64; 3] = [75.0, 100.0, 45.0];

/// A fixed surface feature: bump center given as a unit direction, amplitude
/// along the surface normal (mm, negative for indentations), and Gaussian
/// radius (mm).
struct Feature {
    dir: [f64; 3],
    amp: f64,
    sigma: f64,
}

const TEMPLATE_FEATURES: &[Feature] = &[
    // nose tip and bridge
    Feature { dir: [0.0, -0.05, 1.0], amp: 10.0, sigma: 11.0 },
    Feature { dir: [0.0, 0.18, 0.95], amp: 6.0, sigma: 10.0 },
    // brow ridges
    Feature { dir: [-0.33, 0.42, 0.85], amp: 3.5, sigma: 11.0 },
    Feature { dir: [0.33, 0.42, 0.85], amp: 3.5, sigma: 11.0 },
    // eye sockets (indented)
    Feature { dir: [-0.30, 0.25, 0.93], amp: -2.5, sigma: 7.5 },
    Feature { dir: [0.30, 0.25, 0.93], amp: -2.5, sigma: 7.5 },
    // mouth and chin
    Feature { dir: [0.0, -0.38, 0.95], amp: 3.0, sigma: 9.0 },
    Feature { dir: [0.0, -0.62, 0.82], amp: 4.0, sigma: 12.0 },
    // cheeks
    Feature { dir: [-0.55, -0.12, 0.78], amp: 2.5, sigma: 16.0 },
    Feature { dir: [0.55, -0.12, 0.78], amp: 2.5, sigma: 16.0 },
];

fn ellipsoid_point(dir: [f64; 3]) -> Point3<f64> {
    let d = Vector3::new(dir[0], dir[1], dir[2]).normalize();
    Point3::new(d.x * SEMI_AXES[0], d.y * SEMI_AXES[1], d.z * SEMI_AXES[2])
}

fn ellipsoid_normal(p: Point3<f64>) -> Vector3<f64> {
    Vector3::new(
        p.x / (SEMI_AXES[0] * SEMI_AXES[0]),
        p.y / (SEMI_AXES[1] * SEMI_AXES[1]),
        p.z / (SEMI_AXES[2] * SEMI_AXES[2]),
    )
    .normalize()
}

fn gaussian(p: Point3<f64>, center: Point3<f64>, sigma: f64) -> f64 {
    let d2 = (p - center).norm_squared();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// The fixed face-like template: 2562 vertices, 5120 faces, bilaterally
/// symmetric in x, deterministic across runs.
pub fn make_template() -> TriMesh {
    let sphere = unit_icosphere(4);
    let centers: Vec<Point3<f64>> = TEMPLATE_FEATURES
        .iter()
        .map(|f| ellipsoid_point(f.dir))
        .collect();
    let vertices = sphere
        .vertices
        .iter()
        .map(|v| {
            let p = Point3::new(
                v.x * SEMI_AXES[0],
                v.y * SEMI_AXES[1],
                v.z * SEMI_AXES[2],
            );
            let n = ellipsoid_normal(p);
            let mut offset = 0.0;
            for (f, c) in TEMPLATE_FEATURES.iter().zip(&centers) {
                offset += f.amp * gaussian(p, *c, f.sigma);
            }
            p + n * offset
        })
        .collect();
    TriMesh {
        vertices,
        faces: sphere.faces,
        labels: None,
    }
}

/// One linear blendshape field evaluated on the template.
struct LinearField {
    /// Per-vertex displacement for g = 1 (mm).
    disp: Vec<Vector3<f64>>,
}

/// An interacting bump: amplitude is `amp * g_i * g_j`, center drifts along
/// `drift` by `(g_i + g_j) / 2`.
struct InteractionBump {
    pair: (usize, usize),
    base_dir: [f64; 3],
    drift: Vector3<f64>,
    amp: f64,
    sigma: f64,
}

fn interaction_bumps() -> Vec<InteractionBump> {
    vec![
        InteractionBump {
            pair: (8, 9),
            base_dir: [0.0, 0.55, 0.80],
            drift: Vector3::new(14.0, 0.0, 0.0),
            amp: 2.2,
            sigma: 9.0,
        },
        InteractionBump {
            pair: (8, 10),
            base_dir: [-0.50, -0.05, 0.85],
            drift: Vector3::new(0.0, 14.0, 0.0),
            amp: 2.2,
            sigma: 9.0,
        },
        InteractionBump {
            pair: (8, 11),
            base_dir: [0.50, -0.05, 0.85],
            drift: Vector3::new(0.0, -14.0, 0.0),
            amp: 2.2,
            sigma: 9.0,
        },
        InteractionBump {
            pair: (9, 10),
            base_dir: [0.0, -0.25, 0.99],
            drift: Vector3::new(10.0, 4.0, 0.0),
            amp: 1.8,
            sigma: 8.0,
        },
        InteractionBump {
            pair: (9, 11),
            base_dir: [-0.35, -0.50, 0.80],
            drift: Vector3::new(8.0, -8.0, 0.0),
            amp: 2.0,
            sigma: 10.0,
        },
        InteractionBump {
            pair: (10, 11),
            base_dir: [0.35, -0.50, 0.80],
            drift: Vector3::new(-8.0, -8.0, 0.0),
            amp: 2.0,
            sigma: 10.0,
        },
    ]
}

/// Precomputed identity-generation machinery for one template.
pub struct IdentityModel {
    template: TriMesh,
    normals: Vec<Vector3<f64>>,
    linear: Vec<LinearField>,
    bumps: Vec<InteractionBump>,
}

impl IdentityModel {
    pub fn new() -> IdentityModel {
        let template = make_template();
        let normals: Vec<Vector3<f64>> = template
            .vertices
            .iter()
            .map(|&v| ellipsoid_normal(v))
            .collect();
        let verts = &template.vertices;

        let field = |w: &dyn Fn(Point3<f64>, Vector3<f64>) -> Vector3<f64>| LinearField {
            disp: verts
                .iter()
                .zip(&normals)
                .map(|(&v, &n)| w(v, n))
                .collect(),
        };

        let nose = ellipsoid_point([0.0, -0.05, 1.0]);
        let chin = ellipsoid_point([0.0, -0.62, 0.82]);
        let mouth = ellipsoid_point([0.0, -0.38, 0.95]);
        let brow_l = ellipsoid_point([-0.33, 0.42, 0.85]);
        let brow_r = ellipsoid_point([0.33, 0.42, 0.85]);
        let cheek_l = ellipsoid_point([-0.55, -0.12, 0.78]);
        let cheek_r = ellipsoid_point([0.55, -0.12, 0.78]);

        let linear = vec![
            // nose length: outward at the tip
            field(&|v, n| n * (3.0 * gaussian(v, nose, 13.0))),
            // nose width: antisymmetric lateral motion near the nose
            field(&|v, _| {
                Vector3::new((v.x / 10.0).tanh() * 2.0 * gaussian(v, nose, 12.0), 0.0, 0.0)
            }),
            // face width: global lateral scaling
            field(&|v, _| Vector3::new(v.x / SEMI_AXES[0] * 3.5, 0.0, 0.0)),
            // jaw depth
            field(&|v, _| Vector3::new(0.0, 0.0, 2.5 * gaussian(v, chin, 20.0))),
            // brow height
            field(&|v, _| {
                Vector3::new(
                    0.0,
                    2.0 * (gaussian(v, brow_l, 12.0) + gaussian(v, brow_r, 12.0)),
                    0.0,
                )
            }),
            // cheek fullness
            field(&|v, n| n * (2.5 * (gaussian(v, cheek_l, 16.0) + gaussian(v, cheek_r, 16.0)))),
            // chin projection
            field(&|v, n| n * (2.5 * gaussian(v, chin, 11.0))),
            // mouth region
            field(&|v, n| n * (2.0 * gaussian(v, mouth, 9.0))),
        ];

        IdentityModel {
            template,
            normals,
            linear,
            bumps: interaction_bumps(),
        }
    }

    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    /// Template plus linear blendshapes plus interacting drifted bumps.
    pub fn synth_identity(&self, params: &IdentityParams) -> Result<TriMesh, SynthError> {
        let checked = IdentityParams::new(params.g.clone())?;
        let g = &checked.g;
        let mut vertices = self.template.vertices.clone();

        for (field, &gi) in self.linear.iter().zip(g.iter().take(8)) {
            if gi != 0.0 {
                for (v, d) in vertices.iter_mut().zip(&field.disp) {
                    *v += d * gi;
                }
            }
        }

        for bump in &self.bumps {
            let (i, j) = bump.pair;
            let amp = bump.amp * g[i] * g[j];
            let center = ellipsoid_point(bump.base_dir) + bump.drift * (0.5 * (g[i] + g[j]));
            if amp == 0.0 {
                continue;
            }
            for ((v, n), tv) in vertices
                .iter_mut()
                .zip(&self.normals)
                .zip(&self.template.vertices)
            {
                // Bump weight is evaluated on the undeformed template so the
                // field is exactly Gaussian in g-drifted coordinates.
                let w = gaussian(*tv, center, bump.sigma);
                *v += n * (amp * w);
            }
        }

        Ok(TriMesh {
            vertices,
            faces: self.template.faces.clone(),
            labels: None,
        })
    }
}

impl Default for IdentityModel {
    fn default() -> Self {
        Self::new()
    }
}

/// Convenience wrapper building the model once.
pub fn synth_identity(params: &IdentityParams) -> Result<TriMesh, SynthError> {
    IdentityModel::new().synth_identity(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub g: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub n: usize,
    pub entries: Vec<ManifestEntry>,
}

/// An in-memory synthetic dataset.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub meshes: Vec<TriMesh>,
}

impl Dataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mean vertex positions over the training split, on template topology.
    pub fn train_mean_mesh(&self) -> TriMesh {
        let train = self.split_indices(Split::Train);
        let nv = self.meshes[0].vertex_count();
        let mut mean = vec![Vector3::zeros(); nv];
        for &i in &train {
            for (m, v) in mean.iter_mut().zip(&self.meshes[i].vertices) {
                *m += v.coords;
            }
        }
        let scale = 1.0 / train.len() as f64;
        TriMesh {
            vertices: mean.into_iter().map(|m| Point3::from(m * scale)).collect(),
            faces: self.meshes[0].faces.clone(),
            labels: None,
        }
    }
}

/// Draws `n` identities with uniform parameters, holding out 5% (rounded up)
/// for testing. Deterministic given the seed.
pub fn make_dataset(n: usize, seed: u64) -> Result<Dataset, SynthError> {
    if n < 20 {
        return Err(SynthError::DatasetTooSmall(n));
    }
    let model = IdentityModel::new();
    let mut rng = crate::config::substream(seed, "dataset");
    let mut entries = Vec::with_capacity(n);
    let mut meshes = Vec::with_capacity(n);
    for i in 0..n {
        let g: Vec<f64> = (0..IDENTITY_DIM)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let params = IdentityParams::new(g.clone())?;
        meshes.push(model.synth_identity(&params)?);
        entries.push(ManifestEntry {
            id: format!("id_{i:04}"),
            g,
            split: Split::Train,
        });
    }
    // Hold out ceil(0.05 n), chosen by a deterministic shuffle.
    let n_test = n.div_ceil(20);
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = crate::config::substream(seed, "split");
    for i in (1..order.len()).rev() {
        let j = split_rng.random_range(0..=i);
        order.swap(i, j);
    }
    for &i in order.iter().take(n_test) {
        entries[i].split = Split::Test;
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            version: 1,
            seed,
            n,
            entries,
        },
        meshes,
    })
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    for (entry, mesh) in dataset.manifest.entries.iter().zip(&dataset.meshes) {
        save_mesh(mesh, dir.join(format!("{}.ply", entry.id)))?;
    }
    let manifest = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(dir.join("manifest.json"), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut meshes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = dir.join(format!("{}.ply", entry.id));
        meshes.push(load_mesh(&path)?.mesh);
    }
    if meshes.is_empty() {
        return Err(SynthError::Manifest("empty dataset".into()));
    }
    Ok(Dataset { manifest, meshes })
}

/// The 32 fixed landmark vertex ids on the template, from the versioned
/// JSON asset.
pub fn landmark_vertex_ids() -> Vec<u32> {
    let asset: serde_json::Value =
        serde_json::from_str(include_str!("landmarks.json")).expect("landmark asset parses");
    asset["landmarks"]
        .as_array()
        .expect("landmark list")
        .iter()
        .map(|l| l["vertex"].as_u64().expect("vertex id") as u32)
        .collect()
}

/// Unit directions of the landmark set; the asset pins the nearest template
/// vertex for each.
#[cfg(test)]
pub(crate) fn landmark_directions() -> Vec<(&'static str, [f64; 3])> {
    vec![
        ("nose_tip", [0.0, -0.05, 1.0]),
        ("nose_bridge", [0.0, 0.18, 0.95]),
        ("nose_base", [0.0, -0.18, 1.0]),
        ("nose_left", [-0.12, -0.08, 0.97]),
        ("nose_right", [0.12, -0.08, 0.97]),
        ("eye_inner_l", [-0.18, 0.25, 0.95]),
        ("eye_inner_r", [0.18, 0.25, 0.95]),
        ("eye_outer_l", [-0.42, 0.25, 0.86]),
        ("eye_outer_r", [0.42, 0.25, 0.86]),
        ("brow_mid_l", [-0.33, 0.42, 0.85]),
        ("brow_mid_r", [0.33, 0.42, 0.85]),
        ("brow_inner_l", [-0.15, 0.45, 0.9]),
        ("brow_inner_r", [0.15, 0.45, 0.9]),
        ("forehead_mid", [0.0, 0.6, 0.8]),
        ("forehead_l", [-0.3, 0.6, 0.74]),
        ("forehead_r", [0.3, 0.6, 0.74]),
        ("mouth_corner_l", [-0.2, -0.38, 0.92]),
        ("mouth_corner_r", [0.2, -0.38, 0.92]),
        ("mouth_mid", [0.0, -0.38, 0.95]),
        ("lip_top", [0.0, -0.3, 0.97]),
        ("chin_tip", [0.0, -0.62, 0.82]),
        ("chin_l", [-0.2, -0.58, 0.78]),
        ("chin_r", [0.2, -0.58, 0.78]),
        ("jaw_l", [-0.45, -0.45, 0.7]),
        ("jaw_r", [0.45, -0.45, 0.7]),
        ("cheek_l", [-0.55, -0.12, 0.78]),
        ("cheek_r", [0.55, -0.12, 0.78]),
        ("cheekbone_l", [-0.5, 0.1, 0.8]),
        ("cheekbone_r", [0.5, 0.1, 0.8]),
        ("temple_l", [-0.6, 0.4, 0.6]),
        ("temple_r", [0.6, 0.4, 0.6]),
        ("glabella", [0.0, 0.32, 0.95]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let s = unit_icosphere(0);
        assert_eq!((s.vertex_count(), s.face_count()), (12, 20));
        let s = unit_icosphere(4);
        assert_eq!((s.vertex_count(), s.face_count()), (2562, 5120));
        for v in &s.vertices {
            assert!((v.coords.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn template_is_fixed_size_and_deterministic() {
        let a = make_template();
        let b = make_template();
        assert_eq!(a.vertex_count(), 2562);
        assert_eq!(a.face_count(), 5120);
        assert_eq!(a, b);
    }

    #[test]
    fn template_is_bilaterally_symmetric() {
        let t = make_template();
        let tree = crate::mesh::KdTree::build(&t.vertices);
        for v in &t.vertices {
            let mirrored = Point3::new(-v.x, v.y, v.z);
            let nearest = t.vertices[tree.nearest(mirrored) as usize];
            assert!(
                (nearest - mirrored).norm() < 1e-6,
                "no mirror partner for {v:?}"
            );
        }
    }

    #[test]
    fn zero_params_give_template_exactly() {
        let model = IdentityModel::new();
        let mesh = model.synth_identity(&IdentityParams::zeros()).unwrap();
        assert_eq!(&mesh, model.template());
    }

    #[test]
    fn negated_params_give_a_different_face() {
        let model = IdentityModel::new();
        let mut g = vec![0.0; IDENTITY_DIM];
        for (i, v) in g.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.7 } else { -0.4 };
        }
        let plus = model
            .synth_identity(&IdentityParams::new(g.clone()).unwrap())
            .unwrap();
        let minus = model
            .synth_identity(&IdentityParams::new(g.iter().map(|v| -v).collect()).unwrap())
            .unwrap();
        let mut max_diff = 0.0f64;
        let mut max_odd_residual = 0.0f64;
        for ((p, m), t) in plus
            .vertices
            .iter()
            .zip(&minus.vertices)
            .zip(&model.template().vertices)
        {
            max_diff = max_diff.max((p - m).norm());
            // If the family were purely linear, plus + minus == 2 * template.
            let odd = (p.coords + m.coords - 2.0 * t.coords).norm();
            max_odd_residual = max_odd_residual.max(odd);
        }
        assert!(max_diff > 0.1);
        assert!(max_odd_residual > 0.05, "interaction terms missing");
    }

    #[test]
    fn out_of_bounds_params_rejected() {
        let mut g = vec![0.0; IDENTITY_DIM];
        g[3] = 1.5;
        assert!(IdentityParams::new(g).is_err());
    }

    #[test]
    fn displacement_bounded_over_corner_sweep() {
        let model = IdentityModel::new();
        // All 2^12 corners of the parameter cube.
        let mut max_disp = 0.0f64;
        for mask in 0..(1u32 << IDENTITY_DIM) {
            let g: Vec<f64> = (0..IDENTITY_DIM)
                .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let mesh = model
                .synth_identity(&IdentityParams::new(g).unwrap())
                .unwrap();
            for (v, t) in mesh.vertices.iter().zip(&model.template().vertices) {
                max_disp = max_disp.max((v - t).norm());
            }
        }
        assert!(max_disp <= 15.0, "max displacement {max_disp} mm");
        assert!(max_disp > 2.0, "family is degenerate");
    }

    #[test]
    fn dataset_split_sizes() {
        let d = make_dataset(512, 7).unwrap();
        let train = d.split_indices(Split::Train).len();
        let test = d.split_indices(Split::Test).len();
        assert_eq!((train, test), (486, 26));

        let d = make_dataset(20, 7).unwrap();
        assert_eq!(d.split_indices(Split::Test).len(), 1);
    }

    #[test]
    fn dataset_is_reproducible() {
        let a = make_dataset(20, 42).unwrap();
        let b = make_dataset(20, 42).unwrap();
        assert_eq!(a.manifest.entries.len(), b.manifest.entries.len());
        for (x, y) in a.manifest.entries.iter().zip(&b.manifest.entries) {
            assert_eq!(x.g, y.g);
            assert_eq!(x.split, y.split);
        }
        for (x, y) in a.meshes.iter().zip(&b.meshes) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_dataset(20, 3).unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest.entries.len(), 20);
        for (a, b) in loaded.meshes.iter().zip(&d.meshes) {
            for (va, vb) in a.vertices.iter().zip(&b.vertices) {
                assert!((va - vb).norm() < 1e-4); // float32 storage
            }
        }
    }

    #[test]
    fn landmarks_match_regeneration_from_directions() {
        let t = make_template();
        let tree = crate::mesh::KdTree::build(&t.vertices);
        let regenerated: Vec<u32> = landmark_directions()
            .iter()
            .map(|(_, d)| tree.nearest(ellipsoid_point(*d)))
            .collect();
        assert_eq!(landmark_vertex_ids(), regenerated);
        assert_eq!(regenerated.len(), 32);
        let unique: std::collections::BTreeSet<u32> = regenerated.iter().copied().collect();
        assert_eq!(unique.len(), 32, "landmark ids must be distinct");
    }
}
