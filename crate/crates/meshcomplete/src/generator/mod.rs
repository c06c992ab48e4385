//! The shape generator: a graph-convolutional autoencoder with a pooled
//! global path and a full-resolution local path fused into a 256-d latent,
//! plus its mirrored decoder.
//!
//! Positions are scaled by a fixed factor on the way in; the decoder ends in
//! a zero-initialized convolution added to a trainable base shape initialized
//! from the template, so an untrained model decodes to the template and
//! training starts from the mean face.

mod feast;
mod pca;
mod train;

pub use feast::{FeastLayer, LevelGraph};
pub use pca::PcaModel;
pub use train::{train, EpochStats, TrainConfig, TrainLog};

use crate::autodiff::{AutodiffError, ParamId, ParamSet, Tape, Tensor, Value};
use crate::hierarchy::{HierarchyError, SamplingHierarchy};
use crate::mesh::TriMesh;
use nalgebra::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("input has {got} vertices, template has {expected}")]
    VertexCountMismatch { got: usize, expected: usize },
    #[error("latent vector has length {got}, model expects {expected}")]
    LatentMismatch { got: usize, expected: usize },
    #[error("config needs one global channel width per hierarchy level ({levels}), got {channels}")]
    ChannelsVsLevels { channels: usize, levels: usize },
    #[error("dataset mesh {index} does not share the template topology")]
    TopologyMismatch { index: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no channel scaling matches the target parameter count within 10% (best {best}, target {target})")]
    NoMatchingWidth { best: usize, target: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("model checkpoint error: {0}")]
    Checkpoint(String),
}

/// Which encoder/decoder paths are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    GlobalOnly,
    LocalOnly,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "global-only" => Ok(Variant::GlobalOnly),
            "local-only" => Ok(Variant::LocalOnly),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::GlobalOnly => write!(f, "global-only"),
            Variant::LocalOnly => write!(f, "local-only"),
        }
    }
}

/// Network widths. Defaults match the reference configuration used across
/// the test suite and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent: usize,
    pub global_channels: Vec<usize>,
    pub local_channels: Vec<usize>,
    pub heads: usize,
    pub latent_global: usize,
    pub latent_local: usize,
    pub variant: Variant,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent: 256,
            global_channels: vec![16, 32, 64, 128],
            local_channels: vec![8, 8],
            heads: 8,
            latent_global: 128,
            latent_local: 128,
            variant: Variant::Full,
        }
    }
}

/// Positions are multiplied by this on encode input (mm -> internal scale).
const INPUT_SCALE: f64 = 0.01;

struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Dense {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = params.add(
            format!("{name}.w"),
            Tensor::from_fn(input, output, |_, _| rng.random_range(-bound..=bound)),
        );
        let bias = params.add(format!("{name}.b"), Tensor::zeros(1, output));
        Dense { weight, bias }
    }

    fn forward(&self, x: &Value, leaves: &[Value]) -> Result<Value, AutodiffError> {
        x.matmul(&leaves[self.weight.0])?
            .add_rowvec(&leaves[self.bias.0])
    }

    fn count(input: usize, output: usize) -> usize {
        input * output + output
    }
}

struct GlobalPath {
    enc_convs: Vec<FeastLayer>,
    enc_dense: Dense,
    dec_desc: Dense,
    dec_expand: Dense,
    dec_convs: Vec<FeastLayer>, // coarsest-to-finest, length levels-1
}

struct LocalPath {
    enc_convs: Vec<FeastLayer>,
    enc_dense: Dense,
    dec_desc: Dense,
    dec_expand: Dense,
    dec_convs: Vec<FeastLayer>, // length local_channels.len() - 1
}

/// The trained (or trainable) generator.
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub hierarchy: Arc<SamplingHierarchy>,
    pub params: ParamSet,
    graphs: Vec<LevelGraph>,
    global: Option<GlobalPath>,
    local: Option<LocalPath>,
    fusion: Dense,
    final_conv: FeastLayer,
    base_shape: ParamId,
    /// Mean encoded training sample, normalized; the fitting initializer.
    pub z_init: Option<Vec<f64>>,
}

impl GeneratorModel {
    pub fn new(
        hierarchy: Arc<SamplingHierarchy>,
        config: GeneratorConfig,
        seed: u64,
    ) -> Result<GeneratorModel, GeneratorError> {
        let levels = hierarchy.level_count();
        if config.variant != Variant::LocalOnly && config.global_channels.len() != levels {
            return Err(GeneratorError::ChannelsVsLevels {
                channels: config.global_channels.len(),
                levels,
            });
        }
        assert!(
            !config.local_channels.is_empty(),
            "local path needs at least one width"
        );
        let mut rng = crate::config::substream(seed, "init");
        let mut params = ParamSet::new();
        let graphs: Vec<LevelGraph> = hierarchy
            .levels
            .iter()
            .map(|l| LevelGraph::from_adjacency(&l.adjacency))
            .collect();
        let counts = hierarchy.vertex_counts();

        let global = if config.variant != Variant::LocalOnly {
            let ch = &config.global_channels;
            let mut enc_convs = Vec::new();
            for (i, &out) in ch.iter().enumerate() {
                let input = if i == 0 { 3 } else { ch[i - 1] };
                enc_convs.push(FeastLayer::new(
                    &mut params,
                    &format!("enc.global.conv{i}"),
                    input,
                    out,
                    config.heads,
                    &mut rng,
                ));
            }
            let flat = counts[levels - 1] * ch[levels - 1];
            let enc_dense = Dense::new(
                &mut params,
                "enc.global.dense",
                flat,
                config.latent_global,
                &mut rng,
            );
            let dec_desc = Dense::new(
                &mut params,
                "dec.global.desc",
                config.latent,
                config.latent_global,
                &mut rng,
            );
            let dec_expand = Dense::new(
                &mut params,
                "dec.global.expand",
                config.latent_global,
                flat,
                &mut rng,
            );
            let mut dec_convs = Vec::new();
            for k in (1..levels).rev() {
                dec_convs.push(FeastLayer::new(
                    &mut params,
                    &format!("dec.global.conv{k}"),
                    ch[k],
                    ch[k - 1],
                    config.heads,
                    &mut rng,
                ));
            }
            Some(GlobalPath {
                enc_convs,
                enc_dense,
                dec_desc,
                dec_expand,
                dec_convs,
            })
        } else {
            None
        };

        let local = if config.variant != Variant::GlobalOnly {
            let ch = &config.local_channels;
            let mut enc_convs = Vec::new();
            for (i, &out) in ch.iter().enumerate() {
                let input = if i == 0 { 3 } else { ch[i - 1] };
                enc_convs.push(FeastLayer::new(
                    &mut params,
                    &format!("enc.local.conv{i}"),
                    input,
                    out,
                    config.heads,
                    &mut rng,
                ));
            }
            let flat = counts[0] * ch[ch.len() - 1];
            let enc_dense = Dense::new(
                &mut params,
                "enc.local.dense",
                flat,
                config.latent_local,
                &mut rng,
            );
            let dec_desc = Dense::new(
                &mut params,
                "dec.local.desc",
                config.latent,
                config.latent_local,
                &mut rng,
            );
            let dec_expand = Dense::new(
                &mut params,
                "dec.local.expand",
                config.latent_local,
                flat,
                &mut rng,
            );
            let mut dec_convs = Vec::new();
            for k in (1..ch.len()).rev() {
                dec_convs.push(FeastLayer::new(
                    &mut params,
                    &format!("dec.local.conv{k}"),
                    ch[k],
                    ch[k - 1],
                    config.heads,
                    &mut rng,
                ));
            }
            Some(LocalPath {
                enc_convs,
                enc_dense,
                dec_desc,
                dec_expand,
                dec_convs,
            })
        } else {
            None
        };

        let fused_width = match config.variant {
            Variant::Full => config.latent_global + config.latent_local,
            Variant::GlobalOnly => config.latent_global,
            Variant::LocalOnly => config.latent_local,
        };
        let fusion = Dense::new(&mut params, "enc.fusion", fused_width, config.latent, &mut rng);

        let combine_width = match config.variant {
            Variant::Full => config.global_channels[0] + config.local_channels[0],
            Variant::GlobalOnly => config.global_channels[0],
            Variant::LocalOnly => config.local_channels[0],
        };
        let final_conv =
            FeastLayer::new_zeroed(&mut params, "dec.final", combine_width, 3, config.heads);
        let template = hierarchy.template();
        let base = Tensor::from_fn(template.vertex_count(), 3, |i, j| template.vertices[i][j]);
        let base_shape = params.add("dec.base_shape", base);

        Ok(GeneratorModel {
            config,
            hierarchy,
            params,
            graphs,
            global,
            local,
            fusion,
            final_conv,
            base_shape,
            z_init: None,
        })
    }

    pub fn template(&self) -> &TriMesh {
        self.hierarchy.template()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Encoder forward on an existing tape; `leaves` from
    /// [`ParamSet::leaves`] (or the non-trainable variant for fitting).
    pub fn encode(&self, leaves: &[Value], vertices: &Value) -> Result<Value, GeneratorError> {
        let template_count = self.template().vertex_count();
        if vertices.rows() != template_count || vertices.cols() != 3 {
            return Err(GeneratorError::VertexCountMismatch {
                got: vertices.rows(),
                expected: template_count,
            });
        }
        let x = vertices.scale(INPUT_SCALE);
        let mut descriptors: Vec<Value> = Vec::new();

        if let Some(global) = &self.global {
            let mut h = x.clone();
            for (i, conv) in global.enc_convs.iter().enumerate() {
                h = conv.forward(&h, &self.graphs[i], leaves)?.elu(1.0);
                if i + 1 < self.hierarchy.level_count() {
                    h = h.spmm(&self.hierarchy.downs[i])?;
                }
            }
            let flat = h.reshape(1, h.rows() * h.cols())?;
            descriptors.push(global.enc_dense.forward(&flat, leaves)?.elu(1.0));
        }
        if let Some(local) = &self.local {
            let mut h = x.clone();
            for conv in &local.enc_convs {
                h = conv.forward(&h, &self.graphs[0], leaves)?.elu(1.0);
            }
            let flat = h.reshape(1, h.rows() * h.cols())?;
            descriptors.push(local.enc_dense.forward(&flat, leaves)?.elu(1.0));
        }

        let fused = match descriptors.len() {
            1 => descriptors.pop().unwrap(),
            2 => descriptors[0].concat_cols(&descriptors[1])?,
            _ => unreachable!(),
        };
        Ok(self.fusion.forward(&fused, leaves)?)
    }

    /// Decoder forward on an existing tape.
    pub fn decode(&self, leaves: &[Value], z: &Value) -> Result<Value, GeneratorError> {
        if z.rows() != 1 || z.cols() != self.config.latent {
            return Err(GeneratorError::LatentMismatch {
                got: z.rows() * z.cols(),
                expected: self.config.latent,
            });
        }
        let levels = self.hierarchy.level_count();
        let counts = self.hierarchy.vertex_counts();
        let mut branches: Vec<Value> = Vec::new();

        if let Some(global) = &self.global {
            let ch = &self.config.global_channels;
            let desc = global.dec_desc.forward(z, leaves)?.elu(1.0);
            let flat = global.dec_expand.forward(&desc, leaves)?.elu(1.0);
            let mut h = flat.reshape(counts[levels - 1], ch[levels - 1])?;
            for (conv, k) in global.dec_convs.iter().zip((1..levels).rev()) {
                h = conv.forward(&h, &self.graphs[k], leaves)?.elu(1.0);
                h = h.spmm(&self.hierarchy.ups[k - 1])?;
            }
            branches.push(h);
        }
        if let Some(local) = &self.local {
            let ch = &self.config.local_channels;
            let desc = local.dec_desc.forward(z, leaves)?.elu(1.0);
            let flat = local.dec_expand.forward(&desc, leaves)?.elu(1.0);
            let mut h = flat.reshape(counts[0], ch[ch.len() - 1])?;
            for conv in &local.dec_convs {
                h = conv.forward(&h, &self.graphs[0], leaves)?.elu(1.0);
            }
            branches.push(h);
        }

        let combined = match branches.len() {
            1 => branches.pop().unwrap(),
            2 => branches[0].concat_cols(&branches[1])?,
            _ => unreachable!(),
        };
        let offsets = self.final_conv.forward(&combined, &self.graphs[0], leaves)?;
        Ok(offsets.add(&leaves[self.base_shape.0])?)
    }

    /// Encode without gradients; returns the latent as a (1 x latent) tensor.
    pub fn encode_tensor(&self, vertices: &Tensor) -> Result<Tensor, GeneratorError> {
        let tape = Tape::new();
        let leaves = self.params.leaves_with(&tape, false);
        let x = tape.leaf(vertices.clone(), false);
        let z = self.encode(&leaves, &x)?;
        Ok((*z.value()).clone())
    }

    /// Decode without gradients onto the template topology.
    pub fn decode_to_mesh(&self, z: &Tensor) -> Result<TriMesh, GeneratorError> {
        let tape = Tape::new();
        let leaves = self.params.leaves_with(&tape, false);
        let zv = tape.leaf(z.reshaped(1, z.len())?, false);
        let y = self.decode(&leaves, &zv)?;
        Ok(self.mesh_from_vertices(&y.value()))
    }

    pub fn mesh_from_vertices(&self, vertices: &Tensor) -> TriMesh {
        TriMesh {
            vertices: (0..vertices.rows())
                .map(|i| Point3::new(vertices.get(i, 0), vertices.get(i, 1), vertices.get(i, 2)))
                .collect(),
            faces: self.template().faces.clone(),
            labels: None,
        }
    }

    /// Uniform draw on the unit latent sphere, decoded to a mesh.
    pub fn sample(&self, seed: u64) -> Result<TriMesh, GeneratorError> {
        let z = sample_unit_latent(self.config.latent, seed);
        self.decode_to_mesh(&z)
    }

    pub fn save(&self, dir: &Path) -> Result<(), GeneratorError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| GeneratorError::Checkpoint(format!("{}: {e}", dir.display())))?;
        self.params
            .save(&dir.join("params.bin"))
            .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        self.hierarchy
            .save(&dir.join("hierarchy.bin"))
            .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        let meta = ModelMeta {
            version: 1,
            config: self.config.clone(),
            z_init: self.z_init.clone(),
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join("model.json"), json)
            .map_err(|e| GeneratorError::Checkpoint(e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<GeneratorModel, GeneratorError> {
        let meta: ModelMeta = serde_json::from_str(
            &std::fs::read_to_string(dir.join("model.json"))
                .map_err(|e| GeneratorError::Checkpoint(format!("{}: {e}", dir.display())))?,
        )
        .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        if meta.version != 1 {
            return Err(GeneratorError::Checkpoint(format!(
                "unsupported model version {}",
                meta.version
            )));
        }
        let hierarchy = Arc::new(
            SamplingHierarchy::load(&dir.join("hierarchy.bin"))
                .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?,
        );
        let mut model = GeneratorModel::new(hierarchy, meta.config, 0)?;
        let params = ParamSet::load(&dir.join("params.bin"))
            .map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        if params.len() != model.params.len() {
            return Err(GeneratorError::Checkpoint(format!(
                "checkpoint has {} arrays, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for (expected, got) in model.params.iter().zip(params.iter()) {
            if expected.name != got.name || expected.data.shape() != got.data.shape() {
                return Err(GeneratorError::Checkpoint(format!(
                    "checkpoint array {} does not match model layout",
                    got.name
                )));
            }
        }
        model.params = params;
        model.z_init = meta.z_init;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    version: u32,
    config: GeneratorConfig,
    z_init: Option<Vec<f64>>,
}

/// Hypersphere regularizer `(||z|| - 1)^2` on the tape.
pub fn reg_loss(z: &Value) -> Result<Value, AutodiffError> {
    let one = z.owner().scalar(1.0);
    Ok(z.vecnorm().sub(&one)?.sumsq())
}

/// Uniform draw on the unit latent sphere (normalized standard Gaussian).
pub fn sample_unit_latent(latent: usize, seed: u64) -> Tensor {
    let mut rng = crate::config::substream(seed, "sample");
    let mut z = vec![0.0f64; latent];
    let mut i = 0;
    while i < latent {
        // Box-Muller from two uniforms.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        z[i] = r * theta.cos();
        if i + 1 < latent {
            z[i + 1] = r * theta.sin();
        }
        i += 2;
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    Tensor::from_vec(1, latent, z.into_iter().map(|v| v / norm).collect())
}

/// Counts parameters analytically for a config on a hierarchy's level sizes.
pub fn param_count_for(vertex_counts: &[usize], config: &GeneratorConfig) -> usize {
    let levels = vertex_counts.len();
    let mut total = 0usize;
    if config.variant != Variant::LocalOnly {
        let ch = &config.global_channels;
        for (i, &out) in ch.iter().enumerate() {
            let input = if i == 0 { 3 } else { ch[i - 1] };
            total += FeastLayer::param_count(input, out, config.heads);
        }
        let flat = vertex_counts[levels - 1] * ch[levels - 1];
        total += Dense::count(flat, config.latent_global);
        total += Dense::count(config.latent, config.latent_global);
        total += Dense::count(config.latent_global, flat);
        for k in (1..levels).rev() {
            total += FeastLayer::param_count(ch[k], ch[k - 1], config.heads);
        }
    }
    if config.variant != Variant::GlobalOnly {
        let ch = &config.local_channels;
        for (i, &out) in ch.iter().enumerate() {
            let input = if i == 0 { 3 } else { ch[i - 1] };
            total += FeastLayer::param_count(input, out, config.heads);
        }
        let flat = vertex_counts[0] * ch[ch.len() - 1];
        total += Dense::count(flat, config.latent_local);
        total += Dense::count(config.latent, config.latent_local);
        total += Dense::count(config.latent_local, flat);
        for k in (1..ch.len()).rev() {
            total += FeastLayer::param_count(ch[k], ch[k - 1], config.heads);
        }
    }
    let fused = match config.variant {
        Variant::Full => config.latent_global + config.latent_local,
        Variant::GlobalOnly => config.latent_global,
        Variant::LocalOnly => config.latent_local,
    };
    total += Dense::count(fused, config.latent);
    let combine = match config.variant {
        Variant::Full => config.global_channels[0] + config.local_channels[0],
        Variant::GlobalOnly => config.global_channels[0],
        Variant::LocalOnly => config.local_channels[0],
    };
    total += FeastLayer::param_count(combine, 3, config.heads);
    total += vertex_counts[0] * 3; // base shape
    total
}

fn scaled(widths: &[usize], factor: f64) -> Vec<usize> {
    widths
        .iter()
        .map(|&c| ((c as f64 * factor).round() as usize).max(1))
        .collect()
}

/// Builds a variant whose parameter count matches the full configuration
/// within 10%, adjusting channel widths by a scalar factor.
pub fn build_variant(
    hierarchy: Arc<SamplingHierarchy>,
    base: &GeneratorConfig,
    variant: Variant,
    seed: u64,
) -> Result<GeneratorModel, GeneratorError> {
    let counts = hierarchy.vertex_counts();
    let mut full = base.clone();
    full.variant = Variant::Full;
    let target = param_count_for(&counts, &full);

    let config = match variant {
        Variant::Full => full,
        Variant::GlobalOnly | Variant::LocalOnly => {
            let mut best: Option<(usize, GeneratorConfig)> = None;
            let mut factor = 0.05;
            while factor <= 10.0 {
                let mut candidate = base.clone();
                candidate.variant = variant;
                if variant == Variant::GlobalOnly {
                    candidate.global_channels = scaled(&base.global_channels, factor);
                    candidate.latent_global =
                        ((base.latent_global as f64 * factor).round() as usize).max(1);
                } else {
                    candidate.local_channels = scaled(&base.local_channels, factor);
                    candidate.latent_local =
                        ((base.latent_local as f64 * factor).round() as usize).max(1);
                }
                let count = param_count_for(&counts, &candidate);
                let better = match &best {
                    None => true,
                    Some((c, _)) => {
                        (count as i64 - target as i64).abs() < (*c as i64 - target as i64).abs()
                    }
                };
                if better {
                    best = Some((count, candidate));
                }
                factor += 0.01;
            }
            let (count, config) = best.unwrap();
            let rel = (count as f64 - target as f64).abs() / target as f64;
            if rel > 0.10 {
                return Err(GeneratorError::NoMatchingWidth {
                    best: count,
                    target,
                });
            }
            config
        }
    };
    GeneratorModel::new(hierarchy, config, seed)
}

impl ParamSet {
    /// Leaves with a chosen trainability (non-trainable for fitting).
    pub fn leaves_with(&self, tape: &Tape, requires_grad: bool) -> Vec<Value> {
        self.iter()
            .map(|p| tape.shared_leaf(Arc::clone(&p.data), requires_grad))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_coords;
    use crate::hierarchy::build_hierarchy;

    fn small_hierarchy() -> Arc<SamplingHierarchy> {
        // Small but real: icosphere-2 template, 3 levels.
        let template = crate::synth::unit_icosphere(2);
        Arc::new(build_hierarchy(&template, &[160, 40], 6).unwrap())
    }

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            latent: 256,
            global_channels: vec![4, 8, 12],
            local_channels: vec![4, 4],
            heads: 2,
            latent_global: 16,
            latent_local: 16,
            variant: Variant::Full,
        }
    }

    #[test]
    fn latent_is_256_and_decode_matches_template_count() {
        let h = small_hierarchy();
        let model = GeneratorModel::new(Arc::clone(&h), small_config(), 7).unwrap();
        let x = Tensor::from_fn(h.template().vertex_count(), 3, |i, j| {
            h.template().vertices[i][j]
        });
        let z = model.encode_tensor(&x).unwrap();
        assert_eq!(z.shape(), (1, 256));
        let mesh = model.decode_to_mesh(&z).unwrap();
        assert_eq!(mesh.vertex_count(), h.template().vertex_count());
        assert_eq!(mesh.faces, h.template().faces);
    }

    #[test]
    fn encode_is_deterministic() {
        let h = small_hierarchy();
        let model = GeneratorModel::new(h.clone(), small_config(), 7).unwrap();
        let x = Tensor::from_fn(h.template().vertex_count(), 3, |i, j| {
            h.template().vertices[i][j] * 1.01
        });
        let a = model.encode_tensor(&x).unwrap();
        let b = model.encode_tensor(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_decoder_outputs_the_base_shape() {
        let h = small_hierarchy();
        let model = GeneratorModel::new(h.clone(), small_config(), 7).unwrap();
        let z = sample_unit_latent(256, 3);
        let mesh = model.decode_to_mesh(&z).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&h.template().vertices) {
            assert!((a - b).norm() < 1e-12, "zero-init decoder must give base");
        }
    }

    #[test]
    fn wrong_vertex_count_is_rejected() {
        let h = small_hierarchy();
        let model = GeneratorModel::new(h, small_config(), 7).unwrap();
        let x = Tensor::zeros(10, 3);
        assert!(matches!(
            model.encode_tensor(&x),
            Err(GeneratorError::VertexCountMismatch { .. })
        ));
    }

    #[test]
    fn sample_is_unit_norm_and_seeded() {
        let z = sample_unit_latent(256, 42);
        let norm = z.sum_squares().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(z, sample_unit_latent(256, 42));
        assert_ne!(z, sample_unit_latent(256, 43));
    }

    #[test]
    fn decode_gradient_matches_finite_differences() {
        let h = small_hierarchy();
        let mut model = GeneratorModel::new(h.clone(), small_config(), 7).unwrap();
        // Perturb all parameters so the decode jacobian w.r.t. z is nonzero.
        let mut rng = crate::config::substream(9, "perturb");
        for i in 0..model.params.len() {
            model.params.update(i, |t| {
                for x in t.as_mut_slice() {
                    *x += rng.random_range(-0.05..0.05);
                }
            });
        }
        let target = Tensor::from_fn(h.template().vertex_count(), 3, |i, j| {
            h.template().vertices[i][j] * 0.9
        });
        let z0 = sample_unit_latent(256, 5);
        let coords: Vec<(usize, usize)> = (0..10).map(|k| (0, k * 19 % 256)).collect();
        let err = grad_check_coords(
            |tape, z| {
                let leaves = model.params.leaves_with(tape, false);
                let y = model
                    .decode(&leaves, z)
                    .map_err(|_| AutodiffError::NonFinite { op: "decode" })?;
                let t = tape.leaf(target.clone(), false);
                y.mse(&t)
            },
            &z0,
            1e-5,
            &coords,
        )
        .unwrap();
        assert!(err < 1e-3, "decode grad err {err}");
    }

    #[test]
    fn reg_loss_values() {
        let tape = Tape::new();
        let z1 = tape.leaf(Tensor::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]), true);
        assert!(reg_loss(&z1).unwrap().item() < 1e-9);
        let z2 = tape.leaf(Tensor::from_vec(1, 4, vec![2.0, 0.0, 0.0, 0.0]), true);
        assert!((reg_loss(&z2).unwrap().item() - 1.0).abs() < 1e-9);
        let z0 = tape.leaf(Tensor::zeros(1, 4), true);
        let loss = reg_loss(&z0).unwrap();
        assert!((loss.item() - 1.0).abs() < 1e-5);
        // Gradient at zero is defined (epsilon-guarded norm).
        tape.backward(&loss).unwrap();
        assert!(tape.grad(&z0).is_finite());
    }

    #[test]
    fn variants_have_matched_parameter_counts() {
        let h = small_hierarchy();
        let base = small_config();
        let full = build_variant(h.clone(), &base, Variant::Full, 1).unwrap();
        let global = build_variant(h.clone(), &base, Variant::GlobalOnly, 1).unwrap();
        let local = build_variant(h.clone(), &base, Variant::LocalOnly, 1).unwrap();
        let target = full.param_count() as f64;
        for (name, model) in [("global-only", &global), ("local-only", &local)] {
            let rel = (model.param_count() as f64 - target).abs() / target;
            assert!(rel <= 0.10, "{name} off by {:.1}%", rel * 100.0);
        }
        // Structural asserts.
        assert!(global.local.is_none());
        assert!(global.global.is_some());
        assert!(local.global.is_none());
        assert!(local.local.is_some());
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let h = small_hierarchy();
        let mut model = GeneratorModel::new(h, small_config(), 7).unwrap();
        model.z_init = Some(vec![0.0; 256]);
        model.save(dir.path()).unwrap();
        let loaded = GeneratorModel::load(dir.path()).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.param_count(), model.param_count());
        let z = sample_unit_latent(256, 11);
        let a = model.decode_to_mesh(&z).unwrap();
        let b = loaded.decode_to_mesh(&z).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_template_config_count_is_sane() {
        let counts = vec![2562usize, 642, 162, 42];
        let config = GeneratorConfig::default();
        let count = param_count_for(&counts, &config);
        assert!(count > 1_000_000 && count < 20_000_000, "{count}");
    }
}
