//! Shape fitting: joint gradient optimization of the latent code and a
//! rigid transform so the generated surface explains a partial input.
//!
//! Per step the closest-face assignments (and the rendered depth of the
//! candidate, when guidance is on) are recomputed; the guidance image of
//! the input is computed once per fit. Restarts perturb the initial latent;
//! the best iterate by total loss wins.

mod init;
mod loss;
mod rigid;

pub use init::init_transform;
pub use loss::{fit_loss, fit_loss_value, freeze_assignment, FrozenAssignment};
pub use rigid::rigid_transform_value;

use crate::autodiff::{adam_step, AdamState, AutodiffError, ParamSet, Tape, Tensor, Value};
use crate::generator::{reg_loss, GeneratorError, GeneratorModel};
use crate::guidance::{
    inpaint_mask, render_depth, render_depth_backward, Camera, DepthImage, GuidanceError,
    GuidanceProvider,
};
use crate::mesh::{MeshError, RigidTransform, TriMesh};
use nalgebra::Vector3;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("input has no vertices")]
    EmptyInput,
    #[error("trim fraction {0} outside [0, 1)")]
    BadTrimFraction(f64),
    #[error("trimming removed every vertex ({trimmed} of {total})")]
    TrimmedEverything { trimmed: usize, total: usize },
    #[error("optimization diverged at step {step} (restart {restart})")]
    Diverged { step: usize, restart: usize },
    #[error("every restart diverged")]
    AllRestartsDiverged,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

/// How the latent is initialized.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ZInitMode {
    /// The model's stored mean-encoded latent, else a fixed unit vector.
    #[default]
    Auto,
    Vector(Vec<f64>),
}

/// How the rigid transform is initialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TransformInitMode {
    /// Principal-axes alignment against the initial decoded shape.
    #[default]
    Auto,
    Identity,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub steps: usize,
    /// Initial learning rate; cosine-decays to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    pub trim_fraction: f64,
    /// Weight of the hypersphere regularizer.
    pub lambda_reg: f64,
    /// Weight of the depth-guidance term (used when guidance is supplied).
    pub lambda_guidance: f64,
    pub z_init: ZInitMode,
    pub transform_init: TransformInitMode,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 400,
            lr: 0.05,
            lr_final: 0.005,
            trim_fraction: 0.05,
            lambda_reg: 1e-2,
            lambda_guidance: 1e-3,
            z_init: ZInitMode::Auto,
            transform_init: TransformInitMode::Auto,
            restarts: 3,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Guidance wiring for one fit.
pub struct GuidanceSetup<'a> {
    pub provider: &'a dyn GuidanceProvider,
    pub camera: &'a Camera,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepLosses {
    pub step: usize,
    pub l_fit: f64,
    pub l_inp: f64,
    pub l_reg: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub z: Vec<f64>,
    pub transform: RigidTransform,
    /// `transform` applied to `decode(z)`, on template topology.
    pub fitted: TriMesh,
    /// Per-step losses of the chosen restart.
    pub trajectory: Vec<StepLosses>,
    pub restart: usize,
    pub best: StepLosses,
}

impl FitResult {
    pub fn write_log_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("step,l_fit,l_inp,l_reg,total\n");
        for s in &self.trajectory {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.step, s.l_fit, s.l_inp, s.l_reg, s.total
            ));
        }
        std::fs::write(path, out)
    }

    pub fn write_result_json(&self, path: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            z: &'a [f64],
            rotation: [f64; 3],
            translation: [f64; 3],
            restart: usize,
            best: &'a StepLosses,
        }
        let out = Out {
            z: &self.z,
            rotation: self.transform.rotation.into(),
            translation: self.transform.translation.into(),
            restart: self.restart,
            best: &self.best,
        };
        std::fs::write(path, serde_json::to_string_pretty(&out)?)
    }
}

/// Identity registration view of a fit: the fitted mesh shares the template
/// topology, so the correspondence map is the identity permutation.
pub fn registration_output(result: &FitResult) -> (TriMesh, Vec<u32>) {
    let correspondence = (0..result.fitted.vertex_count() as u32).collect();
    (result.fitted.clone(), correspondence)
}

struct BestIterate {
    z: Tensor,
    w: Tensor,
    t: Tensor,
    losses: StepLosses,
}

/// Depth-guidance loss as a tape value: renders the candidate vertices,
/// compares against the fixed guide image, and backpropagates through the
/// rasterizer with frozen pixel assignments.
fn guidance_loss_value(
    vertices: &Value,
    template: &TriMesh,
    camera: &Camera,
    guide: &DepthImage,
) -> Result<Value, FitError> {
    let values = vertices.value();
    let candidate = TriMesh {
        vertices: (0..values.rows())
            .map(|i| nalgebra::Point3::new(values.get(i, 0), values.get(i, 1), values.get(i, 2)))
            .collect(),
        faces: template.faces.clone(),
        labels: None,
    };
    let render = render_depth(&candidate, camera);
    let mse = crate::guidance::inp_loss(&render.image, guide)?;
    let camera = camera.clone();
    let pixel_grads = mse.grad_fit;
    let value = Value::custom(
        &[vertices],
        Tensor::scalar(mse.value),
        Box::new(move |upstream, _inputs, grads| {
            let g = upstream.item();
            if g == 0.0 {
                return;
            }
            let upstream_pixels: Vec<f64> = pixel_grads.iter().map(|x| x * g).collect();
            let vertex_grads =
                render_depth_backward(&candidate, &camera, &render, &upstream_pixels);
            for (i, vg) in vertex_grads.iter().enumerate() {
                for j in 0..3 {
                    grads[0].set(i, j, grads[0].get(i, j) + vg[j]);
                }
            }
        }),
    )?;
    Ok(value)
}

/// Fits the generator to a partial input (mesh, point cloud, or key
/// points). Deterministic under the config seed.
pub fn fit(
    model: &GeneratorModel,
    defect: &TriMesh,
    cfg: &FitConfig,
    guidance: Option<GuidanceSetup>,
) -> Result<FitResult, FitError> {
    if defect.vertices.is_empty() {
        return Err(FitError::EmptyInput);
    }
    let latent = model.latent_dim();

    // Base latent: configured vector, the model's encoded mean, or e0.
    let z_base: Vec<f64> = match &cfg.z_init {
        ZInitMode::Vector(v) => v.clone(),
        ZInitMode::Auto => model.z_init.clone().unwrap_or_else(|| {
            let mut e0 = vec![0.0; latent];
            e0[0] = 1.0;
            e0
        }),
    };

    // Guidance image: computed once per fit from the defect observation and
    // the initialized candidate's coverage.
    let mut guide: Option<(DepthImage, &Camera)> = None;
    if let Some(setup) = &guidance {
        let observed = render_depth(defect, setup.camera).image;
        let init_mesh = model.decode_to_mesh(&Tensor::from_vec(1, latent, z_base.clone()))?;
        let init_estimate = match cfg.transform_init {
            TransformInitMode::Auto => init_transform(defect, &init_mesh),
            TransformInitMode::Identity => RigidTransform::identity(),
        };
        let reference = render_depth(&init_mesh.transformed(&init_estimate), setup.camera);
        let mask = inpaint_mask(&observed, &reference.image);
        let guide_image = setup.provider.inpaint(&observed, &mask)?;
        guide = Some((guide_image, setup.camera));
    }

    let mut overall_best: Option<(usize, BestIterate, Vec<StepLosses>)> = None;
    let mut any_diverged = false;

    for restart in 0..cfg.restarts.max(1) {
        // Restart latent: perturbed and renormalized.
        let mut z0 = z_base.clone();
        if restart > 0 {
            let mut rng = crate::config::substream(cfg.seed, &format!("restart{restart}"));
            for v in z0.iter_mut() {
                *v += 0.3 * gaussian(&mut rng);
            }
        }
        let norm = z0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        for v in z0.iter_mut() {
            *v /= norm;
        }
        let z0 = Tensor::from_vec(1, latent, z0);

        let initial_mesh = model.decode_to_mesh(&z0)?;
        let t0 = match cfg.transform_init {
            TransformInitMode::Auto => init_transform(defect, &initial_mesh),
            TransformInitMode::Identity => RigidTransform::identity(),
        };

        match fit_one_restart(model, defect, cfg, &guide, z0, t0)? {
            Some((best, trajectory)) => {
                let better = match &overall_best {
                    None => true,
                    Some((_, current, _)) => best.losses.total < current.losses.total,
                };
                if better {
                    overall_best = Some((restart, best, trajectory));
                }
            }
            None => any_diverged = true,
        }
    }

    let (restart, best, trajectory) = match overall_best {
        Some(found) => found,
        None => {
            debug_assert!(any_diverged);
            return Err(FitError::AllRestartsDiverged);
        }
    };

    // Materialize the fitted mesh at the best iterate.
    let decoded = model.decode_to_mesh(&best.z)?;
    let transform = RigidTransform::new(
        Vector3::new(best.w.get(0, 0), best.w.get(0, 1), best.w.get(0, 2)),
        Vector3::new(best.t.get(0, 0), best.t.get(0, 1), best.t.get(0, 2)),
    );
    let fitted = decoded.transformed(&transform);
    Ok(FitResult {
        z: best.z.as_slice().to_vec(),
        transform,
        fitted,
        trajectory,
        restart,
        best: best.losses,
    })
}

fn fit_one_restart(
    model: &GeneratorModel,
    defect: &TriMesh,
    cfg: &FitConfig,
    guide: &Option<(DepthImage, &Camera)>,
    z0: Tensor,
    t0: RigidTransform,
) -> Result<Option<(BestIterate, Vec<StepLosses>)>, FitError> {
    let mut fit_params = ParamSet::new();
    let z_id = fit_params.add("fit.z", z0);
    let w_id = fit_params.add(
        "fit.w",
        Tensor::from_vec(1, 3, t0.rotation.iter().copied().collect()),
    );
    let t_id = fit_params.add(
        "fit.t",
        Tensor::from_vec(1, 3, t0.translation.iter().copied().collect()),
    );
    let mut adam = AdamState::new(&fit_params);
    let mut best: Option<BestIterate> = None;
    let mut trajectory = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let tape = Tape::new();
        let model_leaves = model.params.leaves_with(&tape, false);
        let fit_leaves = fit_params.leaves(&tape);
        let z = &fit_leaves[z_id.0];
        let w = &fit_leaves[w_id.0];
        let t = &fit_leaves[t_id.0];

        let decoded = model.decode(&model_leaves, z)?;
        let candidate = rigid_transform_value(&decoded, w, t)?;
        let candidate_mesh = model.mesh_from_vertices(&candidate.value());

        let assignment = freeze_assignment(&defect.vertices, &candidate_mesh, cfg.trim_fraction)?;
        let l_fit = fit_loss_value(&assignment, &candidate)?;
        let l_reg = reg_loss(z)?;
        let mut total = l_fit.add(&l_reg.scale(cfg.lambda_reg))?;
        let mut inp_value = 0.0;
        if let Some((guide_image, camera)) = guide {
            let l_inp = guidance_loss_value(&candidate, model.template(), camera, guide_image)?;
            inp_value = l_inp.item();
            total = total.add(&l_inp.scale(cfg.lambda_guidance))?;
        }

        let losses = StepLosses {
            step,
            l_fit: l_fit.item(),
            l_inp: inp_value,
            l_reg: l_reg.item(),
            total: total.item(),
        };
        if !losses.total.is_finite() {
            // Abort this restart; the caller may have others.
            return Ok(None);
        }
        trajectory.push(losses);
        let better = match &best {
            None => true,
            Some(b) => losses.total < b.losses.total,
        };
        if better {
            best = Some(BestIterate {
                z: (*z.value()).clone(),
                w: (*w.value()).clone(),
                t: (*t.value()).clone(),
                losses,
            });
        }

        tape.backward(&total)?;
        fit_params.zero_grads();
        fit_params.accumulate_grads(&tape, &fit_leaves);
        adam_step(&mut fit_params, &mut adam, cfg.lr_at(step));

        // Keep the rotation magnitude in [0, pi].
        let wt = fit_params.get(w_id).data.clone();
        let vec = Vector3::new(wt.get(0, 0), wt.get(0, 1), wt.get(0, 2));
        let shortened = RigidTransform::new(vec, Vector3::zeros()).shortened();
        if shortened.rotation != vec {
            fit_params.update(w_id.0, |t| {
                for (slot, v) in t.as_mut_slice().iter_mut().zip(shortened.rotation.iter()) {
                    *slot = *v;
                }
            });
        }
    }

    Ok(best.map(|b| (b, trajectory)))
}

fn gaussian(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
