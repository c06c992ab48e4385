//! Autoencoder training: Adam on `L_MSE + lambda * L_reg` with a halving
//! learning-rate schedule and deterministic batch order under a fixed seed.

use super::{reg_loss, GeneratorError, GeneratorModel};
use crate::autodiff::{adam_step, AdamState, Precision, Tape, Tensor};
use crate::mesh::TriMesh;
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// The learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    /// Weight of the hypersphere regularizer.
    pub lambda_reg: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            initial_lr: 0.001,
            lr_halving_period: 50,
            lambda_reg: 1e-3,
            precision: Precision::F64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub l_mse: f64,
    pub l_reg: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("epoch,lr,l_mse,l_reg\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.lr, e.l_mse, e.l_reg));
        }
        std::fs::write(path, out)
    }

    pub fn first(&self) -> Option<&EpochStats> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

pub fn mesh_tensor(mesh: &TriMesh) -> Tensor {
    Tensor::from_fn(mesh.vertex_count(), 3, |i, j| mesh.vertices[i][j])
}

/// Trains the model in place. Deterministic given the config seed.
pub fn train(
    model: &mut GeneratorModel,
    dataset: &[&TriMesh],
    cfg: &TrainConfig,
) -> Result<TrainLog, GeneratorError> {
    if dataset.is_empty() {
        return Err(GeneratorError::EmptyDataset);
    }
    let template = model.template();
    for (index, mesh) in dataset.iter().enumerate() {
        if mesh.vertex_count() != template.vertex_count() || mesh.faces != template.faces {
            return Err(GeneratorError::TopologyMismatch { index });
        }
    }
    let samples: Vec<Tensor> = dataset.iter().map(|m| mesh_tensor(m)).collect();
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = crate::config::substream(cfg.seed, "train.shuffle");
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_mse = 0.0;
        let mut epoch_reg = 0.0;

        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grads();
            for &sample in batch {
                let tape = Tape::with_precision(cfg.precision);
                let leaves = model.params.leaves(&tape);
                let x = tape.leaf(samples[sample].clone(), false);
                let z = model.encode(&leaves, &x)?;
                let y = model.decode(&leaves, &z)?;
                let l_mse = y.mse(&x)?;
                let l_reg = reg_loss(&z)?;
                let loss = l_mse.add(&l_reg.scale(cfg.lambda_reg))?;
                let (mse_val, reg_val) = (l_mse.item(), l_reg.item());
                if !mse_val.is_finite() || !reg_val.is_finite() {
                    return Err(GeneratorError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                epoch_mse += mse_val;
                epoch_reg += reg_val;
                tape.backward(&loss)?;
                model.params.accumulate_grads(&tape, &leaves);
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            adam_step(&mut model.params, &mut state, lr);
        }

        log.epochs.push(EpochStats {
            epoch,
            lr,
            l_mse: epoch_mse / samples.len() as f64,
            l_reg: epoch_reg / samples.len() as f64,
        });
    }

    // Fitting initializer: normalized mean of the first encoded samples.
    let take = samples.len().min(16);
    let mut mean = vec![0.0f64; model.config.latent];
    for sample in samples.iter().take(take) {
        let z = model.encode_tensor(sample)?;
        for (m, &v) in mean.iter_mut().zip(z.as_slice()) {
            *m += v;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-9 {
        for m in &mut mean {
            *m /= norm;
        }
        model.z_init = Some(mean);
    }

    Ok(log)
}
