//! Named model parameters, the Adam optimizer, and checkpoint I/O.
//!
//! Checkpoints are a flat binary container: a JSON header listing array
//! names and shapes, followed by the raw little-endian float64 data in
//! header order.

use super::{AutodiffError, Tape, Tensor, Value};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// One named parameter: shared storage plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub data: Arc<Tensor>,
    pub grad: Tensor,
}

/// An ordered collection of parameters; order defines checkpoint layout and
/// the deterministic traversal used by the optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, data: Tensor) -> ParamId {
        let (rows, cols) = data.shape();
        self.params.push(Param {
            name: name.into(),
            data: Arc::new(data),
            grad: Tensor::zeros(rows, cols),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.data.rows(), p.data.cols());
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            for g in p.grad.as_mut_slice() {
                *g *= factor;
            }
        }
    }

    /// Records every parameter as a shared (zero-copy) leaf on the tape.
    pub fn leaves(&self, tape: &Tape) -> Vec<Value> {
        self.params
            .iter()
            .map(|p| tape.shared_leaf(Arc::clone(&p.data), true))
            .collect()
    }

    /// Adds the tape's gradients for `leaves` into the parameter grads, in
    /// parameter order (deterministic accumulation).
    pub fn accumulate_grads(&mut self, tape: &Tape, leaves: &[Value]) {
        assert_eq!(leaves.len(), self.params.len());
        for (p, leaf) in self.params.iter_mut().zip(leaves) {
            p.grad.add_assign_scaled(&tape.grad(leaf), 1.0);
        }
    }

    /// In-place update of the stored data (clones only if a tape still holds
    /// a reference to the old version).
    pub fn update(&mut self, id: usize, f: impl FnOnce(&mut Tensor)) {
        f(Arc::make_mut(&mut self.params[id].data));
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let header = CheckpointHeader {
            version: 1,
            arrays: self
                .params
                .iter()
                .map(|p| ArrayInfo {
                    name: p.name.clone(),
                    rows: p.data.rows(),
                    cols: p.data.cols(),
                })
                .collect(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let file = std::fs::File::create(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut out = std::io::BufWriter::new(file);
        let write = |out: &mut std::io::BufWriter<std::fs::File>,
                     bytes: &[u8]|
         -> Result<(), AutodiffError> {
            out.write_all(bytes)
                .map_err(|e| AutodiffError::Checkpoint(e.to_string()))
        };
        write(&mut out, CHECKPOINT_MAGIC)?;
        write(&mut out, &(header_json.len() as u32).to_le_bytes())?;
        write(&mut out, &header_json)?;
        for p in &self.params {
            for &x in p.data.as_slice() {
                write(&mut out, &x.to_le_bytes())?;
            }
        }
        out.flush()
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ParamSet, AutodiffError> {
        let file = std::fs::File::open(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut input = std::io::BufReader::new(file);
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 4];
        input
            .read_exact(&mut len)
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let mut header_json = vec![0u8; u32::from_le_bytes(len) as usize];
        input
            .read_exact(&mut header_json)
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_json)
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if header.version != 1 {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let mut set = ParamSet::new();
        for info in header.arrays {
            let mut data = vec![0.0f64; info.rows * info.cols];
            let mut buf = [0u8; 8];
            for slot in &mut data {
                input
                    .read_exact(&mut buf)
                    .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
                *slot = f64::from_le_bytes(buf);
            }
            set.add(info.name, Tensor::from_vec(info.rows, info.cols, data));
        }
        Ok(set)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MCPARM01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    arrays: Vec<ArrayInfo>,
}

#[derive(Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Adam optimizer state (first and second moments, step count).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ParamSet) -> AdamState {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.data.rows(), p.data.cols()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.data.rows(), p.data.cols()))
                .collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over all parameters from their accumulated grads.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as f64;
    let bias1 = 1.0 - ADAM_BETA1.powf(t);
    let bias2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..params.len() {
        let grad = params.params[i].grad.clone();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for ((m, v), &g) in m
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(grad.as_slice())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        }
        let m = &state.m[i];
        let v = &state.v[i];
        params.update(i, |data| {
            for ((x, &m), &v) in data
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_slice())
                .zip(v.as_slice())
            {
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::from_vec(1, 2, vec![1.5, -2.5]));
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &mut state, 0.1);
        assert_eq!(params.get(ParamId(0)).data.as_slice(), &[1.5, -2.5]);
    }

    #[test]
    fn constant_gradient_moves_against_it() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::scalar(0.0));
        let mut state = AdamState::new(&params);
        for _ in 0..50 {
            params.zero_grads();
            params.params[0].grad = Tensor::scalar(2.0);
            adam_step(&mut params, &mut state, 0.01);
        }
        assert!(params.get(ParamId(0)).data.item() < -0.1);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = ||x||^2 from (5, 5); grad = 2x.
        let mut params = ParamSet::new();
        params.add("x", Tensor::from_vec(1, 2, vec![5.0, 5.0]));
        let mut state = AdamState::new(&params);
        for _ in 0..500 {
            params.zero_grads();
            let x = params.get(ParamId(0)).data.clone();
            params.params[0].grad = x.map(|v| 2.0 * v);
            adam_step(&mut params, &mut state, 0.1);
        }
        let x = params.get(ParamId(0)).data.clone();
        let norm = x.sum_squares().sqrt();
        assert!(norm < 1e-2, "||x|| = {norm}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut params = ParamSet::new();
        params.add("enc.w1", Tensor::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.123 - 1.0));
        params.add("enc.b1", Tensor::from_vec(1, 4, vec![0.5, -0.5, 1e-30, 3e20]));
        params.save(&path).unwrap();
        let loaded = ParamSet::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in params.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data.as_slice(), b.data.as_slice());
        }
    }

    #[test]
    fn leaves_share_storage_until_update() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::scalar(1.0));
        let tape = Tape::new();
        let leaves = params.leaves(&tape);
        assert_eq!(leaves[0].item(), 1.0);
        // The update must not corrupt the already-recorded leaf.
        params.update(0, |t| t.as_mut_slice()[0] = 2.0);
        assert_eq!(leaves[0].item(), 1.0);
        assert_eq!(params.get(ParamId(0)).data.item(), 2.0);
    }
}
