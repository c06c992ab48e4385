//! Timing breakdown of one training sample pass.

use meshcomplete::autodiff::{Tape, Tensor};
use meshcomplete::generator::{reg_loss, GeneratorConfig, GeneratorModel};
use meshcomplete::hierarchy::{build_hierarchy, DEFAULT_K_NN};
use meshcomplete::synth::make_template;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let template = make_template();
    let hierarchy =
        Arc::new(build_hierarchy(&template, &[1280, 320, 80], DEFAULT_K_NN).unwrap());
    let model = GeneratorModel::new(hierarchy, GeneratorConfig::default(), 0).unwrap();
    let x = Tensor::from_fn(template.vertex_count(), 3, |i, j| template.vertices[i][j]);

    // Raw matmul reference: (1 x 20496) * (20496 x 128).
    let a = Tensor::from_fn(1, 20496, |_, j| (j as f64).sin());
    let b = Tensor::from_fn(20496, 128, |i, j| ((i + j) as f64).cos() * 0.01);
    let t0 = Instant::now();
    let reps = 50;
    for _ in 0..reps {
        let c = a.matmul(&b).unwrap();
        std::hint::black_box(&c);
    }
    let per = t0.elapsed().as_secs_f64() / reps as f64;
    println!(
        "matmul 1x20496x128: {:.3} ms ({:.2} GFLOP/s)",
        per * 1e3,
        2.0 * 20496.0 * 128.0 / per / 1e9
    );

    let t0 = Instant::now();
    for _ in 0..reps {
        let c = b.transpose_matmul(&b).unwrap();
        std::hint::black_box(&c);
        break;
    }
    let _ = t0;

    // Forward only.
    let reps = 10;
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let leaves = model.params.leaves_with(&tape, false);
        let xv = tape.leaf(x.clone(), false);
        let z = model.encode(&leaves, &xv).unwrap();
        let y = model.decode(&leaves, &z).unwrap();
        std::hint::black_box(y.item_count());
    }
    println!("forward (no grad): {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Forward with grads recorded.
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let leaves = model.params.leaves(&tape);
        let xv = tape.leaf(x.clone(), false);
        let z = model.encode(&leaves, &xv).unwrap();
        let y = model.decode(&leaves, &z).unwrap();
        std::hint::black_box(y.item_count());
    }
    println!("forward (grad): {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Full forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let leaves = model.params.leaves(&tape);
        let xv = tape.leaf(x.clone(), false);
        let z = model.encode(&leaves, &xv).unwrap();
        let y = model.decode(&leaves, &z).unwrap();
        let loss = y.mse(&xv).unwrap().add(&reg_loss(&z).unwrap().scale(1e-3)).unwrap();
        tape.backward(&loss).unwrap();
        std::hint::black_box(tape.grad(&leaves[0]).as_slice()[0]);
    }
    println!("forward+backward: {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // Encode only / decode only with grads.
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let leaves = model.params.leaves(&tape);
        let xv = tape.leaf(x.clone(), false);
        let z = model.encode(&leaves, &xv).unwrap();
        std::hint::black_box(z.item_count());
    }
    println!("encode (grad): {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

trait ItemCount {
    fn item_count(&self) -> usize;
}
impl ItemCount for meshcomplete::autodiff::Value {
    fn item_count(&self) -> usize {
        self.rows() * self.cols()
    }
}
