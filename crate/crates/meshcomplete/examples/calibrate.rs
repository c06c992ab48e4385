//! Scratch calibration run: training dynamics, held-out error, and the
//! linear-baseline margin at reduced scale.

use meshcomplete::generator::{
    train, GeneratorConfig, GeneratorModel, PcaModel, TrainConfig, Variant,
};
use meshcomplete::hierarchy::{build_hierarchy, DEFAULT_K_NN};
use meshcomplete::synth::{make_dataset, make_template, Split};
use std::sync::Arc;
use std::time::Instant;

fn mesh_tensor(mesh: &meshcomplete::mesh::TriMesh) -> meshcomplete::autodiff::Tensor {
    meshcomplete::autodiff::Tensor::from_fn(mesh.vertex_count(), 3, |i, j| mesh.vertices[i][j])
}

fn mean_vertex_l2(
    a: &meshcomplete::autodiff::Tensor,
    b: &meshcomplete::autodiff::Tensor,
) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let mut d2 = 0.0;
        for j in 0..3 {
            let d = a.get(i, j) - b.get(i, j);
            d2 += d * d;
        }
        total += d2.sqrt();
    }
    total / a.rows() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let t0 = Instant::now();
    let dataset = make_dataset(n, 7).unwrap();
    println!("dataset n={n}: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let hierarchy = Arc::new(build_hierarchy(&make_template(), &[1280, 320, 80], DEFAULT_K_NN).unwrap());
    println!(
        "hierarchy {:?}: {:.1}s",
        hierarchy.vertex_counts(),
        t0.elapsed().as_secs_f64()
    );

    let mut model =
        GeneratorModel::new(Arc::clone(&hierarchy), GeneratorConfig::default(), 0).unwrap();
    println!("params: {}", model.param_count());

    let train_idx = dataset.split_indices(Split::Train);
    let test_idx = dataset.split_indices(Split::Test);
    let train_meshes: Vec<&meshcomplete::mesh::TriMesh> =
        train_idx.iter().map(|&i| &dataset.meshes[i]).collect();

    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        seed: 0,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train(&mut model, &train_meshes, &cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "train {} epochs x {} samples: {:.1}s ({:.2}s/epoch)",
        epochs,
        train_meshes.len(),
        elapsed,
        elapsed / epochs as f64
    );
    for e in log.epochs.iter().step_by((epochs / 10).max(1)) {
        println!("  epoch {:3}: l_mse {:.5} l_reg {:.5}", e.epoch, e.l_mse, e.l_reg);
    }

    // Held-out reconstruction.
    let mut ae_err = 0.0;
    for &i in &test_idx {
        let x = mesh_tensor(&dataset.meshes[i]);
        let z = model.encode_tensor(&x).unwrap();
        let y = model.decode_to_mesh(&z).unwrap();
        ae_err += mean_vertex_l2(&x, &mesh_tensor(&y));
    }
    ae_err /= test_idx.len() as f64;

    // PCA baseline at rank 256 on the same training data.
    let t0 = Instant::now();
    let train_tensors: Vec<meshcomplete::autodiff::Tensor> = train_idx
        .iter()
        .map(|&i| mesh_tensor(&dataset.meshes[i]))
        .collect();
    let pca = PcaModel::fit(&train_tensors, 256);
    let mut pca_err = 0.0;
    for &i in &test_idx {
        pca_err += pca.mean_vertex_error(&mesh_tensor(&dataset.meshes[i]));
    }
    pca_err /= test_idx.len() as f64;
    println!("pca fit+eval: {:.1}s (rank {})", t0.elapsed().as_secs_f64(), pca.rank());

    println!("held-out mean vertex L2: ae {ae_err:.4} mm, pca {pca_err:.4} mm");
    println!("ae/pca ratio: {:.3}", ae_err / pca_err);

    // Latent norm distribution.
    let mut within = 0;
    for &i in train_idx.iter().take(50) {
        let z = model.encode_tensor(&mesh_tensor(&dataset.meshes[i])).unwrap();
        let norm = z.sum_squares().sqrt();
        if (0.8..=1.2).contains(&norm) {
            within += 1;
        }
    }
    println!("train z-norms within [0.8, 1.2]: {within}/50");

    let _ = Variant::Full;
}
