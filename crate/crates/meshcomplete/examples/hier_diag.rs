use meshcomplete::hierarchy::{apply_to_positions, build_hierarchy};
use meshcomplete::synth::make_template;

fn main() {
    let template = make_template();
    println!("mean edge: {:.4}", template.mean_edge_length());
    for k in [3usize, 4, 6, 8] {
        let h = build_hierarchy(&template, &[1280], k).unwrap();
        let fine = &h.levels[0].mesh;
        let coarse_pos = apply_to_positions(&h.downs[0], &fine.vertices);
        let rebuilt = apply_to_positions(&h.ups[0], &coarse_pos);
        let normals = fine.vertex_normals();
        let mut mean = 0.0;
        let mut mean_normal = 0.0;
        let mut maxe: f64 = 0.0;
        for ((a, b), n) in rebuilt.iter().zip(&fine.vertices).zip(&normals.normals) {
            let d = a - b;
            mean += d.norm();
            mean_normal += d.dot(n).abs();
            maxe = maxe.max(d.norm());
        }
        let nv = fine.vertex_count() as f64;
        println!(
            "k={k}: mean {:.4} (normal {:.4}) max {:.4}",
            mean / nv,
            mean_normal / nv,
            maxe
        );
    }
    // finer ratio
    for k in [3usize] {
        let h = build_hierarchy(&template, &[2560], k).unwrap();
        let fine = &h.levels[0].mesh;
        let coarse_pos = apply_to_positions(&h.downs[0], &fine.vertices);
        let rebuilt = apply_to_positions(&h.ups[0], &coarse_pos);
        let mean: f64 = rebuilt
            .iter()
            .zip(&fine.vertices)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / fine.vertex_count() as f64;
        println!("targets [2560], k={k}: mean {:.4}", mean);
    }
}
