//! Command-line entry point: dataset synthesis, hierarchy construction,
//! training, fitting, completion, evaluation, ablations, and benchmark
//! sweeps.
//!
//! Settings resolve as defaults < config file < flags, and every run writes
//! the resolved configuration next to its outputs so results can be
//! reproduced from the snapshot alone. Exit codes: 0 ok, 1 usage, 2 data
//! error, 3 numeric failure.

use clap::{Args, Parser, Subcommand};
use meshcomplete::autodiff::Precision;
use meshcomplete::bench::{BenchConfig, CompleteOptions, GuidanceKind};
use meshcomplete::config::KvConfig;
use meshcomplete::fitting::FitConfig;
use meshcomplete::generator::{
    build_variant, train, GeneratorConfig, GeneratorModel, TrainConfig, Variant,
};
use meshcomplete::guidance::Camera;
use meshcomplete::hierarchy::{build_hierarchy, DEFAULT_K_NN};
use meshcomplete::mesh::{load_mesh, save_mesh};
use meshcomplete::postprocess::PostprocessConfig;
use meshcomplete::synth::{load_dataset, make_dataset, make_template, write_dataset, Split};
use meshcomplete::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "meshcomplete",
    version,
    about = "Completion of partial triangle-mesh scans"
)]
struct Cli {
    /// Key-value config file; command-line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic identity dataset.
    MakeDataset(MakeDatasetArgs),
    /// Mesh hierarchy operations.
    Hierarchy {
        #[command(subcommand)]
        action: HierarchyAction,
    },
    /// Train the shape generator.
    Train(TrainArgs),
    /// Fit the generator to a partial input (no post-processing).
    Fit(FitArgs),
    /// Fit plus post-processing.
    Complete(FitArgs),
    /// Evaluate a benchmark directory.
    Evaluate(EvaluateArgs),
    /// Train parameter-matched architecture variants and compare.
    Ablate(AblateArgs),
    /// Run the defect-grid benchmark.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum HierarchyAction {
    /// Build and serialize the sampling hierarchy.
    Build(HierarchyArgs),
}

#[derive(Args)]
struct MakeDatasetArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HierarchyArgs {
    /// Template mesh; the built-in template when omitted.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Comma-separated face targets, strictly decreasing.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from make-dataset.
    #[arg(long)]
    data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// f64 (default) or f32 storage precision.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    knn: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Partial input: mesh, point cloud, or key points (OBJ/PLY).
    #[arg(long)]
    input: PathBuf,
    /// Trained model directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    trim: Option<f64>,
    /// off | oracle | meanface | nn
    #[arg(long)]
    guidance: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground truth (required for oracle guidance; enables metrics).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Dataset directory (required for meanface/nn guidance).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dump observed and final depth images under this directory.
    #[arg(long)]
    dump_depth: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Benchmark directory containing cases/.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    chamfer_target: Option<usize>,
    #[arg(long)]
    margin_samples: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated: full,global-only,local-only
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    targets: Option<String>,
    #[arg(long)]
    knn: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated defect radii in mm.
    #[arg(long)]
    radii: Option<String>,
    #[arg(long)]
    defect_seeds: Option<usize>,
    #[arg(long)]
    identities: Option<usize>,
    /// Include the keypoints-only case per identity.
    #[arg(long)]
    keypoints: bool,
    #[arg(long)]
    guidance: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Allowed config-file keys, for typo safety.
const CONFIG_SCHEMA: &[(&str, &[&str])] = &[
    ("dataset", &["n", "seed"]),
    ("hierarchy", &["targets", "knn"]),
    (
        "train",
        &[
            "epochs",
            "batch",
            "lr",
            "lr_halving",
            "lambda",
            "precision",
            "seed",
            "variant",
        ],
    ),
    (
        "fit",
        &[
            "steps",
            "lr",
            "lr_final",
            "trim",
            "lambda_reg",
            "lambda_guidance",
            "restarts",
            "seed",
            "guidance",
        ],
    ),
    (
        "postprocess",
        &["threshold", "rings", "knn", "max_projection"],
    ),
    ("metrics", &["chamfer_target", "margin_samples"]),
    ("guidance", &["resolution", "extent"]),
    (
        "bench",
        &[
            "radii",
            "defect_seeds",
            "identities",
            "keypoints",
            "workers",
            "seed",
        ],
    ),
];

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version go to stdout and exit 0; usage errors exit 1.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let file_config = match &cli.config {
        Some(path) => match KvConfig::load(path).and_then(|c| {
            c.validate_known(CONFIG_SCHEMA)?;
            Ok(c)
        }) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => KvConfig::new(),
    };
    match run(cli, file_config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli, file: KvConfig) -> Result<()> {
    match cli.command {
        Command::MakeDataset(args) => cmd_make_dataset(args, file),
        Command::Hierarchy {
            action: HierarchyAction::Build(args),
        } => cmd_hierarchy_build(args, file),
        Command::Train(args) => cmd_train(args, file),
        Command::Fit(args) => cmd_fit(args, file, false),
        Command::Complete(args) => cmd_fit(args, file, true),
        Command::Evaluate(args) => cmd_evaluate(args, file),
        Command::Ablate(args) => cmd_ablate(args, file),
        Command::Bench(args) => cmd_bench(args, file),
    }
}

fn pick<T: std::str::FromStr + ToString>(
    flag: Option<T>,
    file: &KvConfig,
    section: &str,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get_parsed::<T>(section, key)? {
        Some(v) => Ok(v),
        None => Ok(default),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::Data(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

fn write_snapshot(resolved: &KvConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved.cfg"), resolved.to_text())?;
    Ok(())
}

fn parse_targets(text: Option<String>, file: &KvConfig) -> Result<Vec<usize>> {
    let raw = match text {
        Some(t) => t,
        None => file
            .get("hierarchy", "targets")
            .unwrap_or("1280,320,80")
            .to_string(),
    };
    parse_list(&raw, "face target")
}

fn cmd_make_dataset(args: MakeDatasetArgs, file: KvConfig) -> Result<()> {
    let n = pick(args.n, &file, "dataset", "n", 512)?;
    let seed = pick(args.seed, &file, "dataset", "seed", 7)?;
    let dataset = make_dataset(n, seed)?;
    write_dataset(&dataset, &args.out)?;
    let mut resolved = KvConfig::new();
    resolved.set("dataset", "n", &n.to_string());
    resolved.set("dataset", "seed", &seed.to_string());
    write_snapshot(&resolved, &args.out)?;
    let train_count = dataset.split_indices(Split::Train).len();
    let test_count = dataset.split_indices(Split::Test).len();
    println!(
        "wrote {n} identities ({train_count} train / {test_count} test) to {}",
        args.out.display()
    );
    Ok(())
}

fn cmd_hierarchy_build(args: HierarchyArgs, file: KvConfig) -> Result<()> {
    let template = match &args.template {
        Some(path) => load_mesh(path)?.mesh,
        None => make_template(),
    };
    let targets = parse_targets(args.targets.clone(), &file)?;
    let knn = pick(args.knn, &file, "hierarchy", "knn", DEFAULT_K_NN)?;
    let hierarchy = build_hierarchy(&template, &targets, knn)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    hierarchy.save(&args.out)?;
    println!(
        "hierarchy with levels {:?} written to {}",
        hierarchy.vertex_counts(),
        args.out.display()
    );
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, file: &KvConfig) -> Result<(TrainConfig, Variant)> {
    let precision = match pick(
        args.precision.clone(),
        file,
        "train",
        "precision",
        "f64".to_string(),
    )?
    .as_str()
    {
        "f64" => Precision::F64,
        "f32" => Precision::F32,
        other => return Err(Error::Data(format!("unknown precision {other:?}"))),
    };
    let variant: Variant = pick(
        args.variant.clone(),
        file,
        "train",
        "variant",
        "full".to_string(),
    )?
    .parse()
    .map_err(Error::Data)?;
    Ok((
        TrainConfig {
            epochs: pick(args.epochs, file, "train", "epochs", 200)?,
            batch_size: pick(args.batch, file, "train", "batch", 32)?,
            initial_lr: pick(args.lr, file, "train", "lr", 0.001)?,
            lr_halving_period: pick(None, file, "train", "lr_halving", 50)?,
            lambda_reg: pick(args.lambda, file, "train", "lambda", 1e-3)?,
            precision,
            seed: pick(args.seed, file, "train", "seed", 0)?,
        },
        variant,
    ))
}

fn train_snapshot(cfg: &TrainConfig, variant: Variant, targets: &[usize], knn: usize) -> KvConfig {
    let mut resolved = KvConfig::new();
    resolved.set("train", "epochs", &cfg.epochs.to_string());
    resolved.set("train", "batch", &cfg.batch_size.to_string());
    resolved.set("train", "lr", &cfg.initial_lr.to_string());
    resolved.set("train", "lr_halving", &cfg.lr_halving_period.to_string());
    resolved.set("train", "lambda", &cfg.lambda_reg.to_string());
    resolved.set(
        "train",
        "precision",
        if cfg.precision == Precision::F32 {
            "f32"
        } else {
            "f64"
        },
    );
    resolved.set("train", "seed", &cfg.seed.to_string());
    resolved.set("train", "variant", &variant.to_string());
    resolved.set(
        "hierarchy",
        "targets",
        &targets
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    resolved.set("hierarchy", "knn", &knn.to_string());
    resolved
}

fn cmd_train(args: TrainArgs, file: KvConfig) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let (cfg, variant) = resolve_train_config(&args, &file)?;
    let targets = parse_targets(args.targets.clone(), &file)?;
    let knn = pick(args.knn, &file, "hierarchy", "knn", DEFAULT_K_NN)?;

    let hierarchy = Arc::new(build_hierarchy(&make_template(), &targets, knn)?);
    let mut model = build_variant(hierarchy, &GeneratorConfig::default(), variant, cfg.seed)?;
    println!(
        "training {variant} model: {} parameters, {} epochs",
        model.param_count(),
        cfg.epochs
    );
    let train_meshes: Vec<&meshcomplete::mesh::TriMesh> = dataset
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| &dataset.meshes[i])
        .collect();
    let log = train(&mut model, &train_meshes, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    model.save(&args.out)?;
    log.write_csv(&args.out.join("train_log.csv"))?;
    write_snapshot(&train_snapshot(&cfg, variant, &targets, knn), &args.out)?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "l_mse {:.6} -> {:.6}, l_reg {:.6} -> {:.6}",
            first.l_mse, last.l_mse, first.l_reg, last.l_reg
        );
    }
    Ok(())
}

fn resolve_fit_options(args: &FitArgs, file: &KvConfig) -> Result<CompleteOptions> {
    let guidance: GuidanceKind = pick(
        args.guidance.clone(),
        file,
        "fit",
        "guidance",
        "off".to_string(),
    )?
    .parse()
    .map_err(Error::Data)?;
    let fit = FitConfig {
        steps: pick(args.steps, file, "fit", "steps", 400)?,
        lr: pick(None, file, "fit", "lr", 0.05)?,
        lr_final: pick(None, file, "fit", "lr_final", 0.005)?,
        trim_fraction: pick(args.trim, file, "fit", "trim", 0.05)?,
        lambda_reg: pick(None, file, "fit", "lambda_reg", 1e-2)?,
        lambda_guidance: pick(None, file, "fit", "lambda_guidance", 1e-3)?,
        restarts: pick(args.restarts, file, "fit", "restarts", 3)?,
        seed: pick(args.seed, file, "fit", "seed", 0)?,
        ..FitConfig::default()
    };
    let post = PostprocessConfig {
        threshold: pick(None, file, "postprocess", "threshold", 1.0)?,
        boundary_rings: pick(None, file, "postprocess", "rings", 4)?,
        knn: pick(None, file, "postprocess", "knn", 8)?,
        max_projection: pick(None, file, "postprocess", "max_projection", 5.0)?,
        ..PostprocessConfig::default()
    };
    let camera = Camera::frontal(
        pick(None, file, "guidance", "resolution", 128)?,
        pick(None, file, "guidance", "extent", 180.0)?,
    );
    Ok(CompleteOptions {
        fit,
        post,
        guidance,
        camera,
    })
}

fn fit_snapshot(options: &CompleteOptions) -> KvConfig {
    let mut resolved = KvConfig::new();
    resolved.set("fit", "steps", &options.fit.steps.to_string());
    resolved.set("fit", "lr", &options.fit.lr.to_string());
    resolved.set("fit", "lr_final", &options.fit.lr_final.to_string());
    resolved.set("fit", "trim", &options.fit.trim_fraction.to_string());
    resolved.set("fit", "lambda_reg", &options.fit.lambda_reg.to_string());
    resolved.set(
        "fit",
        "lambda_guidance",
        &options.fit.lambda_guidance.to_string(),
    );
    resolved.set("fit", "restarts", &options.fit.restarts.to_string());
    resolved.set("fit", "seed", &options.fit.seed.to_string());
    resolved.set("fit", "guidance", &options.guidance.to_string());
    resolved.set(
        "postprocess",
        "threshold",
        &options.post.threshold.to_string(),
    );
    resolved.set(
        "postprocess",
        "rings",
        &options.post.boundary_rings.to_string(),
    );
    resolved.set("postprocess", "knn", &options.post.knn.to_string());
    resolved.set(
        "postprocess",
        "max_projection",
        &options.post.max_projection.to_string(),
    );
    resolved.set("guidance", "resolution", &options.camera.width.to_string());
    resolved.set("guidance", "extent", &options.camera.extent.to_string());
    resolved
}

fn cmd_fit(args: FitArgs, file: KvConfig, with_postprocess: bool) -> Result<()> {
    let defect = load_mesh(&args.input)?;
    if defect.dropped_degenerate > 0 {
        println!(
            "dropped {} degenerate faces from input",
            defect.dropped_degenerate
        );
    }
    let model = GeneratorModel::load(&args.model)?;
    let options = resolve_fit_options(&args, &file)?;
    let gt = args.gt.as_ref().map(load_mesh).transpose()?.map(|r| r.mesh);
    let dataset = args.data.as_ref().map(|d| load_dataset(d)).transpose()?;

    std::fs::create_dir_all(&args.out)?;
    write_snapshot(&fit_snapshot(&options), &args.out)?;

    let provider = meshcomplete::bench::build_provider(
        options.guidance,
        gt.as_ref(),
        dataset.as_ref(),
        &options.camera,
    )?;
    let setup = provider
        .as_ref()
        .map(|p| meshcomplete::fitting::GuidanceSetup {
            provider: p.as_ref(),
            camera: &options.camera,
        });
    if let Some(dir) = &args.dump_depth {
        std::fs::create_dir_all(dir)?;
        let observed = meshcomplete::guidance::render_depth(&defect.mesh, &options.camera);
        meshcomplete::guidance::write_debug_dump(&observed.image, &dir.join("observed"))?;
    }

    let fit_result = meshcomplete::fitting::fit(&model, &defect.mesh, &options.fit, setup)?;
    fit_result.write_log_csv(&args.out.join("fit_log.csv"))?;
    fit_result.write_result_json(&args.out.join("fit_result.json"))?;

    if with_postprocess {
        let post = meshcomplete::postprocess::postprocess_pipeline(
            &fit_result.fitted,
            &defect.mesh,
            &options.post,
        )?;
        save_mesh(&post.mesh, args.out.join("out.ply"))?;
        meshcomplete::bench::write_stages_csv(&post, &args.out.join("stages.csv"))?;
        std::fs::write(
            args.out.join("labels.json"),
            serde_json::to_string(&post.labels.tags()).map_err(|e| Error::Data(e.to_string()))?,
        )?;
        let mut report = serde_json::json!({
            "matched_md_pre": post.stages.first().map(|s| s.matched_md),
            "matched_md_post": post.stages.last().map(|s| s.matched_md),
            "refine_reverted": post.refine_reverted,
        });
        if let Some(gt) = &gt {
            let chamfer_target = pick(None, &file, "metrics", "chamfer_target", 50_000)?;
            report["cd_mm"] = serde_json::json!(meshcomplete::metrics::chamfer_unidirectional(
                &post.mesh,
                gt,
                chamfer_target
            )?);
            report["md_mm"] =
                serde_json::json!(meshcomplete::metrics::mean_point_to_surface(&post.mesh, gt)?);
        }
        std::fs::write(
            args.out.join("metrics.json"),
            serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?,
        )?;
        println!(
            "completion written to {} (matched md {:.4} -> {:.4} mm)",
            args.out.join("out.ply").display(),
            post.stages
                .first()
                .map(|s| s.matched_md)
                .unwrap_or(f64::NAN),
            post.stages
                .last()
                .map(|s| s.matched_md)
                .unwrap_or(f64::NAN),
        );
    } else {
        save_mesh(&fit_result.fitted, args.out.join("fitted.ply"))?;
        println!(
            "fit written to {} (l_fit {:.4} mm, restart {})",
            args.out.join("fitted.ply").display(),
            fit_result.best.l_fit,
            fit_result.restart
        );
    }

    if let Some(dir) = &args.dump_depth {
        let final_render =
            meshcomplete::guidance::render_depth(&fit_result.fitted, &options.camera);
        meshcomplete::guidance::write_debug_dump(&final_render.image, &dir.join("fit"))?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, file: KvConfig) -> Result<()> {
    let chamfer_target = pick(
        args.chamfer_target,
        &file,
        "metrics",
        "chamfer_target",
        50_000,
    )?;
    let margin_samples = pick(args.margin_samples, &file, "metrics", "margin_samples", 4)?;
    let rows = meshcomplete::bench::evaluate_dir(&args.dir, chamfer_target, margin_samples)?;
    println!(
        "evaluated {} cases; summary at {}",
        rows.len(),
        args.dir.join("summary.csv").display()
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs, file: KvConfig) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let variants: Vec<Variant> = parse_list::<String>(
        &args
            .variants
            .unwrap_or_else(|| "full,global-only,local-only".to_string()),
        "variant",
    )?
    .into_iter()
    .map(|s| s.parse().map_err(Error::Data))
    .collect::<Result<_>>()?;
    let seeds: Vec<u64> = parse_list(&args.seeds.unwrap_or_else(|| "0,1".to_string()), "seed")?;
    let epochs = pick(args.epochs, &file, "train", "epochs", 40)?;
    let targets = parse_targets(args.targets.clone(), &file)?;
    let knn = pick(args.knn, &file, "hierarchy", "knn", DEFAULT_K_NN)?;

    let hierarchy = Arc::new(build_hierarchy(&make_template(), &targets, knn)?);
    let train_meshes: Vec<&meshcomplete::mesh::TriMesh> = dataset
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| &dataset.meshes[i])
        .collect();

    std::fs::create_dir_all(&args.out)?;
    let mut csv = String::from("variant,seed,param_count,l_mse,l_reg\n");
    for &seed in &seeds {
        for &variant in &variants {
            let cfg = TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let mut model = build_variant(
                Arc::clone(&hierarchy),
                &GeneratorConfig::default(),
                variant,
                seed,
            )?;
            println!(
                "ablate {variant} seed {seed}: {} params",
                model.param_count()
            );
            let log = train(&mut model, &train_meshes, &cfg)?;
            let last = log.last().expect("training ran");
            csv.push_str(&format!(
                "{variant},{seed},{},{},{}\n",
                model.param_count(),
                last.l_mse,
                last.l_reg
            ));
            model.save(&args.out.join(format!("{variant}_seed{seed}")))?;
        }
    }
    std::fs::write(args.out.join("ablation.csv"), csv)?;
    let mut resolved = KvConfig::new();
    resolved.set("train", "epochs", &epochs.to_string());
    write_snapshot(&resolved, &args.out)?;
    println!(
        "ablation table at {}",
        args.out.join("ablation.csv").display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs, file: KvConfig) -> Result<()> {
    let model = GeneratorModel::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let radii: Vec<f64> = parse_list(
        &args.radii.unwrap_or_else(|| "15,30,45".to_string()),
        "radius",
    )?;
    let guidance: GuidanceKind = pick(args.guidance, &file, "fit", "guidance", "off".to_string())?
        .parse()
        .map_err(Error::Data)?;
    let cfg = BenchConfig {
        radii,
        defect_seeds: pick(args.defect_seeds, &file, "bench", "defect_seeds", 5)?,
        identities: pick(args.identities, &file, "bench", "identities", 10)?,
        keypoints: args.keypoints || file.get("bench", "keypoints") == Some("true"),
        guidance,
        fit: FitConfig {
            steps: pick(args.steps, &file, "fit", "steps", 400)?,
            restarts: pick(args.restarts, &file, "fit", "restarts", 3)?,
            ..FitConfig::default()
        },
        post: PostprocessConfig::default(),
        workers: pick(
            args.workers,
            &file,
            "bench",
            "workers",
            BenchConfig::default().workers,
        )?,
        root_seed: pick(args.seed, &file, "bench", "seed", 0)?,
        ..BenchConfig::default()
    };
    std::fs::create_dir_all(&args.out)?;
    let mut resolved = KvConfig::new();
    resolved.set("bench", "seed", &cfg.root_seed.to_string());
    resolved.set("bench", "defect_seeds", &cfg.defect_seeds.to_string());
    resolved.set("bench", "identities", &cfg.identities.to_string());
    resolved.set("bench", "keypoints", &cfg.keypoints.to_string());
    resolved.set("fit", "steps", &cfg.fit.steps.to_string());
    resolved.set("fit", "restarts", &cfg.fit.restarts.to_string());
    resolved.set("fit", "guidance", &cfg.guidance.to_string());
    resolved.set(
        "bench",
        "radii",
        &cfg.radii
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    write_snapshot(&resolved, &args.out)?;

    let rows = meshcomplete::bench::run_bench(&model, &dataset, &cfg, &args.out)?;
    let finite = rows.iter().filter(|r| r.md_mm.is_finite()).count();
    println!(
        "bench complete: {} cases ({} finite md) -> {}",
        rows.len(),
        finite,
        args.out.join("summary.csv").display()
    );
    Ok(())
}
