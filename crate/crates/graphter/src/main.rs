//! Command-line surface: dataset generation, transform demos, pretraining,
//! frozen-encoder probes, ablation grids and the gradient audit.
//!
//! Exit codes: 0 success, 1 validation error (bad flags/config/inputs),
//! 2 runtime failure.

use clap::{Args, Parser, Subcommand};
use graphter::checkpoint::{load_model, save_model};
use graphter::config::RunConfig;
use graphter::data::{
    load_cloud, make_dataset, save_cloud, CloudFormat, Dataset, PointCloud, ShapeKind, Split,
};
use graphter::error::Error;
use graphter::eval::{
    ablation_cells, results_csv, run_ablate_cell, train_classify_probe, train_segment_probe,
    AblateRow,
};
use graphter::gradcheck::{gradcheck, registered_ops};
use graphter::model::GraphTerModel;
use graphter::training::{metrics_csv, pretrain};
use graphter::transforms::{
    apply_transform, sample_subset, sample_transform, SampleMode, Strategy, TransformKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "graphter", version, about = "Node-wise transformation equivariant representation learning on point-cloud graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic shape dataset
    GenData(GenDataArgs),
    /// Apply a sampled node-wise transformation to one cloud
    Transform(TransformArgs),
    /// Pretrain the encoder/decoder on the transformation pretext task
    Pretrain(PretrainArgs),
    /// Train and evaluate a frozen-encoder probe
    Probe(ProbeArgs),
    /// Run a pretrain+probe grid over transformation/sampling axes
    Ablate(AblateArgs),
    /// Finite-difference audit of the autodiff operations
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Comma-separated shape classes (sphere, cube, cylinder, torus)
    #[arg(long, default_value = "sphere,cube,cylinder,torus")]
    classes: String,
    /// Clouds per class
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Points per cloud
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Gaussian surface noise sigma
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train split fraction
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    /// Input cloud (.xyz or .off)
    #[arg(long, value_name = "FILE")]
    r#in: PathBuf,
    /// translation | rotation | shearing
    #[arg(long)]
    kind: String,
    /// iso | aniso
    #[arg(long, default_value = "iso")]
    strategy: String,
    /// global | local
    #[arg(long, default_value = "global")]
    mode: String,
    /// Fraction of nodes to transform, in (0,1]
    #[arg(long, default_value_t = 0.25)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Run configuration file (flat key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory from gen-data; generated from config when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    /// Pretrained encoder checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory from gen-data; generated from config when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// classify | segment
    #[arg(long, default_value = "classify")]
    task: String,
    /// Single linear layer on pooled features instead of the MLP head
    #[arg(long, default_value_t = false)]
    linear: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Axis overrides, e.g. "kind=translation,rotation,shearing;rate=25,50,75,100"
    #[arg(long)]
    axes: Option<String>,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// "all" or one registered op name
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Optional report directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Parse { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

type Result<T> = graphter::error::Result<T>;

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn ensure_input(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::InvalidArgument(format!("{what} '{}' does not exist", path.display())));
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::new_with_prefix(bytes).finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// List every produced file with its checksum; sorted so repeated runs match.
fn write_manifest(out: &Path, files: &[String]) -> Result<()> {
    let mut names = files.to_vec();
    names.sort();
    let mut text = String::new();
    for name in &names {
        let bytes = std::fs::read(out.join(name))?;
        text.push_str(&format!("{}  {}\n", sha256_hex(&bytes), name));
    }
    std::fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            ensure_input(p, "config file")?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let classes = a
        .classes
        .split(',')
        .map(|c| ShapeKind::from_str(c.trim()))
        .collect::<Result<Vec<_>>>()?;
    let config = graphter::data::DatasetConfig {
        classes,
        per_class: a.count,
        n_points: a.points,
        noise_sigma: a.noise,
        split_fraction: a.split,
        seed: a.seed,
    };
    let data = make_dataset::<f32>(&config)?;
    ensure_out(&a.out)?;
    let mut files = Vec::new();
    let mut index = String::new();
    for (i, cloud) in data.clouds.iter().enumerate() {
        let name = format!("{}.xyz", cloud.id);
        save_cloud(cloud, &a.out.join(&name), CloudFormat::XyzText)?;
        let class = &data.class_names[cloud.class_label.unwrap()];
        let split = match data.splits[i] {
            Split::Train => "train",
            Split::Test => "test",
        };
        index.push_str(&format!("{name} {class} {split}\n"));
        files.push(name);
    }
    std::fs::write(a.out.join("index.txt"), index)?;
    files.push("index.txt".to_string());
    write_manifest(&a.out, &files)?;
    println!("wrote {} clouds to {}", data.clouds.len(), a.out.display());
    Ok(())
}

/// Read a gen-data directory back into a Dataset.
fn load_dataset_dir(dir: &Path) -> Result<Dataset<f32>> {
    ensure_input(dir, "data directory")?;
    let index_path = dir.join("index.txt");
    ensure_input(&index_path, "dataset index")?;
    let text = std::fs::read_to_string(&index_path)?;
    let mut clouds = Vec::new();
    let mut splits = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: index_path.display().to_string(),
                line: ln + 1,
                message: format!("expected 'file class split', got '{line}'"),
            });
        }
        let mut cloud: PointCloud<f32> = load_cloud(&dir.join(parts[0]), CloudFormat::XyzText)?;
        let class = parts[1].to_string();
        let class_idx = match class_names.iter().position(|c| c == &class) {
            Some(i) => i,
            None => {
                class_names.push(class);
                class_names.len() - 1
            }
        };
        cloud.class_label = Some(class_idx);
        cloud.id = parts[0].trim_end_matches(".xyz").to_string();
        clouds.push(cloud);
        splits.push(match parts[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    path: index_path.display().to_string(),
                    line: ln + 1,
                    message: format!("unknown split '{other}'"),
                })
            }
        });
    }
    if clouds.is_empty() {
        return Err(Error::InvalidArgument(format!("no clouds listed in {}", index_path.display())));
    }
    Ok(Dataset { clouds, splits, class_names })
}

fn cloud_format_for(path: &Path) -> Result<CloudFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => Ok(CloudFormat::XyzText),
        Some("off") | Some("OFF") => Ok(CloudFormat::Off),
        other => Err(Error::InvalidArgument(format!(
            "unsupported cloud extension {other:?}; expected .xyz or .off"
        ))),
    }
}

fn cmd_transform(a: TransformArgs) -> Result<()> {
    ensure_input(&a.r#in, "input cloud")?;
    let kind = TransformKind::from_str(&a.kind)?;
    let strategy = Strategy::from_str(&a.strategy)?;
    let mode = SampleMode::from_str(&a.mode)?;
    let cloud: PointCloud<f32> = load_cloud(&a.r#in, cloud_format_for(&a.r#in)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mask = sample_subset(&cloud, mode, a.rate, &mut rng)?;
    let transform = sample_transform::<f32>(kind, strategy, mask, &mut rng);
    let transformed = apply_transform(&cloud, &transform)?;
    ensure_out(&a.out)?;
    save_cloud(&cloud, &a.out.join("original.xyz"), CloudFormat::XyzText)?;
    save_cloud(&transformed, &a.out.join("transformed.xyz"), CloudFormat::XyzText)?;
    // sidecar: one row per selected node with its parameter vector
    let p = kind.param_count();
    let mut sidecar = String::from("node,");
    sidecar.push_str(&(0..p).map(|i| format!("p{i}")).collect::<Vec<_>>().join(","));
    sidecar.push('\n');
    for (row, &node) in transform.mask.selected.iter().enumerate() {
        let params: Vec<String> =
            (0..p).map(|c| format!("{:.12e}", transform.params[row * p + c])).collect();
        sidecar.push_str(&format!("{node},{}\n", params.join(",")));
    }
    std::fs::write(a.out.join("params.csv"), sidecar)?;
    write_manifest(
        &a.out,
        &["original.xyz".into(), "transformed.xyz".into(), "params.csv".into()],
    )?;
    println!("transformed {} of {} nodes ({kind}, {strategy}, {mode})", transform.mask.len(), cloud.num_points());
    Ok(())
}

fn resolve_dataset(data: &Option<PathBuf>, config: &RunConfig) -> Result<Dataset<f32>> {
    match data {
        Some(dir) => load_dataset_dir(dir),
        None => make_dataset(&config.dataset_config()),
    }
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    config.validate()?;
    let data = resolve_dataset(&a.data, &config)?;
    let train_clouds: Vec<_> =
        data.split_indices(Split::Train).into_iter().map(|i| data.clouds[i].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GraphTerModel::<f32>::new(config.kind, config.arch_config(), &mut rng);
    let metrics = pretrain(&config, &train_clouds, &mut model)?;
    ensure_out(&a.out)?;
    save_model(&model, &a.out.join("model.gter"))?;
    std::fs::write(a.out.join("metrics.csv"), metrics_csv(&metrics))?;
    config.save(&a.out.join("config.txt"))?;
    write_manifest(&a.out, &["model.gter".into(), "metrics.csv".into(), "config.txt".into()])?;
    let last = metrics.last().unwrap();
    println!("pretrained {} epochs; final mean loss {:.6}", metrics.len(), last.mean_loss);
    Ok(())
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    ensure_input(&a.checkpoint, "checkpoint")?;
    let config = load_config(&a.config)?;
    let data = resolve_dataset(&a.data, &config)?;
    let mut model = load_model::<f32>(&a.checkpoint)?;
    ensure_out(&a.out)?;
    let mut report = String::new();
    match a.task.as_str() {
        "classify" => {
            let (_, result) = train_classify_probe(&mut model, &data, &config, a.linear)?;
            report.push_str(&format!("overall_accuracy,{}\n", result.overall));
            for (c, acc) in result.per_class.iter().enumerate() {
                report.push_str(&format!("class_{}_accuracy,{acc}\n", data.class_names[c]));
            }
            println!("classify probe accuracy: {:.4}", result.overall);
        }
        "segment" => {
            let parts = parts_per_category(&data)?;
            let (_, result) = train_segment_probe(&mut model, &data, &config, &parts)?;
            report.push_str(&format!("mean_iou,{}\n", result.mean_iou));
            for &(c, iou) in &result.category_ious {
                report.push_str(&format!("category_{}_iou,{iou}\n", data.class_names[c]));
            }
            println!("segment probe mIoU: {:.4}", result.mean_iou);
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown task '{other}'; expected classify or segment"
            )))
        }
    }
    std::fs::write(a.out.join("probe.csv"), report)?;
    write_manifest(&a.out, &["probe.csv".into()])?;
    Ok(())
}

fn parts_per_category(data: &Dataset<f32>) -> Result<Vec<usize>> {
    data.class_names
        .iter()
        .map(|name| ShapeKind::from_str(name).map(|k| k.num_parts()))
        .collect()
}

struct Axes {
    kinds: Vec<TransformKind>,
    strategies: Vec<Strategy>,
    modes: Vec<SampleMode>,
    rates: Vec<u32>,
}

/// Unlisted axes keep their defaults: the config's kind and rate, and the
/// full strategy × mode grid.
fn parse_axes(spec: &Option<String>, config: &RunConfig) -> Result<Axes> {
    let mut axes = Axes {
        kinds: vec![config.kind],
        strategies: vec![Strategy::Isotropic, Strategy::Anisotropic],
        modes: vec![SampleMode::Global, SampleMode::Local],
        rates: vec![(config.rate * 100.0).round() as u32],
    };
    let Some(spec) = spec else { return Ok(axes) };
    for clause in spec.split(';').filter(|c| !c.trim().is_empty()) {
        let (name, values) = clause.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("axis clause '{clause}' is not name=v1,v2,..."))
        })?;
        let values: Vec<&str> = values.split(',').map(|v| v.trim()).collect();
        match name.trim() {
            "kind" => {
                axes.kinds = values.iter().map(|v| TransformKind::from_str(v)).collect::<Result<_>>()?
            }
            "strategy" => {
                axes.strategies =
                    values.iter().map(|v| Strategy::from_str(v)).collect::<Result<_>>()?
            }
            "mode" => {
                axes.modes =
                    values.iter().map(|v| SampleMode::from_str(v)).collect::<Result<_>>()?
            }
            "rate" => {
                axes.rates = values
                    .iter()
                    .map(|v| {
                        v.parse::<u32>().map_err(|_| {
                            Error::InvalidArgument(format!("bad rate percent '{v}'"))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::InvalidArgument(format!("unknown axis '{other}'"))),
        }
    }
    Ok(axes)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let config = load_config(&a.config)?;
    config.validate()?;
    let axes = parse_axes(&a.axes, &config)?;
    let cells = ablation_cells(&axes.kinds, &axes.strategies, &axes.modes, &axes.rates, config.seed);

    // worker pool over a shared counter; results land in cell order
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<f64>>> =
        cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let value = run_ablate_cell::<f32>(&config, &cells[i]).unwrap_or(f64::NAN);
                *results[i].lock().unwrap() = Some(value);
            });
        }
    });
    let rows: Vec<AblateRow> = cells
        .into_iter()
        .zip(&results)
        .map(|(cell, v)| AblateRow {
            cell,
            metric: "accuracy".to_string(),
            value: v.lock().unwrap().unwrap_or(f64::NAN),
        })
        .collect();
    let csv = results_csv(&rows);
    ensure_out(&a.out)?;
    std::fs::write(a.out.join("results.csv"), &csv)?;
    config.save(&a.out.join("config.txt"))?;
    write_manifest(&a.out, &["results.csv".into(), "config.txt".into()])?;
    // human-readable summary
    println!("{:<12} {:<6} {:<7} {:>5} {:>10}", "kind", "strat", "mode", "rate", "accuracy");
    for row in &rows {
        let value = if row.value.is_nan() { "failed".to_string() } else { format!("{:.4}", row.value) };
        println!(
            "{:<12} {:<6} {:<7} {:>4}% {:>10}",
            row.cell.kind.to_string(),
            row.cell.strategy.to_string(),
            row.cell.mode.to_string(),
            row.cell.rate_percent,
            value
        );
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::InvalidArgument("--trials must be at least 1".into()));
    }
    let ops: Vec<String> = if a.ops == "all" {
        registered_ops().iter().map(|s| s.to_string()).collect()
    } else {
        if !registered_ops().contains(&a.ops.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown op '{}'; registered: {}",
                a.ops,
                registered_ops().join(", ")
            )));
        }
        vec![a.ops.clone()]
    };
    let mut all_pass = true;
    let mut report = String::from("op,max_rel_err,pass\n");
    for op in &ops {
        let r = gradcheck(op, a.trials, a.tol)?;
        let worst = r.per_trial_max_rel_err.iter().cloned().fold(0.0f64, f64::max);
        println!("{:<16} max rel err {:.3e}  {}", op, worst, if r.pass { "PASS" } else { "FAIL" });
        report.push_str(&format!("{op},{worst},{}\n", r.pass));
        all_pass &= r.pass;
    }
    if let Some(out) = &a.out {
        ensure_out(out)?;
        std::fs::write(out.join("gradcheck.csv"), report)?;
        write_manifest(out, &["gradcheck.csv".into()])?;
    }
    if !all_pass {
        return Err(Error::Runtime("gradient check failed".into()));
    }
    Ok(())
}
