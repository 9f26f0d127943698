//! `pccd`: generate planted cross-graph datasets, detect communities, train
//! the pairwise-closeness model, and evaluate it — all from files, all
//! seeded, all reproducible from the run manifest each command writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pccd_core::error::Error;
use pccd_core::eval::{
    affiliation_dump, evaluate_triplets, experiment_inputs, run_experiment, sparsity_sweep,
    user_type_eval, write_affiliations_csv, write_metrics_csv, write_metrics_json,
    write_sweep_csv, write_user_type_csv, Experiment,
};
use pccd_core::graph::{
    load_dataset, write_dataset_manifest, write_edge_list, CrossGraphDataset, DatasetManifest,
    ManifestEntry,
};
use pccd_core::mapeq::{
    detect_communities, read_node_communities, write_node_communities, write_partition,
};
use pccd_core::model::{load_checkpoint, save_checkpoint, AblationFlags, PccdModel, Side};
use pccd_core::train::{
    plant_synthetic_dataset, write_loss_curve, PlantConfig, TrainConfig,
};
use pccd_core::Result;

#[derive(Parser)]
#[command(
    name = "pccd",
    version,
    about = "Pairwise cross-graph community closeness: data generation, detection, training, evaluation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a planted-community synthetic dataset (edge lists + truth).
    Gen {
        /// Plant config file (key=value or JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the generator seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect communities on one graph of a dataset by codelength descent.
    Communities {
        /// Dataset manifest (dataset.json from `gen`).
        #[arg(long)]
        data: PathBuf,
        /// Which graph to partition.
        #[arg(long, value_enum, default_value_t = GraphPick::Main)]
        graph: GraphPick,
        /// Detection seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the closeness model and store a checkpoint plus loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out test triplets.
    Eval {
        /// Dataset manifest the checkpoint was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth community file (truth.tsv from `gen`).
        #[arg(long)]
        truth: PathBuf,
        /// Checkpoint written by `train` or `ablate`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per sparsity level and tabulate held-out metrics.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated sparse-view keep ratios, e.g. `0.1,0.5,0.9`.
        #[arg(long, value_delimiter = ',', required = true)]
        delta_grid: Vec<f64>,
    },
    /// Evaluate a checkpoint on triplets drawn per user type (MU/MO/SO).
    Usertypes {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Triplets per label per user type.
        #[arg(long, default_value_t = 50)]
        count_per_label: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-community affiliation scores for selected users.
    Affiliations {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated user ids.
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<String>,
        /// Which graph side to read affiliations from.
        #[arg(long, value_enum, default_value_t = GraphPick::Sparse)]
        side: GraphPick,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate with model components disabled.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
        /// Zero the raw community one-hot input.
        #[arg(long)]
        no_rcr: bool,
        /// Zero the direct object-transform representation.
        #[arg(long)]
        no_dtr: bool,
        /// Replace attention with uniform neighbor weights.
        #[arg(long)]
        no_nf: bool,
        /// Freeze community filter weights at one.
        #[arg(long)]
        no_cf: bool,
        /// Drop the community-memory constraint from the loss.
        #[arg(long)]
        no_cc: bool,
        /// Disable masked training (rho = 0).
        #[arg(long)]
        no_mt: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (dataset.json from `gen`).
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth community file for triplet labeling.
    #[arg(long)]
    truth: PathBuf,
    /// Training config file (key=value or JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sparse-view keep ratio used for the training view (1.0 = all links).
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Training triplets sampled per label.
    #[arg(long, default_value_t = 400)]
    train_per_label: usize,
    /// Held-out test triplets sampled per label.
    #[arg(long, default_value_t = 150)]
    test_per_label: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum GraphPick {
    Main,
    Sparse,
}

impl GraphPick {
    fn side(self) -> Side {
        match self {
            GraphPick::Main => Side::Main,
            GraphPick::Sparse => Side::Sparse,
        }
    }

    fn name(self) -> &'static str {
        match self {
            GraphPick::Main => "main",
            GraphPick::Sparse => "sparse",
        }
    }
}

/// Reproducibility record written by every command.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    args: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    fn output(&mut self, name: &str) -> &mut Self {
        self.outputs.push(name.to_string());
        self
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("manifest serialization failed: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_world(
    data: &Path,
    truth: &Path,
) -> Result<(CrossGraphDataset, BTreeMap<String, usize>)> {
    let dataset = load_dataset(data)?;
    let truth = read_node_communities(truth)?;
    Ok((dataset, truth))
}

/// Reads one experiment-reconstruction value out of checkpoint metadata.
fn meta_value<T: std::str::FromStr>(model: &PccdModel, key: &str) -> Result<T> {
    model
        .meta
        .get(key)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "checkpoint metadata lacks '{key}'; it was not written by the train command"
            ))
        })?
        .parse()
        .map_err(|_| Error::Parse(format!("checkpoint metadata '{key}' is not a number")))
}

/// Rebuilds the training view and held-out test triplets recorded in a
/// checkpoint's metadata.
fn reconstruct_inputs(
    model: &PccdModel,
    dataset: &CrossGraphDataset,
    truth: &BTreeMap<String, usize>,
) -> Result<(CrossGraphDataset, Vec<pccd_core::train::UserTriplet>)> {
    let delta: f64 = meta_value(model, "delta")?;
    let seed: u64 = meta_value(model, "orchestration_seed")?;
    let train_per_label: usize = meta_value(model, "train_per_label")?;
    let test_per_label: usize = meta_value(model, "test_per_label")?;
    let (view, _, test) =
        experiment_inputs(dataset, truth, delta, train_per_label, test_per_label, seed)?;
    Ok((view, test))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn experiment(args: &TrainArgs, ablation: AblationFlags) -> Result<Experiment> {
    let cfg = train_config(args)?;
    let mut exp = Experiment::new(cfg, args.train_per_label, args.test_per_label);
    exp.delta = args.delta;
    exp.ablation = ablation;
    Ok(exp)
}

/// Runs the experiment, stamps reconstruction metadata into the model, and
/// writes checkpoint + loss curve + metrics into `out`.
fn train_and_store(
    args: &TrainArgs,
    ablation: AblationFlags,
    manifest: &mut RunManifest,
) -> Result<()> {
    ensure_dir(&args.out)?;
    let (dataset, truth) = load_world(&args.data, &args.truth)?;
    let exp = experiment(args, ablation)?;
    let mut result = run_experiment(&dataset, &truth, &exp)?;

    result.model.meta.insert("delta".into(), exp.delta.to_string());
    result
        .model
        .meta
        .insert("orchestration_seed".into(), exp.seed.to_string());
    result
        .model
        .meta
        .insert("train_per_label".into(), exp.train_per_label.to_string());
    result
        .model
        .meta
        .insert("test_per_label".into(), exp.test_per_label.to_string());

    save_checkpoint(&result.model, args.out.join("checkpoint.json"))?;
    write_loss_curve(args.out.join("loss.csv"), &result.train_report.train_loss)?;
    write_loss_curve(
        args.out.join("val_loss.csv"),
        &result.train_report.val_loss,
    )?;
    write_metrics_json(args.out.join("metrics.json"), &result.metrics)?;
    write_metrics_csv(args.out.join("metrics.csv"), &result.metrics)?;

    manifest
        .arg("data", args.data.display())
        .arg("truth", args.truth.display())
        .arg("seed", exp.seed)
        .arg("delta", exp.delta)
        .arg("train_per_label", exp.train_per_label)
        .arg("test_per_label", exp.test_per_label)
        .arg("train_config", serde_json::to_string(&exp.cfg).unwrap_or_default())
        .arg("ablation", serde_json::to_string(&exp.ablation).unwrap_or_default())
        .output("checkpoint.json")
        .output("loss.csv")
        .output("val_loss.csv")
        .output("metrics.json")
        .output("metrics.csv");
    if let Some(config) = &args.config {
        manifest.arg("config", config.display());
    }
    manifest.write(&args.out)?;

    println!(
        "trained {} epochs; held-out acc {:.4}, mcc {:.4} ({} test triplets)",
        exp.cfg.epochs, result.metrics.acc, result.metrics.mcc, result.metrics.n_triplets
    );
    println!("checkpoint: {}", args.out.join("checkpoint.json").display());
    Ok(())
}

fn cmd_gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut plant = match config {
        Some(path) => PlantConfig::from_file(path)?,
        None => PlantConfig::default(),
    };
    if let Some(seed) = seed {
        plant.seed = seed;
    }
    let (dataset, truth) = plant_synthetic_dataset(&plant)?;

    write_edge_list(&dataset.main, out.join("main.tsv"))?;
    write_edge_list(&dataset.sparse, out.join("sparse.tsv"))?;
    write_node_communities(&truth, out.join("truth.tsv"))?;
    let manifest = DatasetManifest {
        main: ManifestEntry {
            path: "main.tsv".into(),
            domain_tag: "main".into(),
        },
        sparse: ManifestEntry {
            path: "sparse.tsv".into(),
            domain_tag: "sparse".into(),
        },
    };
    write_dataset_manifest(&manifest, out.join("dataset.json"))?;

    let mut run = RunManifest::new("gen");
    run.arg("seed", plant.seed)
        .arg("plant_config", serde_json::to_string(&plant).unwrap_or_default())
        .output("main.tsv")
        .output("sparse.tsv")
        .output("truth.tsv")
        .output("dataset.json");
    if let Some(config) = config {
        run.arg("config", config.display());
    }
    run.write(out)?;

    println!(
        "planted {} users / {} + {} objects ({} + {} links)",
        dataset.num_users(),
        dataset.main.num_objects(),
        dataset.sparse.num_objects(),
        dataset.main.links().len(),
        dataset.sparse.links().len()
    );
    println!("dataset manifest: {}", out.join("dataset.json").display());
    Ok(())
}

fn cmd_communities(data: &Path, graph: GraphPick, seed: u64, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let target = match graph {
        GraphPick::Main => &dataset.main,
        GraphPick::Sparse => &dataset.sparse,
    };
    let partition = detect_communities(target, seed)?;
    write_partition(&partition, out.join("partition.tsv"))?;

    let mut run = RunManifest::new("communities");
    run.arg("data", data.display())
        .arg("graph", graph.name())
        .arg("seed", seed)
        .arg("codelength_bits", partition.codelength())
        .arg("num_communities", partition.num_communities())
        .output("partition.tsv");
    run.write(out)?;

    println!(
        "{} graph: {} communities, codelength {:.6} bits",
        graph.name(),
        partition.num_communities(),
        partition.codelength()
    );
    println!("partition: {}", out.join("partition.tsv").display());
    Ok(())
}

fn cmd_eval(data: &Path, truth: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (dataset, truth_map) = load_world(data, truth)?;
    let model = load_checkpoint(checkpoint)?;
    let (view, test) = reconstruct_inputs(&model, &dataset, &truth_map)?;
    let metrics = evaluate_triplets(&model, &view, &test)?;

    write_metrics_json(out.join("metrics.json"), &metrics)?;
    write_metrics_csv(out.join("metrics.csv"), &metrics)?;

    let mut run = RunManifest::new("eval");
    run.arg("data", data.display())
        .arg("truth", truth.display())
        .arg("checkpoint", checkpoint.display())
        .output("metrics.json")
        .output("metrics.csv");
    run.write(out)?;

    println!(
        "acc {:.4}  f1 {:.4}  mcc {:.4}  mrr {:.4}  ndcg {:.4}  map {:.4}  ({} triplets)",
        metrics.acc,
        metrics.f1_macro,
        metrics.mcc,
        metrics.mrr,
        metrics.ndcg,
        metrics.map,
        metrics.n_triplets
    );
    Ok(())
}

fn cmd_sweep(args: &TrainArgs, delta_grid: &[f64]) -> Result<()> {
    ensure_dir(&args.out)?;
    let (dataset, truth) = load_world(&args.data, &args.truth)?;
    let base = experiment(args, AblationFlags::none())?;
    let rows = sparsity_sweep(&dataset, &truth, delta_grid, &base)?;
    write_sweep_csv(args.out.join("sweep.csv"), &rows)?;

    let mut run = RunManifest::new("sweep");
    run.arg("data", args.data.display())
        .arg("truth", args.truth.display())
        .arg("seed", base.seed)
        .arg(
            "delta_grid",
            delta_grid
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .output("sweep.csv");
    run.write(&args.out)?;

    for (delta, m) in &rows {
        println!("delta {delta}: acc {:.4}  mcc {:.4}", m.acc, m.mcc);
    }
    println!("sweep table: {}", args.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_usertypes(
    data: &Path,
    truth: &Path,
    checkpoint: &Path,
    count_per_label: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let (dataset, truth_map) = load_world(data, truth)?;
    let model = load_checkpoint(checkpoint)?;
    let (view, _) = reconstruct_inputs(&model, &dataset, &truth_map)?;
    let rows = user_type_eval(&model, &view, &truth_map, count_per_label, seed)?;
    write_user_type_csv(out.join("usertypes.csv"), &rows)?;

    let mut run = RunManifest::new("usertypes");
    run.arg("data", data.display())
        .arg("truth", truth.display())
        .arg("checkpoint", checkpoint.display())
        .arg("count_per_label", count_per_label)
        .arg("seed", seed)
        .output("usertypes.csv");
    run.write(out)?;

    for (ty, m) in &rows {
        println!("{}: acc {:.4}  mcc {:.4}", ty.short(), m.acc, m.mcc);
    }
    Ok(())
}

fn cmd_affiliations(
    data: &Path,
    checkpoint: &Path,
    users: &[String],
    side: GraphPick,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let model = load_checkpoint(checkpoint)?;
    let rows = affiliation_dump(&model, &dataset, users, side.side())?;
    write_affiliations_csv(out.join("affiliations.csv"), &rows)?;

    let mut run = RunManifest::new("affiliations");
    run.arg("data", data.display())
        .arg("checkpoint", checkpoint.display())
        .arg("side", side.name())
        .arg("users", users.join(","))
        .output("affiliations.csv");
    run.write(out)?;

    println!(
        "wrote {} affiliation rows x {} communities ({})",
        rows.len(),
        rows.first().map_or(0, |(_, v)| v.len()),
        out.join("affiliations.csv").display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { config, seed, out } => cmd_gen(config.as_deref(), seed, &out),
        Cmd::Communities {
            data,
            graph,
            seed,
            out,
        } => cmd_communities(&data, graph, seed, &out),
        Cmd::Train(args) => {
            let mut manifest = RunManifest::new("train");
            train_and_store(&args, AblationFlags::none(), &mut manifest)
        }
        Cmd::Eval {
            data,
            truth,
            checkpoint,
            out,
        } => cmd_eval(&data, &truth, &checkpoint, &out),
        Cmd::Sweep { train, delta_grid } => cmd_sweep(&train, &delta_grid),
        Cmd::Usertypes {
            data,
            truth,
            checkpoint,
            count_per_label,
            seed,
            out,
        } => cmd_usertypes(&data, &truth, &checkpoint, count_per_label, seed, &out),
        Cmd::Affiliations {
            data,
            checkpoint,
            users,
            side,
            out,
        } => cmd_affiliations(&data, &checkpoint, &users, side, &out),
        Cmd::Ablate {
            train,
            no_rcr,
            no_dtr,
            no_nf,
            no_cf,
            no_cc,
            no_mt,
        } => {
            let flags = AblationFlags {
                no_rcr,
                no_dtr,
                no_nf,
                no_cf,
                no_cc,
                no_mt,
            };
            let mut manifest = RunManifest::new("ablate");
            train_and_store(&train, flags, &mut manifest)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, not usage errors
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
