use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddlic::harness::{summary_text, train_model, write_grid, write_report};
use ddlic::{
    evaluate_accuracy, export_embeddings, grid_search_alpha, knn_predict, load_labeled_matrix,
    load_model, make_synthetic_clusters, run_experiment, save_dense_text, save_model,
    split_per_class, DataFormat, ExperimentConfig, SplitSpec,
};

#[derive(Parser)]
#[command(name = "ddlic", version, about = "Deep dictionary learning with intra-class constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it to a directory.
    Train(RunArgs),
    /// Classify a labeled data file with a saved model.
    Eval(EvalArgs),
    /// Run the repeated-split protocol and write reports.
    Experiment(RunArgs),
    /// Search the alpha grid with the repeated-split protocol.
    Grid(RunArgs),
    /// Write per-layer training embeddings of a saved model as CSV.
    Export(ExportArgs),
    /// Generate a synthetic Gaussian-cluster dataset.
    Synth(SynthArgs),
}

/// Options shared by every subcommand that builds an [`ExperimentConfig`].
/// A config file is applied first; flags override it.
#[derive(Args)]
struct RunArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data file, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    /// dense (CSV rows, label last) or pair (matrix file plus --labels).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// ddl or ddlic.
    #[arg(long)]
    method: Option<String>,
    /// Must agree with the number of layer sizes.
    #[arg(long)]
    depth: Option<usize>,
    /// Comma-separated atoms per layer, e.g. 400,200,100.
    #[arg(long)]
    layer_sizes: Option<String>,
    /// One shared alpha or one per layer, comma-separated.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Training samples per class.
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    knn_max: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other configuration key, repeatable: --set alpha_grid=1e-3,1e-2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Labeled test data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    knn_min: usize,
    #[arg(long, default_value_t = 30)]
    knn_max: usize,
    /// test (best k on the evaluated data) or loo (leave-one-out on training codes).
    #[arg(long, default_value = "test")]
    k_selection: String,
    /// Directory for accuracy_by_k.csv and predictions.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training data of the model; defaults to the copy saved by `train`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn data_format(format: Option<&str>, labels: Option<&Path>) -> Result<DataFormat> {
    match (format, labels) {
        (None | Some("dense"), None) => Ok(DataFormat::Dense),
        (None | Some("pair"), Some(l)) => Ok(DataFormat::MatrixPair {
            labels: l.to_path_buf(),
        }),
        (Some("pair"), None) => bail!("--format pair needs --labels"),
        (Some("dense"), Some(_)) => bail!("--labels only applies to --format pair"),
        (Some(other), _) => bail!("unknown format {other:?} (expected dense or pair)"),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {pair:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        let display = |p: &Path| p.display().to_string();
        let flags = [
            ("data", self.data.clone()),
            ("format", self.format.clone()),
            ("labels", self.labels.as_deref().map(display)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("method", self.method.clone()),
            ("layer_sizes", self.layer_sizes.clone()),
            ("depth", self.depth.map(|v| v.to_string())),
            ("alphas", self.alphas.clone()),
            ("lambda", self.lambda.map(|v| format!("{v:?}"))),
            ("iters", self.iters.map(|v| v.to_string())),
            ("h", self.h.map(|v| v.to_string())),
            ("replicates", self.replicates.map(|v| v.to_string())),
            ("knn_max", self.knn_max.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("out", self.out.as_deref().map(display)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.out_dir.as_deref().context("no output directory (use --out)")
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let out = out_dir(&cfg)?;
    let source = cfg.data.as_ref().context("no dataset configured (use --data)")?;
    let data = source.load()?;
    // With --h the model sees one seeded split; the held-out part is saved for `eval`.
    let train = if args.h.is_some() {
        let (train, test) = split_per_class(
            &data,
            &SplitSpec {
                per_class_train: cfg.per_class_train,
                seed: cfg.seed,
                replicate: 0,
            },
        )?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        save_dense_text(&test, &out.join("test.csv"))?;
        train
    } else {
        data
    };
    let model = train_model(&train, &cfg, cfg.seed)?;
    save_model(&model, out)?;
    save_dense_text(&train, &out.join("train.csv"))?;
    fs::write(out.join("config.resolved.txt"), cfg.to_key_values())?;
    println!(
        "trained {} model, layers {:?}, {} samples -> {}",
        model.method_name(),
        cfg.layer_sizes,
        train.n_samples(),
        out.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let format = data_format(args.format.as_deref(), args.labels.as_deref())?;
    let test = load_labeled_matrix(&args.data, &format)?;
    let mut cfg = ExperimentConfig::default();
    cfg.set("knn_min", &args.knn_min.to_string())?;
    cfg.set("knn_max", &args.knn_max.to_string())?;
    cfg.set("k_selection", &args.k_selection)?;
    let knn = cfg.knn;

    let code = model.code_test(test.features())?;
    let truth = model.internal_labels(&test.original_labels());
    let curve = evaluate_accuracy(model.train_repr(), model.labels(), &code, &truth, &knn)?;
    println!("accuracy {:.6} at k={}", curve.best_accuracy, curve.best_k);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut by_k = String::from("k,accuracy\n");
        for (k, a) in &curve.accuracy_by_k {
            by_k.push_str(&format!("{k},{a:?}\n"));
        }
        fs::write(out.join("accuracy_by_k.csv"), by_k)?;
        let predicted = knn_predict(model.train_repr(), model.labels(), &code, curve.best_k)?;
        let mut rows = String::from("sample,label,predicted\n");
        for (i, (&label, &p)) in test.original_labels().iter().zip(&predicted).enumerate() {
            rows.push_str(&format!("{},{label},{}\n", test.origin()[i], model.class_labels()[p]));
        }
        fs::write(out.join("predictions.csv"), rows)?;
    }
    Ok(())
}

fn experiment(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let out = out_dir(&cfg)?.to_path_buf();
    let report = run_experiment(&cfg)?;
    write_report(&report, &cfg, &out)?;
    print!("{}", summary_text(&report));
    if report.successes().next().is_none() {
        bail!("every replicate failed; see {}", out.join("report.csv").display());
    }
    Ok(())
}

fn grid(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let out = out_dir(&cfg)?.to_path_buf();
    let grid = grid_search_alpha(&cfg)?;
    write_grid(&grid, &cfg, &out)?;
    let best = grid.best_row();
    println!(
        "best alphas {:?}: mean accuracy {:.6} over {} cells",
        best.alphas,
        best.mean_accuracy,
        grid.rows.len()
    );
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let data_path = args.data.clone().unwrap_or_else(|| args.model.join("train.csv"));
    let train = load_labeled_matrix(&data_path, &DataFormat::Dense)?;
    let files = export_embeddings(&model, &train, &args.out)?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let data = make_synthetic_clusters(args.classes, args.per_class, args.dim, args.separation, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_dense_text(&data, &args.out)?;
    println!("wrote {} samples of dimension {} to {}", data.n_samples(), data.dim(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
        Command::Grid(a) => grid(a),
        Command::Export(a) => export(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
