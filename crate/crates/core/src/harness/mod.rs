//! Experiment orchestration: repeated per-class splits, alpha grid search,
//! CSV/summary reports and per-layer diagnostics.
//!
//! Replicate `r` uses seed `base_seed + r` for both its split and its
//! dictionary initialization, so a run is a pure function of its config.
//! Replicates and grid cells run in parallel on a pool of `workers` threads;
//! results are gathered in index order, so reports do not depend on
//! scheduling.

mod config;
mod diagnostics;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{DataSource, ExperimentConfig, GridMode, Method, SyntheticSpec};
pub use diagnostics::{
    export_embeddings, intra_class_scatter_ratio, per_layer_accuracy, read_embedding_csv,
    scatter_by_layer,
};

use crate::classify::evaluate_accuracy;
use crate::dataset::{split_per_class, LabeledMatrix, SplitSpec};
use crate::ddl::train_ddl;
use crate::ddlic::train_ddlic;
use crate::error::{DdlError, Result};
use crate::model_io::TrainedModel;

/// Trains the configured method on a training split.
pub fn train_model(train: &LabeledMatrix, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedModel> {
    match cfg.method {
        Method::Ddl => Ok(TrainedModel::from_ddl(
            train_ddl(train.features(), &cfg.train_config(seed))?,
            train,
        )),
        Method::Ddlic => Ok(TrainedModel::Ddlic(train_ddlic(train, &cfg.ddlic_config(seed))?)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMetrics {
    /// Test accuracy at the selected k.
    pub accuracy: f64,
    pub best_k: usize,
    pub accuracy_by_k: Vec<(usize, f64)>,
    /// Intra-class scatter ratio of `Z_0, Z_1, ..., Z_L` on the training split.
    pub scatter: Vec<f64>,
    /// Best-k accuracy using layer `1..=L` representations.
    pub layer_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// Failure message when this replicate could not be trained or evaluated.
    pub result: std::result::Result<ReplicateMetrics, String>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    /// Per-layer alphas (DDLIC) or empty (DDL).
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub replicates: Vec<ReplicateOutcome>,
    /// Over successful replicates; NaN when none succeeded.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_scatter: Vec<f64>,
    pub mean_layer_accuracy: Vec<f64>,
}

impl EvalReport {
    pub fn successes(&self) -> impl Iterator<Item = &ReplicateMetrics> {
        self.replicates.iter().filter_map(|r| r.result.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.result.is_err()).count()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.successes().map(|m| m.accuracy).collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn column_means(rows: &[&[f64]]) -> Vec<f64> {
    let Some(width) = rows.first().map(|r| r.len()) else {
        return Vec::new();
    };
    (0..width)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn evaluate_replicate(
    data: &LabeledMatrix,
    cfg: &ExperimentConfig,
    replicate: usize,
) -> ReplicateOutcome {
    let seed = cfg.seed.wrapping_add(replicate as u64);
    let mut train_seconds = 0.0;
    let mut eval_seconds = 0.0;
    let mut run = || -> Result<ReplicateMetrics> {
        let spec = SplitSpec {
            per_class_train: cfg.per_class_train,
            seed,
            replicate: replicate as u64,
        };
        let (train, test) = split_per_class(data, &spec)?;
        let started = Instant::now();
        let model = train_model(&train, cfg, seed)?;
        train_seconds = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let test_code = model.code_test(test.features())?;
        let curve = evaluate_accuracy(
            model.train_repr(),
            model.labels(),
            &test_code,
            test.labels(),
            &cfg.knn,
        )?;
        let scatter = scatter_by_layer(&model, &train)?;
        let layer_accuracy = per_layer_accuracy(&model, &test, &cfg.knn)?;
        eval_seconds = started.elapsed().as_secs_f64();
        Ok(ReplicateMetrics {
            accuracy: curve.best_accuracy,
            best_k: curve.best_k,
            accuracy_by_k: curve.accuracy_by_k,
            scatter,
            layer_accuracy,
        })
    };
    let result = run().map_err(|e| e.to_string());
    ReplicateOutcome {
        replicate,
        seed,
        result,
        train_seconds,
        eval_seconds,
    }
}

fn run_on_data(data: &LabeledMatrix, cfg: &ExperimentConfig) -> EvalReport {
    let replicates: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| evaluate_replicate(data, cfg, r))
        .collect();
    let ok: Vec<&ReplicateMetrics> = replicates.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let accuracies: Vec<f64> = ok.iter().map(|m| m.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
    let scatter: Vec<&[f64]> = ok.iter().map(|m| m.scatter.as_slice()).collect();
    let layer_acc: Vec<&[f64]> = ok.iter().map(|m| m.layer_accuracy.as_slice()).collect();
    let mean_scatter = column_means(&scatter);
    let mean_layer_accuracy = column_means(&layer_acc);
    EvalReport {
        method: cfg.method,
        alphas: match cfg.method {
            Method::Ddl => Vec::new(),
            Method::Ddlic => cfg.resolved_alphas(),
        },
        lambda: cfg.lambda,
        replicates,
        mean_accuracy,
        std_accuracy,
        mean_scatter,
        mean_layer_accuracy,
    }
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DdlError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Runs the full split / train / code / classify protocol for every replicate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let data = cfg.data.as_ref().expect("validated").load()?;
    with_pool(cfg.workers, || run_on_data(&data, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub alphas: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index of the row with the highest mean accuracy (first on ties).
    pub best: usize,
}

impl GridResult {
    pub fn best_alphas(&self) -> &[f64] {
        &self.rows[self.best].alphas
    }

    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Alpha vectors evaluated by the grid search.
pub fn grid_combinations(grid: &[f64], depth: usize, mode: GridMode) -> Vec<Vec<f64>> {
    match mode {
        GridMode::Shared => grid.iter().map(|&a| vec![a; depth]).collect(),
        GridMode::PerLayer => {
            let mut combos = vec![Vec::with_capacity(depth)];
            for _ in 0..depth {
                combos = combos
                    .into_iter()
                    .flat_map(|prefix| {
                        grid.iter().map(move |&a| {
                            let mut next = prefix.clone();
                            next.push(a);
                            next
                        })
                    })
                    .collect();
            }
            combos
        }
    }
}

/// Evaluates every alpha combination with the full replicate protocol and
/// picks the one with the best mean accuracy.
pub fn grid_search_alpha(cfg: &ExperimentConfig) -> Result<GridResult> {
    if cfg.method != Method::Ddlic {
        return Err(DdlError::InvalidConfig(
            "alpha grid search requires method = ddlic".into(),
        ));
    }
    if cfg.alpha_grid.is_empty() {
        return Err(DdlError::InvalidConfig("alpha grid is empty".into()));
    }
    if let Some(a) = cfg.alpha_grid.iter().find(|a| a.is_nan() || **a < 0.0) {
        return Err(DdlError::InvalidConfig(format!("grid alpha must be >= 0, got {a}")));
    }
    cfg.validate()?;
    let data = cfg.data.as_ref().expect("validated").load()?;
    let combos = grid_combinations(&cfg.alpha_grid, cfg.depth(), cfg.grid_mode);
    let rows = with_pool(cfg.workers, || {
        combos
            .par_iter()
            .map(|alphas| {
                let cell = ExperimentConfig {
                    alphas: alphas.clone(),
                    ..cfg.clone()
                };
                let report = run_on_data(&data, &cell);
                GridRow {
                    alphas: alphas.clone(),
                    mean_accuracy: report.mean_accuracy,
                    std_accuracy: report.std_accuracy,
                    failures: report.failures(),
                }
            })
            .collect::<Vec<_>>()
    })?;
    let best = rows
        .iter()
        .enumerate()
        .fold(None, |best: Option<usize>, (i, row)| match best {
            _ if row.mean_accuracy.is_nan() => best,
            Some(b) if rows[b].mean_accuracy >= row.mean_accuracy => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| DdlError::InvalidData("every grid cell failed".into()))?;
    Ok(GridResult { rows, best })
}

fn fmt_list(values: &[f64], sep: &str) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(sep)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DdlError::io(path, e))
}

/// Per-replicate CSV: status, accuracy, chosen k, scatter per layer and
/// accuracy per layer.
pub fn report_csv(report: &EvalReport) -> String {
    let depth = report
        .successes()
        .next()
        .map_or(0, |m| m.layer_accuracy.len());
    let mut out = String::from("replicate,seed,status,accuracy,best_k");
    for l in 0..=depth {
        write!(out, ",scatter_z{l}").unwrap();
    }
    for l in 1..=depth {
        write!(out, ",accuracy_layer{l}").unwrap();
    }
    out.push('\n');
    for r in &report.replicates {
        match &r.result {
            Ok(m) => {
                write!(out, "{},{},ok,{:?},{}", r.replicate, r.seed, m.accuracy, m.best_k).unwrap();
                for v in m.scatter.iter().chain(&m.layer_accuracy) {
                    write!(out, ",{v:?}").unwrap();
                }
            }
            Err(msg) => {
                let msg = msg.replace([',', '\n'], ";");
                write!(out, "{},{},failed: {msg},,", r.replicate, r.seed).unwrap();
                out.push_str(&",".repeat(2 * depth + 1));
            }
        }
        out.push('\n');
    }
    out
}

/// Test accuracy for every k of every successful replicate.
pub fn accuracy_curve_csv(report: &EvalReport) -> String {
    let mut out = String::from("replicate,k,accuracy\n");
    for r in &report.replicates {
        if let Ok(m) = &r.result {
            for (k, acc) in &m.accuracy_by_k {
                writeln!(out, "{},{k},{acc:?}", r.replicate).unwrap();
            }
        }
    }
    out
}

pub fn summary_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let acc = report.accuracies();
    writeln!(out, "method: {}", report.method.name()).unwrap();
    match report.method {
        Method::Ddl => writeln!(out, "lambda: {:?}", report.lambda).unwrap(),
        Method::Ddlic => writeln!(out, "alphas: {}", fmt_list(&report.alphas, ", ")).unwrap(),
    }
    writeln!(
        out,
        "replicates: {} ({} failed)",
        report.replicates.len(),
        report.failures()
    )
    .unwrap();
    writeln!(
        out,
        "accuracy: mean {:.4} std {:.4} min {:.4} max {:.4}",
        report.mean_accuracy,
        report.std_accuracy,
        acc.iter().copied().fold(f64::NAN, f64::min),
        acc.iter().copied().fold(f64::NAN, f64::max)
    )
    .unwrap();
    let ks: Vec<String> = report.successes().map(|m| m.best_k.to_string()).collect();
    writeln!(out, "chosen k per replicate: {}", ks.join(", ")).unwrap();
    for (l, s) in report.mean_scatter.iter().enumerate() {
        writeln!(out, "mean intra-class scatter ratio Z{l}: {s:.4}").unwrap();
    }
    for (l, a) in report.mean_layer_accuracy.iter().enumerate() {
        writeln!(out, "mean accuracy using layer {}: {a:.4}", l + 1).unwrap();
    }
    out
}

/// Writes `config.resolved.txt`, `report.csv`, `accuracy_by_k.csv`,
/// `summary.txt` and `timings.csv` into `dir`. All but the timings are
/// byte-for-byte reproducible.
pub fn write_report(report: &EvalReport, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DdlError::io(dir, e))?;
    write_file(&dir.join("config.resolved.txt"), &cfg.to_key_values())?;
    write_file(&dir.join("report.csv"), &report_csv(report))?;
    write_file(&dir.join("accuracy_by_k.csv"), &accuracy_curve_csv(report))?;
    write_file(&dir.join("summary.txt"), &summary_text(report))?;
    let mut timings = String::from("replicate,train_seconds,eval_seconds\n");
    for r in &report.replicates {
        writeln!(timings, "{},{:.6},{:.6}", r.replicate, r.train_seconds, r.eval_seconds).unwrap();
    }
    write_file(&dir.join("timings.csv"), &timings)
}

pub fn grid_csv(grid: &GridResult) -> String {
    let mut out = String::from("alphas,mean_accuracy,std_accuracy,failures,best\n");
    for (i, row) in grid.rows.iter().enumerate() {
        writeln!(
            out,
            "{},{:?},{:?},{},{}",
            fmt_list(&row.alphas, ";"),
            row.mean_accuracy,
            row.std_accuracy,
            row.failures,
            i == grid.best
        )
        .unwrap();
    }
    out
}

/// Writes `config.resolved.txt` and `grid.csv` into `dir`.
pub fn write_grid(grid: &GridResult, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DdlError::io(dir, e))?;
    write_file(&dir.join("config.resolved.txt"), &cfg.to_key_values())?;
    write_file(&dir.join("grid.csv"), &grid_csv(grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            data: Some(DataSource::Synthetic(SyntheticSpec {
                classes: 3,
                per_class: 12,
                dim: 8,
                separation: 5.0,
                seed: 2,
            })),
            layer_sizes: vec![6, 4],
            iters: 4,
            per_class_train: 6,
            replicates: 3,
            workers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn shared_and_full_grids() {
        let grid = [1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.2];
        assert_eq!(grid_combinations(&grid, 3, GridMode::Shared).len(), 6);
        let full = grid_combinations(&grid, 3, GridMode::PerLayer);
        assert_eq!(full.len(), 216);
        assert_eq!(full[0], vec![1e-5; 3]);
        assert_eq!(full[1], vec![1e-5, 1e-5, 1e-4]);
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_replicate_has_zero_std() {
        let cfg = ExperimentConfig { replicates: 1, ..small() };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.replicates.len(), 1);
        assert_eq!(report.std_accuracy, 0.0);
        assert_eq!(report.mean_scatter.len(), 3);
        assert_eq!(report.mean_layer_accuracy.len(), 2);
    }

    #[test]
    fn mean_lies_within_replicate_range() {
        let report = run_experiment(&small()).unwrap();
        let acc = report.accuracies();
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= report.mean_accuracy && report.mean_accuracy <= hi);
    }

    #[test]
    fn failing_replicates_are_flagged_and_run_continues() {
        // k1 > input dimension: QR init rejects every replicate.
        let cfg = ExperimentConfig { layer_sizes: vec![10, 4], ..small() };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.failures(), 3);
        assert!(report.mean_accuracy.is_nan());
        let csv = report_csv(&report);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().contains("failed: invalid configuration"));
    }

    #[test]
    fn grid_of_one_returns_it() {
        let cfg = ExperimentConfig { alpha_grid: vec![0.01], replicates: 1, ..small() };
        let grid = grid_search_alpha(&cfg).unwrap();
        assert_eq!(grid.rows.len(), 1);
        assert_eq!(grid.best_alphas(), &[0.01, 0.01]);
    }

    #[test]
    fn grid_best_is_argmax() {
        let cfg = ExperimentConfig { replicates: 2, ..small() };
        let grid = grid_search_alpha(&cfg).unwrap();
        assert_eq!(grid.rows.len(), 6);
        let max = grid.rows.iter().map(|r| r.mean_accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(grid.best_row().mean_accuracy, max);
        assert!(grid.rows[..grid.best].iter().all(|r| r.mean_accuracy < max));
        assert!(grid_search_alpha(&ExperimentConfig { method: Method::Ddl, ..cfg }).is_err());
    }
}
