use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::classify::{evaluate_accuracy, KnnConfig};
use crate::dataset::{write_labels, LabeledMatrix};
use crate::error::{DdlError, Result};
use crate::model_io::TrainedModel;
use crate::Matrix;

/// Within-class scatter over total scatter:
/// `sum_c sum_i ||z_i - mean_c||² / sum_j ||z_j - mean||²`.
///
/// Zero total scatter is defined as 0.
pub fn intra_class_scatter_ratio(repr: &Matrix, class_index: &[Vec<usize>]) -> Result<f64> {
    if repr.ncols() < 2 {
        return Err(DdlError::InvalidData(
            "scatter ratio needs at least two samples".into(),
        ));
    }
    if class_index.is_empty() {
        return Err(DdlError::InvalidData("scatter ratio needs a class".into()));
    }
    let global = repr.column_mean();
    let total: f64 = repr
        .column_iter()
        .map(|c| (c - &global).norm_squared())
        .sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut within = 0.0;
    for cols in class_index.iter().filter(|c| !c.is_empty()) {
        let block = repr.select_columns(cols);
        let mean = block.column_mean();
        within += block
            .column_iter()
            .map(|c| (c - &mean).norm_squared())
            .sum::<f64>();
    }
    Ok(within / total)
}

/// Scatter ratio of the input and of every training layer, `[Z_0, Z_1, ..., Z_L]`.
pub fn scatter_by_layer(model: &TrainedModel, train: &LabeledMatrix) -> Result<Vec<f64>> {
    std::iter::once(train.features())
        .chain(model.layer_reprs())
        .map(|z| intra_class_scatter_ratio(z, train.class_index()))
        .collect()
}

/// Best-k KNN accuracy when classifying with the layer-`l` representations,
/// for `l = 1..=L`. Test codes are truncated at `l`.
pub fn per_layer_accuracy(
    model: &TrainedModel,
    test: &LabeledMatrix,
    knn: &KnnConfig,
) -> Result<Vec<f64>> {
    let truth = model.internal_labels(&test.original_labels());
    (1..=model.depth())
        .map(|l| {
            let code = model.code_to_layer(test.features(), l)?;
            let train_repr = &model.layer_reprs()[l - 1];
            Ok(evaluate_accuracy(train_repr, model.labels(), &code, &truth, knn)?.best_accuracy)
        })
        .collect()
}

/// Writes `layer_0.csv` (input features), `layer_1.csv` .. `layer_L.csv` and
/// `labels.csv`. One sample per row, comma-separated, shortest round-trip
/// number formatting.
pub fn export_embeddings(
    model: &TrainedModel,
    train: &LabeledMatrix,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if model.train_repr().ncols() != train.n_samples() {
        return Err(DdlError::DimensionMismatch(format!(
            "model has {} training columns, data has {}",
            model.train_repr().ncols(),
            train.n_samples()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| DdlError::io(out_dir, e))?;
    let mut written = Vec::new();
    let layers = std::iter::once(train.features()).chain(model.layer_reprs());
    for (l, z) in layers.enumerate() {
        let path = out_dir.join(format!("layer_{l}.csv"));
        write_embedding_csv(z, &path)?;
        written.push(path);
    }
    let labels = out_dir.join("labels.csv");
    write_labels(&train.original_labels(), &labels)?;
    written.push(labels);
    Ok(written)
}

fn write_embedding_csv(z: &Matrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DdlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        for col in z.column_iter() {
            let row: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| DdlError::io(path, e))
}

/// Reads a file written by [`export_embeddings`] back into a column-per-sample matrix.
pub fn read_embedding_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| DdlError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| DdlError::Parse {
                    line: i + 1,
                    message: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(DdlError::InvalidData(format!(
            "ragged embedding file {}",
            path.display()
        )));
    }
    Ok(Matrix::from_fn(dim, rows.len(), |i, j| rows[j][i]))
}
