//! Labeled sample matrices: loading, saving, per-class splitting and a
//! synthetic Gaussian-cluster generator.
//!
//! Samples are columns. Labels are remapped to `0..C` in ascending order of
//! the original integer labels; the original values are kept for reporting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DdlError, Result};
use crate::linalg::{derive_seed, orthonormalize_columns};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    features: Matrix,
    labels: Vec<usize>,
    class_labels: Vec<i64>,
    class_index: Vec<Vec<usize>>,
    origin: Vec<usize>,
}

impl LabeledMatrix {
    /// Builds a labeled matrix from raw integer labels, one per column.
    pub fn new(features: Matrix, raw_labels: &[i64]) -> Result<Self> {
        if raw_labels.len() != features.ncols() {
            return Err(DdlError::DimensionMismatch(format!(
                "{} labels for {} samples",
                raw_labels.len(),
                features.ncols()
            )));
        }
        let mut class_labels: Vec<i64> = raw_labels.to_vec();
        class_labels.sort_unstable();
        class_labels.dedup();
        let lookup: BTreeMap<i64, usize> = class_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let labels = raw_labels.iter().map(|l| lookup[l]).collect();
        let origin = (0..features.ncols()).collect();
        Self::from_parts(features, labels, class_labels, origin)
    }

    fn from_parts(
        features: Matrix,
        labels: Vec<usize>,
        class_labels: Vec<i64>,
        origin: Vec<usize>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(DdlError::InvalidData("feature dimension is 0".into()));
        }
        if features.ncols() == 0 {
            return Err(DdlError::InvalidData("no samples".into()));
        }
        check_finite(&features)?;
        let mut class_index = vec![Vec::new(); class_labels.len()];
        for (col, &label) in labels.iter().enumerate() {
            match class_index.get_mut(label) {
                Some(members) => members.push(col),
                None => {
                    return Err(DdlError::InvalidData(format!(
                        "label id {label} out of range for {} classes",
                        class_labels.len()
                    )))
                }
            }
        }
        if let Some(c) = class_index.iter().position(Vec::is_empty) {
            return Err(DdlError::InvalidData(format!(
                "class {} has no samples",
                class_labels[c]
            )));
        }
        Ok(Self {
            features,
            labels,
            class_labels,
            class_index,
            origin,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Internal labels in `0..n_classes()`.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Column indices of each class, ascending.
    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    /// Original label value for each internal class id.
    pub fn class_labels(&self) -> &[i64] {
        &self.class_labels
    }

    pub fn original_labels(&self) -> Vec<i64> {
        self.labels.iter().map(|&l| self.class_labels[l]).collect()
    }

    /// Column index of each sample in the matrix this one was derived from.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    /// True when each class occupies one contiguous run of columns, in class order.
    pub fn is_class_contiguous(&self) -> bool {
        self.labels.windows(2).all(|w| w[0] <= w[1])
    }

    /// Copy with every column scaled to unit L2 norm. Zero columns are left as is.
    pub fn normalized_columns(&self) -> Self {
        let mut out = self.clone();
        for mut col in out.features.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        out
    }

    /// Same samples with features replaced, e.g. by a learned representation.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.ncols() != self.n_samples() {
            return Err(DdlError::DimensionMismatch(format!(
                "{} columns for {} samples",
                features.ncols(),
                self.n_samples()
            )));
        }
        Self::from_parts(
            features,
            self.labels.clone(),
            self.class_labels.clone(),
            self.origin.clone(),
        )
    }

    fn select(&self, cols: &[usize]) -> Result<Self> {
        let features = self.features.select_columns(cols);
        let labels = cols.iter().map(|&c| self.labels[c]).collect();
        let origin = cols.iter().map(|&c| self.origin[c]).collect();
        Self::from_parts(features, labels, self.class_labels.clone(), origin)
    }
}

fn check_finite(m: &Matrix) -> Result<()> {
    for (col, column) in m.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|v| !v.is_finite()) {
            return Err(DdlError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// On-disk layouts accepted by [`load_labeled_matrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataFormat {
    /// One sample per row, comma-separated reals, last field an integer label.
    Dense,
    /// Whitespace-separated matrix (rows = features, columns = samples) plus a
    /// file with one integer label per line.
    MatrixPair { labels: PathBuf },
}

pub fn load_labeled_matrix(path: &Path, format: &DataFormat) -> Result<LabeledMatrix> {
    match format {
        DataFormat::Dense => load_dense_text(path),
        DataFormat::MatrixPair { labels } => {
            let features = read_matrix_text(path)?;
            let labels = read_labels(labels)?;
            LabeledMatrix::new(features, &labels)
        }
    }
}

fn meaningful_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_real(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| DdlError::Parse {
        line,
        message: format!("not a number: {field:?}"),
    })
}

fn parse_label(field: &str, line: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| DdlError::Parse {
        line,
        message: format!("label is not an integer: {field:?}"),
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DdlError::io(path, e))
}

fn load_dense_text(path: &Path) -> Result<LabeledMatrix> {
    let text = read_to_string(path)?;
    let mut width = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in meaningful_lines(&text) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() < 2 {
            return Err(DdlError::Parse {
                line,
                message: "expected at least one feature and a label".into(),
            });
        }
        let n = fields.len() - 1;
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(DdlError::Parse {
                    line,
                    message: format!("row has {n} features, expected {w}"),
                })
            }
            _ => {}
        }
        for field in &fields[..n] {
            values.push(parse_real(field, line)?);
        }
        labels.push(parse_label(fields[n], line)?);
    }
    let dim = width.ok_or_else(|| DdlError::InvalidData("file contains no samples".into()))?;
    // Row-major samples become columns.
    let features = Matrix::from_vec(dim, labels.len(), values);
    LabeledMatrix::new(features, &labels)
}

/// Writes the dense comma-separated format. Values use Rust's shortest
/// round-trip formatting, so reading the file back is bit-exact.
pub fn save_dense_text(data: &LabeledMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DdlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let labels = data.original_labels();
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        for (col, label) in data.features.column_iter().zip(&labels) {
            for v in col.iter() {
                write!(w, "{v:?},")?;
            }
            writeln!(w, "{label}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| DdlError::io(path, e))
}

/// Reads a whitespace-separated matrix, one matrix row per line.
pub fn read_matrix_text(path: &Path) -> Result<Matrix> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, row) in meaningful_lines(&text) {
        let parsed = row
            .split_whitespace()
            .map(|f| parse_real(f, line))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != parsed.len() {
                return Err(DdlError::Parse {
                    line,
                    message: format!("row has {} values, expected {}", parsed.len(), first.len()),
                });
            }
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        // Zero-column matrices have blank data rows; the header keeps the shape.
        let shape = text.lines().find_map(|l| l.trim().strip_prefix("# shape"));
        if let Some(shape) = shape {
            let dims: Vec<usize> = shape
                .split_whitespace()
                .filter_map(|d| d.parse().ok())
                .collect();
            if let [r, c] = dims[..] {
                if r == 0 || c == 0 {
                    return Ok(Matrix::zeros(r, c));
                }
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let m = Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

/// Writes a whitespace-separated matrix with shortest round-trip formatting.
/// An empty matrix is written as a `# shape R C` header line only.
pub fn write_matrix_text(m: &Matrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DdlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(w, "# shape {} {}", m.nrows(), m.ncols())?;
        for row in m.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", fields.join(" "))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| DdlError::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = read_to_string(path)?;
    meaningful_lines(&text)
        .map(|(line, l)| parse_label(l, line))
        .collect()
}

pub fn write_labels(labels: &[i64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DdlError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    /// Training samples drawn from every class.
    pub per_class_train: usize,
    pub seed: u64,
    pub replicate: u64,
}

/// Draws `per_class_train` columns per class uniformly at random for
/// training; everything else goes to the test set.
///
/// Training columns are grouped by class (class 0 block first), ordered by
/// original position inside each block. Test columns keep their original order.
pub fn split_per_class(
    data: &LabeledMatrix,
    spec: &SplitSpec,
) -> Result<(LabeledMatrix, LabeledMatrix)> {
    let h = spec.per_class_train;
    if h == 0 {
        return Err(DdlError::InvalidConfig(
            "per-class training count must be at least 1".into(),
        ));
    }
    for (c, members) in data.class_index.iter().enumerate() {
        if h >= members.len() {
            return Err(DdlError::InvalidConfig(format!(
                "per-class training count {h} leaves no test sample for class {} ({} samples)",
                data.class_labels[c],
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, spec.replicate));
    let mut in_train = vec![false; data.n_samples()];
    let mut train_cols = Vec::with_capacity(h * data.n_classes());
    for members in &data.class_index {
        let mut picked = index::sample(&mut rng, members.len(), h).into_vec();
        picked.sort_unstable();
        for p in picked {
            in_train[members[p]] = true;
            train_cols.push(members[p]);
        }
    }
    let test_cols: Vec<usize> = (0..data.n_samples()).filter(|&c| !in_train[c]).collect();
    Ok((data.select(&train_cols)?, data.select(&test_cols)?))
}

/// `classes` isotropic unit-variance Gaussian clusters in `dim` dimensions,
/// `n_per_class` samples each, stored class by class.
///
/// Class means sit at pairwise distance exactly `separation` when
/// `classes <= dim` (scaled random orthonormal directions); otherwise they are
/// random points rescaled so the closest pair is `separation` apart.
pub fn make_synthetic_clusters(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledMatrix> {
    if classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(DdlError::InvalidConfig(
            "classes, samples per class and dimension must be positive".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(DdlError::InvalidConfig(format!(
            "separation must be a finite non-negative number, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = Matrix::from_fn(dim, classes, |_, _| StandardNormal.sample(&mut rng));
    let means = if classes <= dim {
        let basis = orthonormalize_columns(&gaussian, classes, &mut rng);
        basis * (separation / std::f64::consts::SQRT_2)
    } else {
        let mut min_dist = f64::INFINITY;
        for i in 0..classes {
            for j in (i + 1)..classes {
                min_dist = min_dist.min((gaussian.column(i) - gaussian.column(j)).norm());
            }
        }
        if min_dist > 0.0 {
            gaussian * (separation / min_dist)
        } else {
            Matrix::zeros(dim, classes)
        }
    };
    let n = classes * n_per_class;
    let mut features = Matrix::zeros(dim, n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for s in 0..n_per_class {
            let noise = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            features
                .column_mut(c * n_per_class + s)
                .copy_from(&(means.column(c) + noise));
            labels.push(c as i64);
        }
    }
    LabeledMatrix::new(features, &labels)
}
