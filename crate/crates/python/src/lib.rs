//! Python bindings. Data crosses the boundary as lists of rows with one
//! sample per row, the same orientation as the dense CSV format.
//! Dictionaries are returned as ordinary matrix rows.

use std::path::PathBuf;

use ddlic::harness::{scatter_by_layer, train_model, write_grid, write_report};
use ddlic::{
    DataFormat, DdlError, ExperimentConfig, KSelection, KnnConfig, LabeledMatrix, Matrix, Method,
    SplitSpec, TrainedModel,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: DdlError) -> PyErr {
    match e {
        DdlError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Sample rows to a column-per-sample matrix. `dim` fixes the shape of an
/// empty input.
fn samples_to_matrix(rows: &[Vec<f64>], dim: Option<usize>) -> PyResult<Matrix> {
    let width = match (rows.first(), dim) {
        (Some(r), _) => r.len(),
        (None, Some(d)) => d,
        (None, None) => return Err(PyValueError::new_err("no samples given")),
    };
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(PyValueError::new_err(format!(
            "row {i} has {} values, expected {width}",
            r.len()
        )));
    }
    Ok(Matrix::from_fn(width, rows.len(), |i, j| rows[j][i]))
}

fn matrix_to_samples(m: &Matrix) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn knn_config(k_min: usize, k_max: usize, selection: &str) -> PyResult<KnnConfig> {
    let selection = match selection {
        "test" => KSelection::BestOnTest,
        "loo" => KSelection::LeaveOneOut,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown k selection {other:?} (expected test or loo)"
            )))
        }
    };
    let cfg = KnnConfig {
        k_min,
        k_max,
        selection,
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Labeled samples grouped by class.
#[pyclass(name = "LabeledMatrix", module = "ddlic_py", frozen)]
struct PyLabeledMatrix {
    inner: LabeledMatrix,
}

#[pymethods]
impl PyLabeledMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<Self> {
        let features = samples_to_matrix(&rows, None)?;
        Ok(Self {
            inner: LabeledMatrix::new(features, &labels).map_err(to_py)?,
        })
    }

    /// Dense CSV file, or a whitespace matrix file (features x samples) plus
    /// a label file when `labels` is given.
    #[staticmethod]
    #[pyo3(signature = (path, labels=None))]
    fn load(path: PathBuf, labels: Option<PathBuf>) -> PyResult<Self> {
        let format = match labels {
            Some(labels) => DataFormat::MatrixPair { labels },
            None => DataFormat::Dense,
        };
        Ok(Self {
            inner: ddlic::load_labeled_matrix(&path, &format).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ddlic::save_dense_text(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.inner.original_labels()
    }

    #[getter]
    fn class_sizes(&self) -> Vec<usize> {
        self.inner.class_sizes()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        matrix_to_samples(self.inner.features())
    }

    fn normalized(&self) -> Self {
        Self {
            inner: self.inner.normalized_columns(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.n_samples()
    }

    fn __repr__(&self) -> String {
        format!(
            "LabeledMatrix(n_samples={}, dim={}, classes={:?})",
            self.inner.n_samples(),
            self.inner.dim(),
            self.inner.class_labels()
        )
    }
}

/// A trained DDL or DDLIC model.
#[pyclass(name = "Model", module = "ddlic_py", frozen)]
struct PyModel {
    inner: TrainedModel,
}

impl PyModel {
    fn layer_index(&self, layer: Option<usize>) -> PyResult<usize> {
        let depth = self.inner.depth();
        match layer {
            None => Ok(depth),
            Some(l) if (1..=depth).contains(&l) => Ok(l),
            Some(l) => Err(PyValueError::new_err(format!("layer {l} not in 1..={depth}"))),
        }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (data, method="ddlic", layer_sizes=vec![400, 200, 100], alphas=vec![1e-3], lam=0.1, iters=20, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: &PyLabeledMatrix,
        method: &str,
        layer_sizes: Vec<usize>,
        alphas: Vec<f64>,
        lam: f64,
        iters: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let method: Method = method.parse().map_err(to_py)?;
        let cfg = ExperimentConfig {
            method,
            layer_sizes,
            alphas,
            lambda: lam,
            iters,
            seed,
            ..Default::default()
        };
        if cfg.alphas.len() != 1 && cfg.alphas.len() != cfg.depth() {
            return Err(PyValueError::new_err(format!(
                "{} alphas for {} layers",
                cfg.alphas.len(),
                cfg.depth()
            )));
        }
        let train = &data.inner;
        let inner = py.detach(|| train_model(train, &cfg, seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ddlic::load_model(&dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        ddlic::save_model(&self.inner, &dir).map_err(to_py)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method_name()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.dictionaries().iter().map(|d| d.ncols()).collect()
    }

    /// Objective after every iteration, one list per layer.
    #[getter]
    fn traces(&self) -> Vec<Vec<f64>> {
        self.inner.traces().to_vec()
    }

    #[getter]
    fn class_labels(&self) -> Vec<i64> {
        self.inner.class_labels().to_vec()
    }

    #[getter]
    fn train_labels(&self) -> Vec<i64> {
        let classes = self.inner.class_labels();
        self.inner.labels().iter().map(|&l| classes[l]).collect()
    }

    /// Dictionary of layer `layer` (1-based) as matrix rows.
    fn dictionary(&self, layer: usize) -> PyResult<Vec<Vec<f64>>> {
        let l = self.layer_index(Some(layer))?;
        Ok(matrix_rows(&self.inner.dictionaries()[l - 1]))
    }

    /// Training representation of a layer, one sample per row; the last layer by default.
    #[pyo3(signature = (layer=None))]
    fn representation(&self, layer: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
        let l = self.layer_index(layer)?;
        Ok(matrix_to_samples(&self.inner.layer_reprs()[l - 1]))
    }

    /// Codes new samples. Without `layer` this is the classification code.
    #[pyo3(signature = (rows, layer=None))]
    fn code(&self, py: Python<'_>, rows: Vec<Vec<f64>>, layer: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
        let y = samples_to_matrix(&rows, Some(self.inner.input_dim()))?;
        let model = &self.inner;
        let code = match layer {
            None => py.detach(|| model.code_test(&y)),
            Some(l) => {
                self.layer_index(Some(l))?;
                py.detach(|| model.code_to_layer(&y, l))
            }
        }
        .map_err(to_py)?;
        Ok(matrix_to_samples(&code))
    }

    /// KNN labels for new samples with `k` neighbours.
    fn predict(&self, py: Python<'_>, rows: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<i64>> {
        let y = samples_to_matrix(&rows, Some(self.inner.input_dim()))?;
        let model = &self.inner;
        let predicted = py
            .detach(|| {
                let code = model.code_test(&y)?;
                ddlic::knn_predict(model.train_repr(), model.labels(), &code, k)
            })
            .map_err(to_py)?;
        let classes = self.inner.class_labels();
        Ok(predicted.into_iter().map(|p| classes[p]).collect())
    }

    /// Accuracy curve over k on labeled test data.
    #[pyo3(signature = (test, k_min=1, k_max=30, selection="test"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        test: &PyLabeledMatrix,
        k_min: usize,
        k_max: usize,
        selection: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let knn = knn_config(k_min, k_max, selection)?;
        let model = &self.inner;
        let test = &test.inner;
        let curve = py
            .detach(|| {
                let code = model.code_test(test.features())?;
                let truth = model.internal_labels(&test.original_labels());
                ddlic::evaluate_accuracy(model.train_repr(), model.labels(), &code, &truth, &knn)
            })
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("accuracy", curve.best_accuracy)?;
        out.set_item("k", curve.best_k)?;
        out.set_item("accuracy_by_k", curve.accuracy_by_k)?;
        Ok(out)
    }

    #[pyo3(signature = (test, k_max=30))]
    fn per_layer_accuracy(&self, py: Python<'_>, test: &PyLabeledMatrix, k_max: usize) -> PyResult<Vec<f64>> {
        let knn = knn_config(1, k_max, "test")?;
        let (model, test) = (&self.inner, &test.inner);
        py.detach(|| ddlic::per_layer_accuracy(model, test, &knn)).map_err(to_py)
    }

    /// Intra-class scatter ratio of the input and of every layer.
    fn scatter_by_layer(&self, train: &PyLabeledMatrix) -> PyResult<Vec<f64>> {
        scatter_by_layer(&self.inner, &train.inner).map_err(to_py)
    }

    /// Writes layer_0.csv .. layer_L.csv and labels.csv; returns the paths.
    fn export(&self, train: &PyLabeledMatrix, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        ddlic::export_embeddings(&self.inner, &train.inner, &out_dir).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(method={}, layer_sizes={:?})",
            self.inner.method_name(),
            self.layer_sizes()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (classes=3, per_class=40, dim=20, separation=6.0, seed=0))]
fn synthetic_clusters(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> PyResult<PyLabeledMatrix> {
    Ok(PyLabeledMatrix {
        inner: ddlic::make_synthetic_clusters(classes, per_class, dim, separation, seed)
            .map_err(to_py)?,
    })
}

/// `h` training samples per class; the rest is the test set.
#[pyfunction]
#[pyo3(signature = (data, h, seed=0, replicate=0))]
fn split(
    data: &PyLabeledMatrix,
    h: usize,
    seed: u64,
    replicate: u64,
) -> PyResult<(PyLabeledMatrix, PyLabeledMatrix)> {
    let (train, test) = ddlic::split_per_class(
        &data.inner,
        &SplitSpec {
            per_class_train: h,
            seed,
            replicate,
        },
    )
    .map_err(to_py)?;
    Ok((PyLabeledMatrix { inner: train }, PyLabeledMatrix { inner: test }))
}

/// Euclidean KNN on raw vectors. Labels are arbitrary integers.
#[pyfunction]
fn knn_predict(
    train_rows: Vec<Vec<f64>>,
    train_labels: Vec<i64>,
    test_rows: Vec<Vec<f64>>,
    k: usize,
) -> PyResult<Vec<i64>> {
    let train = LabeledMatrix::new(samples_to_matrix(&train_rows, None)?, &train_labels).map_err(to_py)?;
    let test = samples_to_matrix(&test_rows, Some(train.dim()))?;
    let predicted = ddlic::knn_predict(train.features(), train.labels(), &test, k).map_err(to_py)?;
    Ok(predicted.into_iter().map(|p| train.class_labels()[p]).collect())
}

#[pyfunction]
fn scatter_ratio(rows: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    let data = LabeledMatrix::new(samples_to_matrix(&rows, None)?, &labels).map_err(to_py)?;
    ddlic::intra_class_scatter_ratio(data.features(), data.class_index()).map_err(to_py)
}

fn parse_config(config: &str) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(config).map_err(to_py)?;
    Ok(cfg)
}

/// Runs the repeated-split protocol from `key=value` configuration text.
/// Reports are written when the configuration sets `out`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config)?;
    let report = py.detach(|| ddlic::run_experiment(&cfg)).map_err(to_py)?;
    if let Some(dir) = &cfg.out_dir {
        write_report(&report, &cfg, dir).map_err(to_py)?;
    }
    let out = PyDict::new(py);
    out.set_item("method", report.method.name())?;
    out.set_item("alphas", report.alphas.clone())?;
    out.set_item("accuracies", report.accuracies())?;
    out.set_item("best_k", report.successes().map(|m| m.best_k).collect::<Vec<_>>())?;
    out.set_item("mean_accuracy", report.mean_accuracy)?;
    out.set_item("std_accuracy", report.std_accuracy)?;
    out.set_item("mean_scatter", report.mean_scatter.clone())?;
    out.set_item("mean_layer_accuracy", report.mean_layer_accuracy.clone())?;
    out.set_item("failures", report.failures())?;
    Ok(out)
}

/// Alpha grid search from `key=value` configuration text.
#[pyfunction]
fn grid_search<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config)?;
    let grid = py.detach(|| ddlic::grid_search_alpha(&cfg)).map_err(to_py)?;
    if let Some(dir) = &cfg.out_dir {
        write_grid(&grid, &cfg, dir).map_err(to_py)?;
    }
    let rows: Vec<(Vec<f64>, f64, f64, usize)> = grid
        .rows
        .iter()
        .map(|r| (r.alphas.clone(), r.mean_accuracy, r.std_accuracy, r.failures))
        .collect();
    let out = PyDict::new(py);
    out.set_item("best_alphas", grid.best_alphas().to_vec())?;
    out.set_item("rows", rows)?;
    Ok(out)
}

#[pymodule]
fn ddlic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabeledMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(knn_predict, m)?)?;
    m.add_function(wrap_pyfunction!(scatter_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_rows_become_columns_and_back() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = samples_to_matrix(&rows, None).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(2, 1)], 6.0);
        assert_eq!(matrix_to_samples(&m), rows);
        assert_eq!(matrix_rows(&m)[0], vec![1.0, 4.0]);
    }

    #[test]
    fn empty_input_uses_given_dimension() {
        assert_eq!(samples_to_matrix(&[], Some(4)).unwrap().shape(), (4, 0));
    }
}
