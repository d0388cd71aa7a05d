//! A trained model of either kind, and its on-disk directory layout:
//!
//! ```text
//! metadata.txt        key=value: method, layer sizes, lambda/alphas, seed, traces, ...
//! dictionary_<l>.txt  D_l, whitespace-separated, one matrix row per line
//! repr_<l>.txt        training representation Z_l
//! labels.txt          original training label per column of Z_l
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataset::{read_labels, read_matrix_text, write_labels, write_matrix_text, LabeledMatrix};
use crate::ddl::{code_test_ddl, DdlModel, InitMode, TrainConfig};
use crate::ddlic::{DdlicConfig, DdlicModel};
use crate::error::{DdlError, Result};
use crate::linalg::{IstaConfig, RidgePolicy, StepSize};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Ddl {
        model: DdlModel,
        labels: Vec<usize>,
        class_labels: Vec<i64>,
    },
    Ddlic(DdlicModel),
}

impl TrainedModel {
    pub fn method_name(&self) -> &'static str {
        match self {
            TrainedModel::Ddl { .. } => "ddl",
            TrainedModel::Ddlic(_) => "ddlic",
        }
    }

    pub fn depth(&self) -> usize {
        self.dictionaries().len()
    }

    pub fn dictionaries(&self) -> &[Matrix] {
        match self {
            TrainedModel::Ddl { model, .. } => &model.dictionaries,
            TrainedModel::Ddlic(m) => &m.dictionaries,
        }
    }

    pub fn layer_reprs(&self) -> &[Matrix] {
        match self {
            TrainedModel::Ddl { model, .. } => &model.layer_reprs,
            TrainedModel::Ddlic(m) => &m.layer_reprs,
        }
    }

    pub fn traces(&self) -> &[Vec<f64>] {
        match self {
            TrainedModel::Ddl { model, .. } => &model.traces,
            TrainedModel::Ddlic(m) => &m.traces,
        }
    }

    pub fn train_repr(&self) -> &Matrix {
        self.layer_reprs().last().expect("model has at least one layer")
    }

    /// Internal training labels, one per representation column.
    pub fn labels(&self) -> &[usize] {
        match self {
            TrainedModel::Ddl { labels, .. } => labels,
            TrainedModel::Ddlic(m) => &m.labels,
        }
    }

    pub fn class_labels(&self) -> &[i64] {
        match self {
            TrainedModel::Ddl { class_labels, .. } => class_labels,
            TrainedModel::Ddlic(m) => &m.class_labels,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dictionaries()[0].nrows()
    }

    /// Final-layer test codes, using each method's own coding rule.
    pub fn code_test(&self, y: &Matrix) -> Result<Matrix> {
        match self {
            TrainedModel::Ddl { model, .. } => code_test_ddl(model, y),
            TrainedModel::Ddlic(m) => m.code_to_layer(y, m.depth()),
        }
    }

    /// Test codes truncated at `layer` (1-based).
    pub fn code_to_layer(&self, y: &Matrix, layer: usize) -> Result<Matrix> {
        match self {
            TrainedModel::Ddl { model, .. } => model.code_to_layer(y, layer),
            TrainedModel::Ddlic(m) => m.code_to_layer(y, layer),
        }
    }

    /// Maps original test labels onto this model's internal class ids.
    /// Labels never seen in training map to `usize::MAX` and never match.
    pub fn internal_labels(&self, original: &[i64]) -> Vec<usize> {
        let lookup: BTreeMap<i64, usize> = self
            .class_labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        original
            .iter()
            .map(|l| lookup.get(l).copied().unwrap_or(usize::MAX))
            .collect()
    }

    pub fn from_ddl(model: DdlModel, train: &LabeledMatrix) -> Self {
        TrainedModel::Ddl {
            model,
            labels: train.labels().to_vec(),
            class_labels: train.class_labels().to_vec(),
        }
    }
}

fn join<T: std::fmt::Debug>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn init_name(init: InitMode) -> &'static str {
    match init {
        InitMode::QrFirstRandomRest => "qr",
        InitMode::Random => "random",
    }
}

pub(crate) fn parse_init(s: &str) -> Result<InitMode> {
    match s {
        "qr" => Ok(InitMode::QrFirstRandomRest),
        "random" => Ok(InitMode::Random),
        other => Err(DdlError::InvalidConfig(format!(
            "unknown init mode {other:?} (expected qr or random)"
        ))),
    }
}

pub(crate) fn step_name(step: StepSize) -> String {
    match step {
        StepSize::Auto => "auto".into(),
        StepSize::Fixed(s) => format!("{s:?}"),
    }
}

pub(crate) fn parse_step(s: &str) -> Result<StepSize> {
    if s == "auto" {
        return Ok(StepSize::Auto);
    }
    parse_value::<f64>("ista_step", s).map(StepSize::Fixed)
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| DdlError::InvalidConfig(format!("bad value for {key}: {value:?}")))
}

pub(crate) fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(key, v))
        .collect()
}

/// `key=value` lines; blank lines and `#` comments skipped.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DdlError::Parse {
            line: i + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn metadata(model: &TrainedModel) -> String {
    let mut lines = vec![format!("method={}", model.method_name())];
    let sizes: Vec<usize> = model.dictionaries().iter().map(|d| d.ncols()).collect();
    lines.push(format!("input_dim={}", model.input_dim()));
    lines.push(format!("layer_sizes={}", join(&sizes)));
    let (seed, iters, init, ridge) = match model {
        TrainedModel::Ddl { model, .. } => {
            let c = &model.config;
            lines.push(format!("lambda={:?}", c.lambda));
            lines.push(format!("ista_max_iters={}", c.ista.max_iters));
            lines.push(format!("ista_tol={:?}", c.ista.rel_tol));
            lines.push(format!("ista_step={}", step_name(c.ista.step)));
            (c.seed, c.iters, c.init, c.ridge)
        }
        TrainedModel::Ddlic(m) => {
            let c = &m.config;
            lines.push(format!("alphas={}", join(&c.alphas)));
            if let Some(tol) = c.early_stop {
                lines.push(format!("early_stop={tol:?}"));
            }
            (c.seed, c.iters, c.init, c.ridge)
        }
    };
    lines.push(format!("seed={seed}"));
    lines.push(format!("iters={iters}"));
    lines.push(format!("init={}", init_name(init)));
    lines.push(format!("ridge_eps={:?}", ridge.epsilon_scale));
    for (l, trace) in model.traces().iter().enumerate() {
        lines.push(format!("trace_{}={}", l + 1, join(trace)));
    }
    lines.join("\n") + "\n"
}

pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DdlError::io(dir, e))?;
    fs::write(dir.join("metadata.txt"), metadata(model))
        .map_err(|e| DdlError::io(dir.join("metadata.txt"), e))?;
    for (l, (d, z)) in model.dictionaries().iter().zip(model.layer_reprs()).enumerate() {
        write_matrix_text(d, &dir.join(format!("dictionary_{}.txt", l + 1)))?;
        write_matrix_text(z, &dir.join(format!("repr_{}.txt", l + 1)))?;
    }
    let original: Vec<i64> = model
        .labels()
        .iter()
        .map(|&l| model.class_labels()[l])
        .collect();
    write_labels(&original, &dir.join("labels.txt"))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let meta_path = dir.join("metadata.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| DdlError::io(&meta_path, e))?;
    let meta: BTreeMap<String, String> = parse_key_values(&text)?.into_iter().collect();
    let get = |k: &str| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| DdlError::InvalidData(format!("model metadata lacks {k}")))
    };
    let sizes: Vec<usize> = parse_list("layer_sizes", get("layer_sizes")?)?;
    let depth = sizes.len();
    let mut dictionaries = Vec::with_capacity(depth);
    let mut layer_reprs = Vec::with_capacity(depth);
    let mut traces = Vec::with_capacity(depth);
    for l in 1..=depth {
        dictionaries.push(read_matrix_text(&dir.join(format!("dictionary_{l}.txt")))?);
        layer_reprs.push(read_matrix_text(&dir.join(format!("repr_{l}.txt")))?);
        traces.push(parse_list("trace", meta.get(&format!("trace_{l}")).map_or("", String::as_str))?);
    }
    for (l, (d, &k)) in dictionaries.iter().zip(&sizes).enumerate() {
        if d.ncols() != k {
            return Err(DdlError::InvalidData(format!(
                "dictionary {} has {} atoms, metadata says {k}",
                l + 1,
                d.ncols()
            )));
        }
    }
    let raw_labels = read_labels(&dir.join("labels.txt"))?;
    let labelled = LabeledMatrix::new(Matrix::zeros(1, raw_labels.len()), &raw_labels)?;
    if raw_labels.len() != layer_reprs[depth - 1].ncols() {
        return Err(DdlError::InvalidData(format!(
            "{} labels for {} training representations",
            raw_labels.len(),
            layer_reprs[depth - 1].ncols()
        )));
    }
    let seed = parse_value("seed", get("seed")?)?;
    let iters = parse_value("iters", get("iters")?)?;
    let init = parse_init(get("init")?)?;
    let ridge = RidgePolicy {
        epsilon_scale: parse_value("ridge_eps", get("ridge_eps")?)?,
    };
    match get("method")? {
        "ddl" => {
            let config = TrainConfig {
                layer_sizes: sizes,
                lambda: parse_value("lambda", get("lambda")?)?,
                iters,
                seed,
                init,
                ridge,
                ista: IstaConfig {
                    max_iters: parse_value("ista_max_iters", get("ista_max_iters")?)?,
                    rel_tol: parse_value("ista_tol", get("ista_tol")?)?,
                    step: parse_step(get("ista_step")?)?,
                },
            };
            Ok(TrainedModel::from_ddl(
                DdlModel {
                    dictionaries,
                    layer_reprs,
                    traces,
                    config,
                },
                &labelled,
            ))
        }
        "ddlic" => {
            let early_stop = match meta.get("early_stop") {
                Some(v) => Some(parse_value("early_stop", v)?),
                None => None,
            };
            let config = DdlicConfig {
                layer_sizes: sizes,
                alphas: parse_list("alphas", get("alphas")?)?,
                iters,
                seed,
                init,
                ridge,
                early_stop,
            };
            Ok(TrainedModel::Ddlic(DdlicModel {
                dictionaries,
                layer_reprs,
                traces,
                config,
                labels: labelled.labels().to_vec(),
                class_labels: labelled.class_labels().to_vec(),
            }))
        }
        other => Err(DdlError::InvalidData(format!("unknown model method {other:?}"))),
    }
}
