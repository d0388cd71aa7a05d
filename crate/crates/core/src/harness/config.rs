use std::fs;
use std::path::{Path, PathBuf};

use crate::classify::{KSelection, KnnConfig};
use crate::dataset::{load_labeled_matrix, make_synthetic_clusters, DataFormat, LabeledMatrix};
use crate::ddl::{InitMode, TrainConfig};
use crate::ddlic::DdlicConfig;
use crate::error::{DdlError, Result};
use crate::linalg::{IstaConfig, RidgePolicy};
use crate::model_io::{parse_init, parse_key_values, parse_list, parse_step, parse_value, step_name};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Ddl,
    #[default]
    Ddlic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ddl => "ddl",
            Method::Ddlic => "ddlic",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = DdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddl" => Ok(Method::Ddl),
            "ddlic" => Ok(Method::Ddlic),
            other => Err(DdlError::InvalidConfig(format!(
                "unknown method {other:?} (expected ddl or ddlic)"
            ))),
        }
    }
}

/// How alpha combinations are enumerated by the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    /// One value shared by all layers: `|grid|` evaluations.
    #[default]
    Shared,
    /// Full per-layer Cartesian product: `|grid|^depth` evaluations.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 40,
            dim: 20,
            separation: 6.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File {
        path: PathBuf,
        format: DataFormat,
        normalize: bool,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<LabeledMatrix> {
        match self {
            DataSource::File {
                path,
                format,
                normalize,
            } => {
                let data = load_labeled_matrix(path, format)?;
                Ok(if *normalize {
                    data.normalized_columns()
                } else {
                    data
                })
            }
            DataSource::Synthetic(s) => {
                make_synthetic_clusters(s.classes, s.per_class, s.dim, s.separation, s.seed)
            }
        }
    }
}

/// Everything needed to run the repeated-split protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: Option<DataSource>,
    pub method: Method,
    pub layer_sizes: Vec<usize>,
    /// One value (shared by every layer) or one per layer.
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub iters: usize,
    pub seed: u64,
    pub init: InitMode,
    pub ridge: RidgePolicy,
    pub ista: IstaConfig,
    pub early_stop: Option<f64>,
    /// Training samples per class in every split.
    pub per_class_train: usize,
    pub replicates: usize,
    pub alpha_grid: Vec<f64>,
    pub grid_mode: GridMode,
    pub knn: KnnConfig,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            method: Method::Ddlic,
            layer_sizes: vec![400, 200, 100],
            alphas: vec![1e-3],
            lambda: 0.1,
            iters: 20,
            seed: 0,
            init: InitMode::default(),
            ridge: RidgePolicy::default(),
            ista: IstaConfig::default(),
            early_stop: None,
            per_class_train: 10,
            replicates: 10,
            alpha_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.2],
            grid_mode: GridMode::Shared,
            knn: KnnConfig::default(),
            workers: 0,
            out_dir: None,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(DdlError::InvalidConfig(format!("bad value for {key}: {value:?}"))),
    }
}

impl ExperimentConfig {
    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Per-layer alphas, broadcasting a single shared value.
    pub fn resolved_alphas(&self) -> Vec<f64> {
        if self.alphas.len() == 1 {
            vec![self.alphas[0]; self.depth()]
        } else {
            self.alphas.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() {
            return Err(DdlError::InvalidConfig("no dataset configured".into()));
        }
        if self.replicates == 0 {
            return Err(DdlError::InvalidConfig("replicates must be >= 1".into()));
        }
        if self.alphas.len() != 1 && self.alphas.len() != self.depth() {
            return Err(DdlError::InvalidConfig(format!(
                "{} alphas for depth {}",
                self.alphas.len(),
                self.depth()
            )));
        }
        self.knn.validate()?;
        self.ridge.validate()?;
        self.ista.validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            layer_sizes: self.layer_sizes.clone(),
            lambda: self.lambda,
            iters: self.iters,
            seed,
            init: self.init,
            ridge: self.ridge,
            ista: self.ista,
        }
    }

    pub fn ddlic_config(&self, seed: u64) -> DdlicConfig {
        DdlicConfig {
            layer_sizes: self.layer_sizes.clone(),
            alphas: self.resolved_alphas(),
            iters: self.iters,
            seed,
            init: self.init,
            ridge: self.ridge,
            early_stop: self.early_stop,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DdlError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    fn synthetic_mut(&mut self) -> &mut SyntheticSpec {
        if !matches!(self.data, Some(DataSource::Synthetic(_))) {
            self.data = Some(DataSource::Synthetic(SyntheticSpec::default()));
        }
        match &mut self.data {
            Some(DataSource::Synthetic(s)) => s,
            _ => unreachable!(),
        }
    }

    fn file_mut(&mut self) -> Result<(&mut DataFormat, &mut bool)> {
        match &mut self.data {
            Some(DataSource::File {
                format, normalize, ..
            }) => Ok((format, normalize)),
            _ => Err(DdlError::InvalidConfig(
                "set data=<path> before format, labels or normalize".into(),
            )),
        }
    }

    /// Sets one configuration key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" if value == "synthetic" => {
                self.synthetic_mut();
            }
            "data" => {
                self.data = Some(DataSource::File {
                    path: PathBuf::from(value),
                    format: DataFormat::Dense,
                    normalize: false,
                })
            }
            "format" => {
                let (format, _) = self.file_mut()?;
                match value {
                    "dense" => *format = DataFormat::Dense,
                    "pair" => {
                        if !matches!(format, DataFormat::MatrixPair { .. }) {
                            *format = DataFormat::MatrixPair {
                                labels: PathBuf::new(),
                            }
                        }
                    }
                    other => {
                        return Err(DdlError::InvalidConfig(format!(
                            "unknown format {other:?} (expected dense or pair)"
                        )))
                    }
                }
            }
            "labels" => {
                let (format, _) = self.file_mut()?;
                *format = DataFormat::MatrixPair {
                    labels: PathBuf::from(value),
                };
            }
            "normalize" => *self.file_mut()?.1 = parse_bool(key, value)?,
            "synthetic.classes" => self.synthetic_mut().classes = parse_value(key, value)?,
            "synthetic.per_class" => self.synthetic_mut().per_class = parse_value(key, value)?,
            "synthetic.dim" => self.synthetic_mut().dim = parse_value(key, value)?,
            "synthetic.separation" => self.synthetic_mut().separation = parse_value(key, value)?,
            "synthetic.seed" => self.synthetic_mut().seed = parse_value(key, value)?,
            "method" => self.method = value.parse()?,
            "layer_sizes" => self.layer_sizes = parse_list(key, value)?,
            "depth" => {
                let depth: usize = parse_value(key, value)?;
                if depth != self.depth() {
                    return Err(DdlError::InvalidConfig(format!(
                        "depth {depth} disagrees with layer_sizes {:?}",
                        self.layer_sizes
                    )));
                }
            }
            "alphas" => self.alphas = parse_list(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "iters" => self.iters = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "init" => self.init = parse_init(value)?,
            "ridge_eps" => self.ridge.epsilon_scale = parse_value(key, value)?,
            "ista_max_iters" => self.ista.max_iters = parse_value(key, value)?,
            "ista_tol" => self.ista.rel_tol = parse_value(key, value)?,
            "ista_step" => self.ista.step = parse_step(value)?,
            "early_stop" => {
                self.early_stop = match value {
                    "none" | "off" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "h" => self.per_class_train = parse_value(key, value)?,
            "replicates" => self.replicates = parse_value(key, value)?,
            "alpha_grid" => self.alpha_grid = parse_list(key, value)?,
            "grid_mode" => {
                self.grid_mode = match value {
                    "shared" => GridMode::Shared,
                    "per_layer" | "full" => GridMode::PerLayer,
                    other => {
                        return Err(DdlError::InvalidConfig(format!(
                            "unknown grid mode {other:?} (expected shared or per_layer)"
                        )))
                    }
                }
            }
            "knn_min" => self.knn.k_min = parse_value(key, value)?,
            "knn_max" => self.knn.k_max = parse_value(key, value)?,
            "k_selection" => {
                self.knn.selection = match value {
                    "test" => KSelection::BestOnTest,
                    "loo" => KSelection::LeaveOneOut,
                    other => {
                        return Err(DdlError::InvalidConfig(format!(
                            "unknown k selection {other:?} (expected test or loo)"
                        )))
                    }
                }
            }
            "workers" => self.workers = parse_value(key, value)?,
            "out" => self.out_dir = Some(PathBuf::from(value)),
            other => {
                return Err(DdlError::InvalidConfig(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// The fully resolved configuration as `key=value` lines; feeding it back
    /// through [`ExperimentConfig::apply_text`] reproduces this value.
    /// `workers` and `out` are omitted: they do not affect results.
    pub fn to_key_values(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = Vec::new();
        match &self.data {
            Some(DataSource::File {
                path,
                format,
                normalize,
            }) => {
                lines.push(format!("data={}", path.display()));
                match format {
                    DataFormat::Dense => lines.push("format=dense".into()),
                    DataFormat::MatrixPair { labels } => {
                        lines.push(format!("labels={}", labels.display()))
                    }
                }
                lines.push(format!("normalize={normalize}"));
            }
            Some(DataSource::Synthetic(s)) => {
                lines.push("data=synthetic".into());
                lines.push(format!("synthetic.classes={}", s.classes));
                lines.push(format!("synthetic.per_class={}", s.per_class));
                lines.push(format!("synthetic.dim={}", s.dim));
                lines.push(format!("synthetic.separation={:?}", s.separation));
                lines.push(format!("synthetic.seed={}", s.seed));
            }
            None => {}
        }
        lines.push(format!("method={}", self.method.name()));
        lines.push(format!(
            "layer_sizes={}",
            self.layer_sizes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        ));
        lines.push(format!("alphas={}", list(&self.alphas)));
        lines.push(format!("lambda={:?}", self.lambda));
        lines.push(format!("iters={}", self.iters));
        lines.push(format!("seed={}", self.seed));
        lines.push(format!(
            "init={}",
            match self.init {
                InitMode::QrFirstRandomRest => "qr",
                InitMode::Random => "random",
            }
        ));
        lines.push(format!("ridge_eps={:?}", self.ridge.epsilon_scale));
        lines.push(format!("ista_max_iters={}", self.ista.max_iters));
        lines.push(format!("ista_tol={:?}", self.ista.rel_tol));
        lines.push(format!("ista_step={}", step_name(self.ista.step)));
        lines.push(match self.early_stop {
            Some(t) => format!("early_stop={t:?}"),
            None => "early_stop=none".into(),
        });
        lines.push(format!("h={}", self.per_class_train));
        lines.push(format!("replicates={}", self.replicates));
        lines.push(format!("alpha_grid={}", list(&self.alpha_grid)));
        lines.push(format!(
            "grid_mode={}",
            match self.grid_mode {
                GridMode::Shared => "shared",
                GridMode::PerLayer => "per_layer",
            }
        ));
        lines.push(format!("knn_min={}", self.knn.k_min));
        lines.push(format!("knn_max={}", self.knn.k_max));
        lines.push(format!(
            "k_selection={}",
            match self.knn.selection {
                KSelection::BestOnTest => "test",
                KSelection::LeaveOneOut => "loo",
            }
        ));
        lines.join("\n") + "\n"
    }
}
