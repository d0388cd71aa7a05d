//! Unsupervised deep dictionary learning baseline.
//!
//! Layers are trained greedily with identity activation. Layers `1..L-1`
//! alternate the closed-form dictionary solve with least-squares coding; the
//! last layer alternates the dictionary solve with ISTA sparse coding. Test
//! samples are sparse-coded against the product dictionary `D_1 D_2 ... D_L`.

use crate::error::{DdlError, Result};
use crate::linalg::{
    derive_seed, ista_solve, qr_orthonormal_init, random_dictionary_init, ridge_code,
    solve_least_squares_dictionary, sparse_objective, IstaConfig, RidgePolicy,
};
use crate::Matrix;

/// How each layer's dictionary is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// QR of the training matrix for layer 1, random unit-norm Gaussian atoms after.
    #[default]
    QrFirstRandomRest,
    /// Random unit-norm Gaussian atoms at every layer.
    Random,
}

/// Dictionary for layer `layer` (0-based) given that layer's input.
pub fn initial_dictionary(
    layer: usize,
    input: &Matrix,
    atoms: usize,
    seed: u64,
    mode: InitMode,
) -> Result<Matrix> {
    let layer_seed = derive_seed(seed, layer as u64);
    match (layer, mode) {
        (0, InitMode::QrFirstRandomRest) => qr_orthonormal_init(input, atoms, layer_seed),
        _ => random_dictionary_init(input.nrows(), atoms, layer_seed),
    }
}

/// One trained layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFit {
    pub dictionary: Matrix,
    pub code: Matrix,
    /// Layer objective after each iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Atoms per layer, `k_1..k_L`; the depth is its length.
    pub layer_sizes: Vec<usize>,
    /// Sparsity weight of the final layer and of test coding.
    pub lambda: f64,
    pub iters: usize,
    pub seed: u64,
    pub init: InitMode,
    pub ridge: RidgePolicy,
    pub ista: IstaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![400, 200, 100],
            lambda: 0.1,
            iters: 20,
            seed: 0,
            init: InitMode::default(),
            ridge: RidgePolicy::default(),
            ista: IstaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        validate_layers(&self.layer_sizes, self.iters, self.init, input_dim)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DdlError::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        self.ridge.validate()?;
        self.ista.validate()
    }
}

pub(crate) fn validate_layers(
    layer_sizes: &[usize],
    iters: usize,
    init: InitMode,
    input_dim: usize,
) -> Result<()> {
    if layer_sizes.is_empty() {
        return Err(DdlError::InvalidConfig("depth must be at least 1".into()));
    }
    if layer_sizes.contains(&0) {
        return Err(DdlError::InvalidConfig("layer sizes must be >= 1".into()));
    }
    if iters == 0 {
        return Err(DdlError::InvalidConfig(
            "iterations per layer must be >= 1".into(),
        ));
    }
    if init == InitMode::QrFirstRandomRest && layer_sizes[0] > input_dim {
        return Err(DdlError::InvalidConfig(format!(
            "QR initialization needs k1 <= input dimension ({} > {input_dim})",
            layer_sizes[0]
        )));
    }
    Ok(())
}

/// Dense layer: alternate the dictionary solve and least-squares coding.
/// The code starts as the least-squares code against `init_dict`.
pub fn train_dense_layer(
    z_prev: &Matrix,
    init_dict: &Matrix,
    iters: usize,
    ridge: &RidgePolicy,
) -> Result<LayerFit> {
    let mut code = ridge_code(init_dict, z_prev, ridge)?;
    let mut dictionary = init_dict.clone();
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        dictionary = solve_least_squares_dictionary(z_prev, &code, ridge)?;
        code = ridge_code(&dictionary, z_prev, ridge)?;
        trace.push((z_prev - &dictionary * &code).norm_squared());
    }
    Ok(LayerFit {
        dictionary,
        code,
        trace,
    })
}

/// Final layer: alternate the dictionary solve and warm-started ISTA.
/// With `lambda == 0` this is exactly [`train_dense_layer`].
pub fn train_sparse_layer(
    z_prev: &Matrix,
    init_dict: &Matrix,
    iters: usize,
    lambda: f64,
    ridge: &RidgePolicy,
    ista: &IstaConfig,
) -> Result<LayerFit> {
    if lambda == 0.0 {
        return train_dense_layer(z_prev, init_dict, iters, ridge);
    }
    let mut code = ridge_code(init_dict, z_prev, ridge)?;
    let mut dictionary = init_dict.clone();
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        dictionary = solve_least_squares_dictionary(z_prev, &code, ridge)?;
        code = ista_solve(&dictionary, z_prev, lambda, ista, Some(&code))?.code;
        trace.push(sparse_objective(&dictionary, z_prev, &code, lambda));
    }
    Ok(LayerFit {
        dictionary,
        code,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdlModel {
    pub dictionaries: Vec<Matrix>,
    /// Training representations `Z_1..Z_L`; the last one is the classifier input.
    pub layer_reprs: Vec<Matrix>,
    pub traces: Vec<Vec<f64>>,
    pub config: TrainConfig,
}

impl DdlModel {
    pub fn depth(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.dictionaries.iter().map(|d| d.ncols()).collect()
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn input_dim(&self) -> usize {
        self.dictionaries[0].nrows()
    }

    /// `Z_L` of the training set.
    pub fn train_repr(&self) -> &Matrix {
        self.layer_reprs.last().expect("model has at least one layer")
    }

    /// `D_1 D_2 ... D_upto` (1-based, inclusive).
    pub fn product_dictionary(&self, upto: usize) -> Matrix {
        let mut product = self.dictionaries[0].clone();
        for d in &self.dictionaries[1..upto] {
            product *= d;
        }
        product
    }

    /// Test representation at layer `layer` (1-based). The last layer uses the
    /// sparse product-dictionary coding; shallower layers are dense and use
    /// least squares against the truncated product.
    pub fn code_to_layer(&self, y: &Matrix, layer: usize) -> Result<Matrix> {
        check_layer(layer, self.depth())?;
        if layer == self.depth() {
            return code_test_ddl(self, y);
        }
        check_input_rows(y, self.input_dim())?;
        ridge_code(&self.product_dictionary(layer), y, &self.config.ridge)
    }
}

pub(crate) fn check_layer(layer: usize, depth: usize) -> Result<()> {
    if layer == 0 || layer > depth {
        return Err(DdlError::InvalidConfig(format!(
            "layer {layer} outside 1..={depth}"
        )));
    }
    Ok(())
}

pub(crate) fn check_input_rows(y: &Matrix, dim: usize) -> Result<()> {
    if y.nrows() != dim {
        return Err(DdlError::DimensionMismatch(format!(
            "test data has {} rows, model expects {dim}",
            y.nrows()
        )));
    }
    Ok(())
}

/// Trains the baseline on `z0` (samples as columns).
pub fn train_ddl(z0: &Matrix, cfg: &TrainConfig) -> Result<DdlModel> {
    cfg.validate(z0.nrows())?;
    let depth = cfg.depth();
    let mut dictionaries = Vec::with_capacity(depth);
    let mut layer_reprs: Vec<Matrix> = Vec::with_capacity(depth);
    let mut traces = Vec::with_capacity(depth);
    for (layer, &atoms) in cfg.layer_sizes.iter().enumerate() {
        let input = layer_reprs.last().unwrap_or(z0);
        let init = initial_dictionary(layer, input, atoms, cfg.seed, cfg.init)?;
        let fit = if layer + 1 < depth {
            train_dense_layer(input, &init, cfg.iters, &cfg.ridge)?
        } else {
            train_sparse_layer(input, &init, cfg.iters, cfg.lambda, &cfg.ridge, &cfg.ista)?
        };
        dictionaries.push(fit.dictionary);
        layer_reprs.push(fit.code);
        traces.push(fit.trace);
    }
    Ok(DdlModel {
        dictionaries,
        layer_reprs,
        traces,
        config: cfg.clone(),
    })
}

/// Sparse codes of test columns `y` against `D_1 ... D_L`.
pub fn code_test_ddl(model: &DdlModel, y: &Matrix) -> Result<Matrix> {
    check_input_rows(y, model.input_dim())?;
    let product = model.product_dictionary(model.depth());
    if y.ncols() == 0 {
        return Ok(Matrix::zeros(product.ncols(), 0));
    }
    if model.lambda() == 0.0 {
        return ridge_code(&product, y, &model.config.ridge);
    }
    Ok(ista_solve(&product, y, model.lambda(), &model.config.ista, None)?.code)
}
