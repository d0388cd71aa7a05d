//! Deep dictionary learning with an intra-class compactness constraint.
//!
//! Each layer minimizes
//!
//! ```text
//! F(D, Z) = ||Z_prev - D Z||_F²  +  alpha * sum_c sum_{i,j in c} ||z_i - z_j||²
//! ```
//!
//! by alternating two exact block minimizations:
//!
//! * dictionary: `D = Z_prev Zᵀ (Z Zᵀ)⁻¹`;
//! * representations: a Gauss-Seidel sweep over the columns of each class,
//!   `z_k = [DᵀD + 2 alpha (n_c - 1) I]⁻¹ (Dᵀ z_prev_k + 2 alpha sum_{i != k} z_i)`,
//!   always using the latest values of the other columns.
//!
//! Both steps minimize `F` exactly over their block, so the per-layer objective
//! never increases. Layers are trained greedily: the final `Z` of layer `l` is
//! the input of layer `l + 1`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use nalgebra::DVector;

use crate::dataset::LabeledMatrix;
use crate::ddl::{check_input_rows, check_layer, initial_dictionary, validate_layers, InitMode};
pub use crate::ddl::LayerFit;
use crate::error::{DdlError, Result};
use crate::linalg::{factor_spd, ridge_code, solve_least_squares_dictionary, RidgePolicy, SpdFactor};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DdlicConfig {
    pub layer_sizes: Vec<usize>,
    /// Intra-class weight per layer.
    pub alphas: Vec<f64>,
    pub iters: usize,
    pub seed: u64,
    pub init: InitMode,
    pub ridge: RidgePolicy,
    /// Stop a layer early once the relative objective change falls below this.
    pub early_stop: Option<f64>,
}

impl Default for DdlicConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![400, 200, 100],
            alphas: vec![1e-3; 3],
            iters: 20,
            seed: 0,
            init: InitMode::default(),
            ridge: RidgePolicy::default(),
            early_stop: None,
        }
    }
}

impl DdlicConfig {
    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        validate_layers(&self.layer_sizes, self.iters, self.init, input_dim)?;
        if self.alphas.len() != self.layer_sizes.len() {
            return Err(DdlError::InvalidConfig(format!(
                "{} alphas for {} layers",
                self.alphas.len(),
                self.layer_sizes.len()
            )));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(DdlError::InvalidConfig(format!("alpha must be >= 0, got {a}")));
        }
        if let Some(tol) = self.early_stop {
            if tol.is_nan() || tol <= 0.0 {
                return Err(DdlError::InvalidConfig("early-stop tolerance must be > 0".into()));
            }
        }
        self.ridge.validate()
    }
}

fn check_shapes(z_prev: &Matrix, d: &Matrix, z: &Matrix, class_index: &[Vec<usize>]) -> Result<()> {
    if d.nrows() != z_prev.nrows() || d.ncols() != z.nrows() || z.ncols() != z_prev.ncols() {
        return Err(DdlError::DimensionMismatch(format!(
            "input {}x{}, dictionary {}x{}, representation {}x{}",
            z_prev.nrows(),
            z_prev.ncols(),
            d.nrows(),
            d.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    let covered: usize = class_index.iter().map(Vec::len).sum();
    if covered != z.ncols() || class_index.iter().flatten().any(|&c| c >= z.ncols()) {
        return Err(DdlError::DimensionMismatch(format!(
            "class index covers {covered} columns of {}",
            z.ncols()
        )));
    }
    Ok(())
}

/// `sum_c sum_{i,j in c} ||z_i - z_j||²` over ordered pairs, computed as
/// `2 n_c sum_i ||z_i - mean_c||²`.
pub fn intra_class_penalty(z: &Matrix, class_index: &[Vec<usize>]) -> f64 {
    class_index
        .iter()
        .filter(|cols| !cols.is_empty())
        .map(|cols| {
            let block = z.select_columns(cols);
            let mean = block.column_mean();
            let spread: f64 = block.column_iter().map(|c| (c - &mean).norm_squared()).sum();
            2.0 * cols.len() as f64 * spread
        })
        .sum()
}

/// The per-layer objective `F = ||Z_prev - D Z||_F² + alpha * intra_class_penalty(Z)`.
pub fn layer_objective(
    z_prev: &Matrix,
    d: &Matrix,
    z: &Matrix,
    alpha: f64,
    class_index: &[Vec<usize>],
) -> Result<f64> {
    check_shapes(z_prev, d, z, class_index)?;
    let reconstruction = (z_prev - d * z).norm_squared();
    if alpha == 0.0 {
        return Ok(reconstruction);
    }
    Ok(reconstruction + alpha * intra_class_penalty(z, class_index))
}

/// Closed-form dictionary step; `F2` does not involve `D`.
pub fn update_dictionary(z_prev: &Matrix, z: &Matrix, ridge: &RidgePolicy) -> Result<Matrix> {
    solve_least_squares_dictionary(z_prev, z, ridge)
}

/// One Gauss-Seidel sweep of the closed-form column updates, in place.
///
/// `DᵀD + 2 alpha (n_c - 1) I` is factorized once per distinct class size.
pub fn update_representations(
    d: &Matrix,
    z_prev: &Matrix,
    z: &mut Matrix,
    alpha: f64,
    class_index: &[Vec<usize>],
    ridge: &RidgePolicy,
) -> Result<()> {
    check_shapes(z_prev, d, z, class_index)?;
    let gram = d.tr_mul(d);
    let projected = d.tr_mul(z_prev);
    let mut factors: HashMap<usize, SpdFactor> = HashMap::new();
    for cols in class_index {
        let n_c = cols.len();
        if n_c == 0 {
            continue;
        }
        let coupling = 2.0 * alpha * (n_c as f64 - 1.0);
        let factor = match factors.entry(n_c) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let mut system = gram.clone();
                for i in 0..system.nrows() {
                    system[(i, i)] += coupling;
                }
                e.insert(factor_spd(&system, ridge)?)
            }
        };

        let mut class_sum = DVector::<f64>::zeros(z.nrows());
        for &k in cols {
            class_sum += z.column(k);
        }
        for &k in cols {
            let old = z.column(k).into_owned();
            let others = &class_sum - &old;
            let rhs = projected.column(k) + others * (2.0 * alpha);
            let new = factor.solve_vec(&rhs);
            class_sum += &new - &old;
            z.set_column(k, &new);
        }
    }
    Ok(())
}

/// Trains one layer: least-squares code against `init_dict`, then `iters`
/// rounds of dictionary update followed by one representation sweep.
/// The trace holds the objective after each round.
pub fn train_layer(
    z_prev: &Matrix,
    init_dict: &Matrix,
    alpha: f64,
    iters: usize,
    class_index: &[Vec<usize>],
    ridge: &RidgePolicy,
    early_stop: Option<f64>,
) -> Result<LayerFit> {
    if init_dict.nrows() != z_prev.nrows() {
        return Err(DdlError::DimensionMismatch(format!(
            "initial dictionary has {} rows, input has {}",
            init_dict.nrows(),
            z_prev.nrows()
        )));
    }
    let mut code = ridge_code(init_dict, z_prev, ridge)?;
    let mut dictionary = init_dict.clone();
    let mut trace: Vec<f64> = Vec::with_capacity(iters);
    for _ in 0..iters {
        dictionary = update_dictionary(z_prev, &code, ridge)?;
        update_representations(&dictionary, z_prev, &mut code, alpha, class_index, ridge)?;
        let objective = layer_objective(z_prev, &dictionary, &code, alpha, class_index)?;
        let previous = trace.last().copied();
        trace.push(objective);
        if let (Some(tol), Some(prev)) = (early_stop, previous) {
            if (prev - objective).abs() <= tol * prev.abs() {
                break;
            }
        }
    }
    Ok(LayerFit {
        dictionary,
        code,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdlicModel {
    pub dictionaries: Vec<Matrix>,
    /// Training representations `Z_1..Z_L`, columns in training order.
    pub layer_reprs: Vec<Matrix>,
    pub traces: Vec<Vec<f64>>,
    pub config: DdlicConfig,
    /// Internal training labels, one per column of each `Z_l`.
    pub labels: Vec<usize>,
    pub class_labels: Vec<i64>,
}

impl DdlicModel {
    pub fn depth(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dictionaries[0].nrows()
    }

    pub fn train_repr(&self) -> &Matrix {
        self.layer_reprs.last().expect("model has at least one layer")
    }

    /// Layer-by-layer least-squares coding of test columns, stopping at
    /// `layer` (1-based). Returns every intermediate code.
    pub fn code_layers(&self, y: &Matrix, layer: usize) -> Result<Vec<Matrix>> {
        check_layer(layer, self.depth())?;
        check_input_rows(y, self.input_dim())?;
        let mut codes: Vec<Matrix> = Vec::with_capacity(layer);
        for d in &self.dictionaries[..layer] {
            let input = codes.last().unwrap_or(y);
            let next = if input.ncols() == 0 {
                Matrix::zeros(d.ncols(), 0)
            } else {
                ridge_code(d, input, &self.config.ridge)?
            };
            codes.push(next);
        }
        Ok(codes)
    }

    pub fn code_to_layer(&self, y: &Matrix, layer: usize) -> Result<Matrix> {
        Ok(self.code_layers(y, layer)?.pop().expect("layer >= 1"))
    }
}

/// Greedy layer-wise training on a labeled training matrix.
pub fn train_ddlic(train: &LabeledMatrix, cfg: &DdlicConfig) -> Result<DdlicModel> {
    cfg.validate(train.dim())?;
    let class_index = train.class_index();
    let z0 = train.features();
    let mut dictionaries = Vec::with_capacity(cfg.depth());
    let mut layer_reprs: Vec<Matrix> = Vec::with_capacity(cfg.depth());
    let mut traces = Vec::with_capacity(cfg.depth());
    for (layer, (&atoms, &alpha)) in cfg.layer_sizes.iter().zip(&cfg.alphas).enumerate() {
        let input = layer_reprs.last().unwrap_or(z0);
        let init = initial_dictionary(layer, input, atoms, cfg.seed, cfg.init)?;
        let fit = train_layer(input, &init, alpha, cfg.iters, class_index, &cfg.ridge, cfg.early_stop)?;
        dictionaries.push(fit.dictionary);
        layer_reprs.push(fit.code);
        traces.push(fit.trace);
    }
    Ok(DdlicModel {
        dictionaries,
        layer_reprs,
        traces,
        config: cfg.clone(),
        labels: train.labels().to_vec(),
        class_labels: train.class_labels().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddl::train_dense_layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn blocks(sizes: &[usize]) -> Vec<Vec<usize>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let cols = (start..start + n).collect();
                start += n;
                cols
            })
            .collect()
    }

    /// Direct ordered-pair double sum.
    fn penalty_oracle(z: &Matrix, class_index: &[Vec<usize>]) -> f64 {
        let mut total = 0.0;
        for cols in class_index {
            for &i in cols {
                for &j in cols {
                    total += (z.column(i) - z.column(j)).norm_squared();
                }
            }
        }
        total
    }

    #[test]
    fn objective_without_alpha_is_reconstruction() {
        let (zp, d, z) = (gaussian(5, 6, 1), gaussian(5, 3, 2), gaussian(3, 6, 3));
        let ci = blocks(&[2, 4]);
        let f = layer_objective(&zp, &d, &z, 0.0, &ci).unwrap();
        assert!((f - (&zp - &d * &z).norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn objective_zero_when_compact_and_exact() {
        let d = gaussian(4, 2, 4);
        let col = gaussian(2, 1, 5);
        let z = Matrix::from_fn(2, 3, |i, _| col[(i, 0)]);
        let f = layer_objective(&(&d * &z), &d, &z, 0.7, &blocks(&[3])).unwrap();
        assert!(f.abs() < 1e-20);
    }

    #[test]
    fn objective_two_column_example() {
        let z = Matrix::identity(2, 2);
        let d = Matrix::identity(2, 2);
        let f = layer_objective(&z, &d, &z, 0.5, &blocks(&[2])).unwrap();
        assert!((f - 2.0).abs() < 1e-12);
        assert!((penalty_oracle(&z, &blocks(&[2])) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_matches_double_sum() {
        let ci = blocks(&[3, 1, 5]);
        for seed in 0..20 {
            let z = gaussian(4, 9, seed);
            let fast = intra_class_penalty(&z, &ci);
            assert!((fast - penalty_oracle(&z, &ci)).abs() <= 1e-10 * fast.max(1.0));
        }
    }

    #[test]
    fn objective_shape_mismatch() {
        let r = layer_objective(&gaussian(5, 6, 1), &gaussian(4, 3, 2), &gaussian(3, 6, 3), 0.1, &blocks(&[6]));
        assert!(matches!(r, Err(DdlError::DimensionMismatch(_))));
        let r = layer_objective(&gaussian(5, 6, 1), &gaussian(5, 3, 2), &gaussian(3, 6, 3), 0.1, &blocks(&[5]));
        assert!(matches!(r, Err(DdlError::DimensionMismatch(_))));
    }

    #[test]
    fn dictionary_update_with_orthonormal_rows() {
        let z = gaussian(6, 6, 6).qr().q().rows(0, 3).into_owned();
        let zp = gaussian(4, 6, 7);
        let d = update_dictionary(&zp, &z, &Default::default()).unwrap();
        assert!((d - &zp * z.transpose()).amax() < 1e-12);
    }

    #[test]
    fn dictionary_update_never_increases_objective() {
        let ci = blocks(&[4, 4, 4]);
        for seed in 0..100 {
            let zp = gaussian(6, 12, seed);
            let z = gaussian(4, 12, seed + 1000);
            let d0 = gaussian(6, 4, seed + 2000);
            let before = layer_objective(&zp, &d0, &z, 0.1, &ci).unwrap();
            let d = update_dictionary(&zp, &z, &Default::default()).unwrap();
            let after = layer_objective(&zp, &d, &z, 0.1, &ci).unwrap();
            assert!(after <= before * (1.0 + 1e-12));
            // F2 depends on Z only.
            let f2_before = before - (&zp - &d0 * &z).norm_squared();
            let f2_after = after - (&zp - &d * &z).norm_squared();
            assert!((f2_before - f2_after).abs() <= 1e-9 * f2_before);
        }
    }

    #[test]
    fn zero_alpha_sweep_is_least_squares() {
        let d = gaussian(7, 4, 8);
        let zp = gaussian(7, 9, 9);
        let mut z = gaussian(4, 9, 10);
        update_representations(&d, &zp, &mut z, 0.0, &blocks(&[2, 3, 4]), &Default::default()).unwrap();
        let ls = ridge_code(&d, &zp, &Default::default()).unwrap();
        assert!((z - ls).amax() < 1e-10);
    }

    #[test]
    fn singleton_classes_ignore_alpha() {
        let d = gaussian(7, 4, 11);
        let zp = gaussian(7, 5, 12);
        let ci = blocks(&[1, 1, 1, 1, 1]);
        let mut coupled = gaussian(4, 5, 13);
        let mut plain = coupled.clone();
        update_representations(&d, &zp, &mut coupled, 5.0, &ci, &Default::default()).unwrap();
        update_representations(&d, &zp, &mut plain, 0.0, &ci, &Default::default()).unwrap();
        assert!((coupled - plain).amax() < 1e-12);
    }

    #[test]
    fn sweep_never_increases_objective() {
        let ci = blocks(&[3, 5, 2]);
        for seed in 0..50 {
            let d = gaussian(6, 4, seed);
            let zp = gaussian(6, 10, seed + 100);
            let mut z = gaussian(4, 10, seed + 200);
            let alpha = 0.05 * (seed % 5) as f64;
            let before = layer_objective(&zp, &d, &z, alpha, &ci).unwrap();
            update_representations(&d, &zp, &mut z, alpha, &ci, &Default::default()).unwrap();
            let after = layer_objective(&zp, &d, &z, alpha, &ci).unwrap();
            assert!(after <= before * (1.0 + 1e-12), "{before} -> {after}");
        }
    }

    #[test]
    fn single_round_is_one_update_and_one_sweep() {
        let zp = gaussian(6, 8, 20);
        let init = gaussian(6, 3, 21);
        let ci = blocks(&[4, 4]);
        let ridge = RidgePolicy::default();
        let fit = train_layer(&zp, &init, 0.2, 1, &ci, &ridge, None).unwrap();
        let mut z = ridge_code(&init, &zp, &ridge).unwrap();
        let d = update_dictionary(&zp, &z, &ridge).unwrap();
        update_representations(&d, &zp, &mut z, 0.2, &ci, &ridge).unwrap();
        assert_eq!(fit.dictionary, d);
        assert_eq!(fit.code, z);
        assert_eq!(fit.trace.len(), 1);
    }

    #[test]
    fn zero_alpha_layer_matches_dense_baseline_layer() {
        let zp = gaussian(9, 12, 30);
        let init = gaussian(9, 5, 31);
        let ridge = RidgePolicy::default();
        let fit = train_layer(&zp, &init, 0.0, 20, &blocks(&[6, 6]), &ridge, None).unwrap();
        let base = train_dense_layer(&zp, &init, 20, &ridge).unwrap();
        assert!((fit.code - base.code).amax() <= 1e-8);
        assert!((fit.dictionary - base.dictionary).amax() <= 1e-8);
    }

    #[test]
    fn early_stop_shortens_trace() {
        let zp = gaussian(6, 12, 40);
        let init = gaussian(6, 3, 41);
        let ci = blocks(&[6, 6]);
        let fit = train_layer(&zp, &init, 0.1, 20, &ci, &Default::default(), Some(1e-2)).unwrap();
        assert!(fit.trace.len() < 20);
        let full = train_layer(&zp, &init, 0.1, 20, &ci, &Default::default(), None).unwrap();
        assert_eq!(full.trace.len(), 20);
        assert_eq!(full.trace[..fit.trace.len()], fit.trace[..]);
    }

    #[test]
    fn config_validation() {
        let ok = DdlicConfig {
            layer_sizes: vec![3, 2],
            alphas: vec![0.1, 0.0],
            ..Default::default()
        };
        assert!(ok.validate(4).is_ok());
        assert!(DdlicConfig { alphas: vec![0.1], ..ok.clone() }.validate(4).is_err());
        assert!(DdlicConfig { alphas: vec![0.1, -1.0], ..ok.clone() }.validate(4).is_err());
        assert!(DdlicConfig { iters: 0, ..ok.clone() }.validate(4).is_err());
        assert!(ok.validate(2).is_err());
        assert!(DdlicConfig { init: InitMode::Random, ..ok.clone() }.validate(2).is_ok());
        assert!(DdlicConfig { early_stop: Some(0.0), ..ok }.validate(4).is_err());
    }
}
