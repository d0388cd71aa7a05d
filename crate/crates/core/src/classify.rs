//! Test-time coding for DDLIC models and brute-force KNN classification.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::ddlic::DdlicModel;
use crate::error::{DdlError, Result};
use crate::Matrix;

/// Final-layer code of test columns: `Z_t0 = Y`, then `Z_tl` is the
/// least-squares code of `Z_t(l-1)` against `D_l`.
pub fn code_test_ddlic(model: &DdlicModel, y: &Matrix) -> Result<Matrix> {
    model.code_to_layer(y, model.depth())
}

/// How the reported neighbour count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KSelection {
    /// Best test accuracy over the range.
    #[default]
    BestOnTest,
    /// Best leave-one-out accuracy on the training representations; the test
    /// set is only used to report accuracy at that k.
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub selection: KSelection,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 30,
            selection: KSelection::BestOnTest,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(DdlError::InvalidConfig(format!(
                "neighbour range {}..={} must be non-empty and start at >= 1",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Neighbor {
    dist: f64,
    label: usize,
}

/// All training points ordered by (distance, label). Ordering by label among
/// equidistant points makes the selection independent of training order.
fn ranked_neighbors(
    train: &Matrix,
    labels: &[usize],
    point: nalgebra::DVectorView<'_, f64>,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut out: Vec<Neighbor> = train
        .column_iter()
        .zip(labels)
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(_, (col, &label))| {
            let d2: f64 = col.iter().zip(point.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            Neighbor {
                dist: d2.sqrt(),
                label,
            }
        })
        .collect();
    out.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.label.cmp(&b.label)));
    out
}

/// Majority label; ties go to the smaller distance sum, then the smaller label.
fn vote(neighbors: &[Neighbor]) -> usize {
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for n in neighbors {
        let entry = tally.entry(n.label).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += n.dist;
    }
    tally
        .into_iter()
        .min_by(|(la, (ca, sa)), (lb, (cb, sb))| {
            cb.cmp(ca)
                .then_with(|| sa.total_cmp(sb))
                .then_with(|| la.cmp(lb))
        })
        .map(|(label, _)| label)
        .expect("at least one neighbour")
}

fn check_pair(train: &Matrix, labels: &[usize], test: &Matrix) -> Result<()> {
    if labels.len() != train.ncols() {
        return Err(DdlError::DimensionMismatch(format!(
            "{} training labels for {} training columns",
            labels.len(),
            train.ncols()
        )));
    }
    if test.nrows() != train.nrows() {
        return Err(DdlError::DimensionMismatch(format!(
            "test representation has {} rows, training has {}",
            test.nrows(),
            train.nrows()
        )));
    }
    Ok(())
}

/// Euclidean k-nearest-neighbour majority vote.
pub fn knn_predict(
    train_repr: &Matrix,
    train_labels: &[usize],
    test_repr: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    check_pair(train_repr, train_labels, test_repr)?;
    if k == 0 || k > train_repr.ncols() {
        return Err(DdlError::InvalidConfig(format!(
            "k = {k} must be in 1..={}",
            train_repr.ncols()
        )));
    }
    Ok((0..test_repr.ncols())
        .into_par_iter()
        .map(|j| vote(&ranked_neighbors(train_repr, train_labels, test_repr.column(j), None)[..k]))
        .collect())
}

/// Test accuracy for every k in the configured range.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub accuracy_by_k: Vec<(usize, f64)>,
    pub best_k: usize,
    pub best_accuracy: f64,
}

fn curve_hits(ranked: &[Neighbor], truth: usize, ks: &[usize]) -> Vec<bool> {
    ks.iter().map(|&k| vote(&ranked[..k]) == truth).collect()
}

fn tally_accuracy(hits: &[Vec<bool>], n_ks: usize) -> Vec<f64> {
    let total = hits.len() as f64;
    (0..n_ks)
        .map(|i| hits.iter().filter(|h| h[i]).count() as f64 / total)
        .collect()
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best })
}

/// Sweeps k over `cfg`'s range and picks the reported k per `cfg.selection`.
/// The range is clipped to the number of usable training neighbours.
pub fn evaluate_accuracy(
    train_repr: &Matrix,
    train_labels: &[usize],
    test_repr: &Matrix,
    test_labels: &[usize],
    cfg: &KnnConfig,
) -> Result<AccuracyCurve> {
    cfg.validate()?;
    check_pair(train_repr, train_labels, test_repr)?;
    if test_repr.ncols() == 0 {
        return Err(DdlError::EmptyTestSet);
    }
    if test_labels.len() != test_repr.ncols() {
        return Err(DdlError::DimensionMismatch(format!(
            "{} test labels for {} test columns",
            test_labels.len(),
            test_repr.ncols()
        )));
    }
    let usable = match cfg.selection {
        KSelection::BestOnTest => train_repr.ncols(),
        KSelection::LeaveOneOut => train_repr.ncols().saturating_sub(1),
    };
    let ks: Vec<usize> = (cfg.k_min..=cfg.k_max.min(usable)).collect();
    if ks.is_empty() {
        return Err(DdlError::InvalidConfig(format!(
            "no k in {}..={} fits {} training samples",
            cfg.k_min,
            cfg.k_max,
            train_repr.ncols()
        )));
    }

    let test_hits: Vec<Vec<bool>> = (0..test_repr.ncols())
        .into_par_iter()
        .map(|j| {
            let ranked = ranked_neighbors(train_repr, train_labels, test_repr.column(j), None);
            curve_hits(&ranked, test_labels[j], &ks)
        })
        .collect();
    let test_acc = tally_accuracy(&test_hits, ks.len());

    let chosen = match cfg.selection {
        KSelection::BestOnTest => argmax(&test_acc),
        KSelection::LeaveOneOut => {
            let loo_hits: Vec<Vec<bool>> = (0..train_repr.ncols())
                .into_par_iter()
                .map(|j| {
                    let ranked =
                        ranked_neighbors(train_repr, train_labels, train_repr.column(j), Some(j));
                    curve_hits(&ranked, train_labels[j], &ks)
                })
                .collect();
            argmax(&tally_accuracy(&loo_hits, ks.len()))
        }
    };
    Ok(AccuracyCurve {
        accuracy_by_k: ks.iter().copied().zip(test_acc.iter().copied()).collect(),
        best_k: ks[chosen],
        best_accuracy: test_acc[chosen],
    })
}

/// Accuracy at a fixed k.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic_clusters;
    use crate::ddlic::{train_ddlic, DdlicConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn nearest_identical_point_wins() {
        let train = gaussian(3, 10, 1);
        let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
        let test = train.columns(6, 1).into_owned();
        assert_eq!(knn_predict(&train, &labels, &test, 1).unwrap(), vec![labels[6]]);
    }

    #[test]
    fn equidistant_tie_goes_to_smaller_label() {
        let train = Matrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let test = Matrix::zeros(1, 1);
        assert_eq!(knn_predict(&train, &[1, 0], &test, 2).unwrap(), vec![0]);
        assert_eq!(knn_predict(&train, &[0, 1], &test, 2).unwrap(), vec![0]);
    }

    #[test]
    fn count_tie_broken_by_distance_sum() {
        // Two votes each; label 1's voters are closer in total.
        let train = Matrix::from_row_slice(1, 4, &[1.0, 1.5, -1.2, -1.2]);
        let test = Matrix::zeros(1, 1);
        assert_eq!(knn_predict(&train, &[1, 0, 0, 1], &test, 4).unwrap(), vec![1]);
    }

    #[test]
    fn k_out_of_range() {
        let train = gaussian(2, 3, 2);
        let test = gaussian(2, 1, 3);
        assert!(knn_predict(&train, &[0, 1, 0], &test, 4).is_err());
        assert!(knn_predict(&train, &[0, 1, 0], &test, 0).is_err());
        assert!(knn_predict(&train, &[0, 1], &test, 1).is_err());
    }

    #[test]
    fn separated_clusters_are_perfect_below_cluster_size() {
        let data = make_synthetic_clusters(3, 20, 5, 50.0, 4).unwrap();
        let cfg = KnnConfig { k_min: 1, k_max: 19, ..Default::default() };
        let train = data.features().clone();
        let curve = evaluate_accuracy(&train, data.labels(), &train, data.labels(), &cfg).unwrap();
        assert!(curve.accuracy_by_k.iter().all(|&(_, a)| a == 1.0));
        assert_eq!(curve.best_k, 1);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let train = gaussian(2, 4, 5);
        let r = evaluate_accuracy(&train, &[0, 0, 1, 1], &Matrix::zeros(2, 0), &[], &Default::default());
        assert!(matches!(r, Err(DdlError::EmptyTestSet)));
        assert_eq!(r.unwrap_err().to_string(), "empty test set");
    }

    #[test]
    fn best_is_max_of_curve_and_range_is_clipped() {
        let data = make_synthetic_clusters(2, 12, 4, 1.5, 6).unwrap();
        let (train, test) = (data.features().columns(0, 24).into_owned(), gaussian(4, 9, 7));
        let test_labels: Vec<usize> = (0..9).map(|i| i % 2).collect();
        let curve = evaluate_accuracy(&train, data.labels(), &test, &test_labels, &Default::default()).unwrap();
        assert_eq!(curve.accuracy_by_k.len(), 24);
        let max = curve.accuracy_by_k.iter().map(|p| p.1).fold(0.0, f64::max);
        assert_eq!(curve.best_accuracy, max);
        assert_eq!(curve.accuracy_by_k[curve.best_k - 1].1, max);
    }

    #[test]
    fn leave_one_out_selection_reports_test_accuracy_at_chosen_k() {
        let data = make_synthetic_clusters(3, 15, 4, 2.0, 8).unwrap();
        let test = make_synthetic_clusters(3, 10, 4, 2.0, 8).unwrap();
        let cfg = KnnConfig { selection: KSelection::LeaveOneOut, ..Default::default() };
        let curve = evaluate_accuracy(data.features(), data.labels(), test.features(), test.labels(), &cfg).unwrap();
        assert_eq!(curve.accuracy_by_k.len(), 30);
        let at_k = curve.accuracy_by_k.iter().find(|p| p.0 == curve.best_k).unwrap().1;
        assert_eq!(at_k, curve.best_accuracy);
    }

    #[test]
    fn orthonormal_dictionaries_compose_projections() {
        let data = make_synthetic_clusters(2, 6, 8, 3.0, 9).unwrap();
        let cfg = DdlicConfig { layer_sizes: vec![6, 4], alphas: vec![0.1, 0.1], iters: 2, ..Default::default() };
        let mut model = train_ddlic(&data, &cfg).unwrap();
        model.dictionaries = vec![gaussian(8, 6, 10).qr().q(), gaussian(6, 4, 11).qr().q()];
        let y = gaussian(8, 5, 12);
        let z = code_test_ddlic(&model, &y).unwrap();
        let expected = model.dictionaries[1].tr_mul(&model.dictionaries[0].tr_mul(&y));
        assert!((z - expected).amax() < 1e-12);
    }

    #[test]
    fn layered_coding_recovers_generating_code() {
        let data = make_synthetic_clusters(2, 6, 8, 3.0, 13).unwrap();
        let cfg = DdlicConfig { layer_sizes: vec![6, 4], alphas: vec![0.0, 0.0], iters: 1, ..Default::default() };
        let mut model = train_ddlic(&data, &cfg).unwrap();
        model.dictionaries = vec![gaussian(8, 6, 14), gaussian(6, 4, 15)];
        let w = gaussian(4, 3, 16);
        let y = &model.dictionaries[0] * (&model.dictionaries[1] * &w);
        let z = code_test_ddlic(&model, &y).unwrap();
        assert!((z - w).amax() < 1e-6);
        assert!(code_test_ddlic(&model, &gaussian(7, 1, 0)).is_err());
        assert_eq!(code_test_ddlic(&model, &Matrix::zeros(8, 0)).unwrap().shape(), (4, 0));
    }

    #[test]
    fn training_column_reproduces_its_code_only_without_alpha() {
        let data = make_synthetic_clusters(3, 8, 10, 3.0, 17).unwrap();
        let base = DdlicConfig { layer_sizes: vec![8, 6, 4], alphas: vec![0.0; 3], iters: 5, ..Default::default() };
        let model = train_ddlic(&data, &base).unwrap();
        let z = code_test_ddlic(&model, data.features()).unwrap();
        assert!((&z - model.train_repr()).amax() <= 1e-5);

        let tuned = DdlicConfig { alphas: vec![0.1; 3], ..base };
        let model = train_ddlic(&data, &tuned).unwrap();
        let z = code_test_ddlic(&model, data.features()).unwrap();
        assert!((&z - model.train_repr()).amax() > 1e-5);
    }

    #[test]
    fn residual_is_orthogonal_to_each_dictionary() {
        let data = make_synthetic_clusters(3, 10, 12, 3.0, 18).unwrap();
        let cfg = DdlicConfig { layer_sizes: vec![9, 6, 3], alphas: vec![0.01; 3], iters: 3, ..Default::default() };
        let model = train_ddlic(&data, &cfg).unwrap();
        let y = gaussian(12, 7, 19);
        let codes = model.code_layers(&y, 3).unwrap();
        let mut input = &y;
        for (d, code) in model.dictionaries.iter().zip(&codes) {
            let residual = input - d * code;
            assert!(d.tr_mul(&residual).norm() <= 1e-6 * input.norm());
            input = code;
        }
    }
}
