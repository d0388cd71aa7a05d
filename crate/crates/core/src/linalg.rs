//! Numerical kernels shared by both trainers: Gram-matrix solves with ridge
//! fallback, orthonormal and random dictionary initialization, and ISTA.

use nalgebra::{Cholesky, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DdlError, Result};
use crate::Matrix;

/// Cholesky factors whose squared diagonal spread exceeds this are treated as
/// numerically singular.
const CONDITION_LIMIT: f64 = 1e12;

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-8;

/// SplitMix64 finalizer over `base ^ mix(stream)`; used to derive independent
/// per-layer / per-replicate RNG seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream))
}

/// Ridge added to a Gram matrix `G` that is too ill-conditioned to factor
/// directly: `epsilon_scale * mean(diag(G)) * I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgePolicy {
    pub epsilon_scale: f64,
}

impl Default for RidgePolicy {
    fn default() -> Self {
        Self {
            epsilon_scale: 1e-10,
        }
    }
}

impl RidgePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon_scale >= 0.0 && self.epsilon_scale.is_finite() {
            Ok(())
        } else {
            Err(DdlError::InvalidConfig(format!(
                "ridge epsilon scale must be >= 0, got {}",
                self.epsilon_scale
            )))
        }
    }
}

/// A factorized symmetric positive semi-definite matrix, ready for repeated solves.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Used only when Cholesky fails even after the ridge is added.
    PseudoInverse(Matrix),
}

impl SpdFactor {
    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        match self {
            SpdFactor::Cholesky(c) => c.solve(rhs),
            SpdFactor::PseudoInverse(p) => p * rhs,
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(rhs),
            SpdFactor::PseudoInverse(p) => p * rhs,
        }
    }

    pub fn is_pseudo_inverse(&self) -> bool {
        matches!(self, SpdFactor::PseudoInverse(_))
    }
}

fn well_conditioned(chol: &Cholesky<f64, Dyn>) -> bool {
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    lo.is_finite() && hi > 0.0 && (hi / lo).powi(2) < CONDITION_LIMIT
}

/// Factorizes a symmetric PSD Gram matrix.
///
/// Plain Cholesky first; if it fails or looks singular, Cholesky of
/// `G + ridge * I`; if that fails too, an SVD pseudo-inverse.
pub fn factor_spd(gram: &Matrix, policy: &RidgePolicy) -> Result<SpdFactor> {
    if !gram.is_square() {
        return Err(DdlError::DimensionMismatch(format!(
            "Gram matrix must be square, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let n = gram.nrows();
    if n == 0 {
        return Ok(SpdFactor::PseudoInverse(Matrix::zeros(0, 0)));
    }
    if let Some(chol) = Cholesky::new(gram.clone()) {
        if well_conditioned(&chol) {
            return Ok(SpdFactor::Cholesky(chol));
        }
    }
    let ridge = policy.epsilon_scale * gram.trace() / n as f64;
    if ridge > 0.0 && ridge.is_finite() {
        let mut shifted = gram.clone();
        for i in 0..n {
            shifted[(i, i)] += ridge;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(SpdFactor::Cholesky(chol));
        }
    }
    let svd = gram.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * n as f64 * f64::EPSILON;
    svd.pseudo_inverse(cutoff)
        .map(SpdFactor::PseudoInverse)
        .map_err(|e| DdlError::Factorization(e.to_string()))
}

/// `D = Z_prev Zᵀ (Z Zᵀ)⁻¹`, the minimizer of `||Z_prev - D Z||_F²` over `D`.
pub fn solve_least_squares_dictionary(
    z_prev: &Matrix,
    z: &Matrix,
    policy: &RidgePolicy,
) -> Result<Matrix> {
    if z_prev.ncols() != z.ncols() {
        return Err(DdlError::DimensionMismatch(format!(
            "input has {} columns, representation has {}",
            z_prev.ncols(),
            z.ncols()
        )));
    }
    if z.nrows() == 0 {
        return Err(DdlError::DimensionMismatch(
            "representation has no rows".into(),
        ));
    }
    let gram = z * z.transpose();
    let cross = z * z_prev.transpose();
    let factor = factor_spd(&gram, policy)?;
    Ok(factor.solve(&cross).transpose())
}

/// Least-squares codes of the columns of `x` against `d`: `(DᵀD)⁻¹ Dᵀ X`.
pub fn ridge_code(d: &Matrix, x: &Matrix, policy: &RidgePolicy) -> Result<Matrix> {
    if d.nrows() != x.nrows() {
        return Err(DdlError::DimensionMismatch(format!(
            "dictionary has {} rows, data has {}",
            d.nrows(),
            x.nrows()
        )));
    }
    let factor = factor_spd(&d.tr_mul(d), policy)?;
    Ok(factor.solve(&d.tr_mul(x)))
}

/// Orthonormal columns built by Gram-Schmidt (with re-orthogonalization) over
/// the columns of `source` in order, skipping dependent ones, and padded with
/// random directions from `rng` when `source` has rank below `k`.
/// Requires `k <= source.nrows()`.
pub(crate) fn orthonormalize_columns<R: Rng>(source: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = source.nrows();
    debug_assert!(k <= n);
    let scale = source
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    let mut basis = Matrix::zeros(n, k);
    let mut found = 0;

    let accept = |v: DVector<f64>, reference: f64, basis: &mut Matrix, found: &mut usize| {
        let mut v = v;
        for _ in 0..2 {
            for j in 0..*found {
                let q = basis.column(j);
                let proj = q.dot(&v);
                v.axpy(-proj, &q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * reference && norm > 0.0 {
            basis.column_mut(*found).copy_from(&(v / norm));
            *found += 1;
        }
    };

    for col in source.column_iter() {
        if found == k {
            break;
        }
        accept(col.into_owned(), scale, &mut basis, &mut found);
    }
    while found < k {
        let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let reference = v.norm();
        accept(v, reference, &mut basis, &mut found);
    }
    basis
}

/// First `k1` columns of an orthonormal basis obtained by QR of `z0`'s
/// columns, padded with seeded random directions if `rank(z0) < k1`.
pub fn qr_orthonormal_init(z0: &Matrix, k1: usize, seed: u64) -> Result<Matrix> {
    if k1 > z0.nrows() {
        return Err(DdlError::InvalidConfig(format!(
            "QR initialization needs k1 <= input dimension, got k1 = {k1} > {}",
            z0.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(orthonormalize_columns(z0, k1, &mut rng))
}

/// I.i.d. standard normal entries with each column scaled to unit norm.
pub fn random_dictionary_init(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(DdlError::InvalidConfig(format!(
            "dictionary shape must be positive, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Matrix::zeros(rows, cols);
    for mut col in d.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                break;
            }
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / lambda_max(DᵀD)`, estimated by power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    pub max_iters: usize,
    /// Stop once `||Z_new - Z||_F <= rel_tol * max(||Z||_F, tiny)`.
    pub rel_tol: f64,
    pub step: StepSize,
}

impl Default for IstaConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-6,
            step: StepSize::Auto,
        }
    }
}

impl IstaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(DdlError::InvalidConfig("ISTA max_iters must be >= 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(DdlError::InvalidConfig("ISTA rel_tol must be > 0".into()));
        }
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(DdlError::InvalidConfig("ISTA step must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Largest eigenvalue of `DᵀD` by power iteration.
pub fn gram_spectral_radius(d: &Matrix) -> f64 {
    let k = d.ncols();
    if k == 0 || d.nrows() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut v = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERS {
        let w = d.tr_mul(&(d * &v));
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (next - estimate).abs() <= POWER_TOL * next.abs();
        estimate = next;
        if converged {
            break;
        }
    }
    // Rayleigh quotient of the final vector, always <= the true radius.
    let dv = d * &v;
    estimate.max(dv.norm_squared())
}

/// `||X - D Z||_F² + lambda ||Z||_1`.
pub fn sparse_objective(d: &Matrix, x: &Matrix, z: &Matrix, lambda: f64) -> f64 {
    (x - d * z).norm_squared() + lambda * z.iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct IstaOutput {
    pub code: Matrix,
    /// Objective at the starting point and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Approximately minimizes `||X - D Z||_F² + lambda ||Z||_1` by ISTA.
pub fn ista_sparse_code(d: &Matrix, x: &Matrix, lambda: f64, cfg: &IstaConfig) -> Result<Matrix> {
    ista_solve(d, x, lambda, cfg, None).map(|o| o.code)
}

/// ISTA with an optional warm start (zero otherwise).
///
/// Each iteration is `Z <- soft(Z - t Dᵀ(DZ - X), t lambda / 2)` with
/// `t = 1 / lambda_max(DᵀD)` in auto mode.
pub fn ista_solve(
    d: &Matrix,
    x: &Matrix,
    lambda: f64,
    cfg: &IstaConfig,
    warm_start: Option<&Matrix>,
) -> Result<IstaOutput> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DdlError::InvalidConfig(format!(
            "lambda must be a finite non-negative number, got {lambda}"
        )));
    }
    if d.nrows() != x.nrows() {
        return Err(DdlError::DimensionMismatch(format!(
            "dictionary has {} rows, data has {}",
            d.nrows(),
            x.nrows()
        )));
    }
    let mut z = match warm_start {
        Some(w) if w.shape() == (d.ncols(), x.ncols()) => w.clone(),
        Some(w) => {
            return Err(DdlError::DimensionMismatch(format!(
                "warm start is {}x{}, expected {}x{}",
                w.nrows(),
                w.ncols(),
                d.ncols(),
                x.ncols()
            )))
        }
        None => Matrix::zeros(d.ncols(), x.ncols()),
    };
    if x.ncols() == 0 {
        return Ok(IstaOutput {
            code: z,
            objective_trace: vec![0.0],
            iterations: 0,
        });
    }
    let step = match cfg.step {
        StepSize::Fixed(s) => s,
        StepSize::Auto => {
            let radius = gram_spectral_radius(d);
            if radius <= 0.0 {
                return Err(DdlError::ZeroDictionary);
            }
            1.0 / radius
        }
    };
    let threshold = step * lambda / 2.0;
    let l1 = |z: &Matrix| z.iter().map(|v| v.abs()).sum::<f64>();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut residual = d * &z - x;
    for _ in 0..cfg.max_iters {
        trace.push(residual.norm_squared() + lambda * l1(&z));
        let grad = d.tr_mul(&residual);
        let mut next = &z - grad * step;
        next.apply(|v| *v = soft_threshold(*v, threshold));
        let change = (&next - &z).norm();
        let reference = z.norm().max(f64::MIN_POSITIVE);
        z = next;
        residual = d * &z - x;
        iterations += 1;
        if change <= cfg.rel_tol * reference {
            break;
        }
    }
    trace.push(residual.norm_squared() + lambda * l1(&z));
    Ok(IstaOutput {
        code: z,
        objective_trace: trace,
        iterations,
    })
}
