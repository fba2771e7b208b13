//! Gaussian-mixture expectation-maximization.
//!
//! Densities are evaluated in log space through a Cholesky factorization
//! (never an explicit determinant), responsibilities are normalized with a
//! max-subtracted log-sum-exp, and the M-step reproduces the weighted-mean /
//! weighted-scatter / component-fraction updates. The run loop asserts the
//! monotone-likelihood guarantee: any decrease beyond 1e-9 is reported as a
//! bug rather than papered over.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kmeans::KmeansState;
use crate::model::{MixtureParams, Responsibilities, SensedMatrix};
use crate::scalar::{real, Real};

/// Default relative improvement threshold for convergence.
pub const EM_DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const EM_DEFAULT_MAX_ITER: usize = 500;
/// Any likelihood decrease beyond this is treated as a defect.
pub const LL_DECREASE_GUARD: f64 = 1e-9;

/// Per-iteration log-likelihoods plus the converged state.
#[derive(Debug, Clone)]
pub struct EmTrace<T: Real> {
    /// Log-likelihood at the initial parameters followed by one entry per
    /// iteration.
    pub log_likelihoods: Vec<T>,
    pub final_params: MixtureParams<T>,
    pub final_gamma: Responsibilities<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> EmTrace<T> {
    pub fn final_log_likelihood(&self) -> T {
        *self.log_likelihoods.last().expect("trace always holds the initial likelihood")
    }
}

/// Max-subtracted log-sum-exp; empty or all-`-inf` input yields `-inf`.
pub fn logsumexp<T: Real>(values: &[T]) -> T {
    let neg_inf: T = real(f64::NEG_INFINITY);
    let max = values.iter().copied().fold(neg_inf, |a, b| a.max(b));
    if max == neg_inf {
        return neg_inf;
    }
    let sum = values.iter().fold(T::zero(), |acc, v| acc + (*v - max).exp());
    max + sum.ln()
}

/// Cached per-component factorization used by the row-wise density loops.
struct ComponentCache<T: Real> {
    mean: DVector<T>,
    chol: Cholesky<T, nalgebra::Dyn>,
    log_det: T,
    log_weight: T,
}

fn build_cache<T: Real>(params: &MixtureParams<T>) -> Result<Vec<ComponentCache<T>>> {
    params
        .covariances()
        .iter()
        .enumerate()
        .map(|(k, sigma)| {
            let chol = Cholesky::new(sigma.clone()).ok_or_else(|| Error::NotPositiveDefinite {
                context: format!("covariance of component {k}"),
            })?;
            let log_det =
                chol.l().diagonal().iter().fold(T::zero(), |acc, v| acc + v.ln()) * real::<T>(2.0);
            let w = params.weights()[k];
            let log_weight = if w > T::zero() { w.ln() } else { real(f64::NEG_INFINITY) };
            Ok(ComponentCache { mean: params.mean_vector(k), chol, log_det, log_weight })
        })
        .collect()
}

fn log_density<T: Real>(cache: &ComponentCache<T>, x: &DVector<T>) -> T {
    let d = x.len();
    let diff = x - &cache.mean;
    let solved = cache.chol.solve(&diff);
    let quad = diff.dot(&solved);
    let half: T = real(0.5);
    -half * (T::from_usize(d).unwrap() * T::TAU().ln() + cache.log_det + quad)
}

/// Log of the multivariate Gaussian density, via Cholesky.
pub fn gaussian_logpdf<T: Real>(
    x: &DVector<T>,
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
) -> Result<T> {
    if x.len() != mu.len() || sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
        return Err(Error::dims(
            "gaussian logpdf",
            mu.len(),
            format!("x: {}, sigma: {}x{}", x.len(), sigma.nrows(), sigma.ncols()),
        ));
    }
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite { context: "gaussian logpdf".to_string() })?;
    let log_det = chol.l().diagonal().iter().fold(T::zero(), |acc, v| acc + v.ln()) * real::<T>(2.0);
    let diff = x - mu;
    let quad = diff.dot(&chol.solve(&diff));
    let half: T = real(0.5);
    Ok(-half * (T::from_usize(x.len()).unwrap() * T::TAU().ln() + log_det + quad))
}

fn check_dims<T: Real>(x: &SensedMatrix<T>, params: &MixtureParams<T>, context: &str) -> Result<()> {
    if x.n_cols() != params.dim() {
        return Err(Error::dims(context, params.dim(), x.n_cols()));
    }
    Ok(())
}

/// Mixture log-likelihood, accumulated with the log-sum-exp guard.
pub fn log_likelihood<T: Real>(x: &SensedMatrix<T>, params: &MixtureParams<T>) -> Result<T> {
    check_dims(x, params, "log likelihood")?;
    let cache = build_cache(params)?;
    let mut total = T::zero();
    let mut terms = vec![T::zero(); cache.len()];
    for n in 0..x.n_rows() {
        let xn = x.row_vector(n);
        for (k, comp) in cache.iter().enumerate() {
            terms[k] = comp.log_weight + log_density(comp, &xn);
        }
        total += logsumexp(&terms);
    }
    Ok(total)
}

/// Posterior membership probabilities, computed in log space and normalized
/// row by row.
pub fn e_step<T: Real>(x: &SensedMatrix<T>, params: &MixtureParams<T>) -> Result<Responsibilities<T>> {
    check_dims(x, params, "e-step")?;
    let cache = build_cache(params)?;
    let neg_inf: T = real(f64::NEG_INFINITY);
    let k = cache.len();
    let mut gamma = DMatrix::<T>::zeros(x.n_rows(), k);
    let mut terms = vec![T::zero(); k];
    for n in 0..x.n_rows() {
        let xn = x.row_vector(n);
        for (kk, comp) in cache.iter().enumerate() {
            terms[kk] = comp.log_weight + log_density(comp, &xn);
        }
        let norm = logsumexp(&terms);
        if norm == neg_inf || !norm.is_finite() {
            return Err(Error::ResponsibilityUnderflow { row: n });
        }
        for kk in 0..k {
            gamma[(n, kk)] = (terms[kk] - norm).exp();
        }
    }
    Responsibilities::new(gamma)
}

/// Weighted-mean, weighted-scatter and component-fraction updates. Fails on
/// a component whose effective count vanishes.
pub fn m_step<T: Real>(x: &SensedMatrix<T>, gamma: &Responsibilities<T>) -> Result<MixtureParams<T>> {
    if gamma.n_rows() != x.n_rows() {
        return Err(Error::dims("m-step", x.n_rows(), gamma.n_rows()));
    }
    let n = x.n_rows();
    let d = x.n_cols();
    let k = gamma.k();
    let g = gamma.gamma();
    let n_t = T::from_usize(n).unwrap();
    let guard = n_t * scaled_guard::<T>();

    let mut effective = vec![T::zero(); k];
    for kk in 0..k {
        for row in 0..n {
            effective[kk] += g[(row, kk)];
        }
        if effective[kk] <= guard {
            return Err(Error::DegenerateComponent {
                component: kk,
                effective_count: effective[kk].to_f64().unwrap_or(0.0),
            });
        }
    }

    let mut means = DMatrix::<T>::zeros(k, d);
    for kk in 0..k {
        for row in 0..n {
            let w = g[(row, kk)];
            for c in 0..d {
                means[(kk, c)] += w * x.data()[(row, c)];
            }
        }
        for c in 0..d {
            means[(kk, c)] /= effective[kk];
        }
    }

    let mut covariances = Vec::with_capacity(k);
    for kk in 0..k {
        let mut cov = DMatrix::<T>::zeros(d, d);
        for row in 0..n {
            let w = g[(row, kk)];
            for i in 0..d {
                let di = x.data()[(row, i)] - means[(kk, i)];
                for j in i..d {
                    let dj = x.data()[(row, j)] - means[(kk, j)];
                    cov[(i, j)] += w * di * dj;
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / effective[kk];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        covariances.push(cov);
    }

    let weights = DVector::from_iterator(k, effective.iter().map(|e| *e / n_t));
    MixtureParams::new(weights, means, covariances)
}

fn scaled_guard<T: Real>() -> T {
    real(1e-12)
}

/// Expected complete-data objective: responsibility-weighted log weights and
/// log densities (2π constant included, so `log_likelihood = q_function +
/// entropy` holds exactly for fresh responsibilities).
pub fn q_function<T: Real>(
    x: &SensedMatrix<T>,
    gamma: &Responsibilities<T>,
    params: &MixtureParams<T>,
) -> Result<T> {
    check_dims(x, params, "q function")?;
    if gamma.n_rows() != x.n_rows() || gamma.k() != params.k() {
        return Err(Error::dims(
            "q function",
            format!("{}x{}", x.n_rows(), params.k()),
            format!("{}x{}", gamma.n_rows(), gamma.k()),
        ));
    }
    let cache = build_cache(params)?;
    let g = gamma.gamma();
    let mut total = T::zero();
    for n in 0..x.n_rows() {
        let xn = x.row_vector(n);
        for (k, comp) in cache.iter().enumerate() {
            let w = g[(n, k)];
            if w > T::zero() {
                total += w * (comp.log_weight + log_density(comp, &xn));
            }
        }
    }
    Ok(total)
}

/// Shannon entropy of the responsibilities (`0 ln 0 = 0`).
pub fn entropy<T: Real>(gamma: &Responsibilities<T>) -> T {
    let mut h = T::zero();
    for v in gamma.gamma().iter() {
        if *v > T::zero() {
            h -= *v * v.ln();
        }
    }
    h
}

/// Builds mixture parameters from a clustering: component fractions from
/// cluster sizes, means from centroids, covariances from per-cluster scatter
/// (floored).
pub fn init_from_kmeans<T: Real>(
    x: &SensedMatrix<T>,
    state: &KmeansState<T>,
) -> Result<MixtureParams<T>> {
    let k = state.centroids.nrows();
    let n = x.n_rows();
    let d = x.n_cols();
    if state.assignments.len() != n {
        return Err(Error::dims("kmeans init", n, state.assignments.len()));
    }
    let mut counts = vec![0usize; k];
    for &label in &state.assignments {
        counts[label] += 1;
    }
    let mut covariances = Vec::with_capacity(k);
    for kk in 0..k {
        let mut cov = DMatrix::<T>::zeros(d, d);
        for (row, &label) in state.assignments.iter().enumerate() {
            if label != kk {
                continue;
            }
            for i in 0..d {
                let di = x.data()[(row, i)] - state.centroids[(kk, i)];
                for j in 0..d {
                    let dj = x.data()[(row, j)] - state.centroids[(kk, j)];
                    cov[(i, j)] += di * dj;
                }
            }
        }
        if counts[kk] == 0 {
            return Err(Error::DegenerateComponent { component: kk, effective_count: 0.0 });
        }
        cov /= T::from_usize(counts[kk]).unwrap();
        covariances.push(cov);
    }
    let weights = DVector::from_iterator(
        k,
        counts.iter().map(|c| T::from_usize(*c).unwrap() / T::from_usize(n).unwrap()),
    );
    MixtureParams::new(weights, state.centroids.clone(), covariances)
}

/// Alternates E- and M-steps until the likelihood improvement drops below
/// `tol` (relative) or `max_iter` is reached. The trace records the
/// likelihood at every iteration, starting with the initial parameters.
pub fn em_run<T: Real>(
    x: &SensedMatrix<T>,
    init: &MixtureParams<T>,
    tol: T,
    max_iter: usize,
) -> Result<EmTrace<T>> {
    check_dims(x, init, "em run")?;
    if x.n_rows() < init.k() {
        return Err(Error::TooFewRows { n: x.n_rows(), k: init.k() });
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let guard: T = real(LL_DECREASE_GUARD);
    let mut params = init.clone();
    let mut ll_prev = log_likelihood(x, &params)?;
    let mut log_likelihoods = vec![ll_prev];
    let mut iterations = 0usize;
    let mut converged = false;
    for t in 1..=max_iter {
        let gamma = e_step(x, &params)?;
        params = m_step(x, &gamma)?;
        let ll = log_likelihood(x, &params)?;
        log_likelihoods.push(ll);
        iterations = t;
        let drop = ll_prev - ll;
        if drop > guard {
            return Err(Error::LikelihoodDecreased {
                iteration: t,
                drop: drop.to_f64().unwrap_or(f64::NAN),
            });
        }
        let improvement = ll - ll_prev;
        ll_prev = ll;
        if improvement <= tol * (T::one() + ll.abs()) {
            converged = true;
            break;
        }
    }
    let final_gamma = e_step(x, &params)?;
    Ok(EmTrace { log_likelihoods, final_params: params, final_gamma, iterations, converged })
}
