//! Shared domain types and their validation.
//!
//! Everything here is immutable after construction; constructors validate
//! invariants (finiteness, simplex weights, PD covariances, index ranges)
//! and return [`Error`] on violation. All types are `Send + Sync`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{real, scaled_tol, Real};

/// Diagonal floor applied to covariance matrices: whenever the smallest
/// eigenvalue falls below this, enough is added to the diagonal to bring the
/// minimum eigenvalue back to the floor.
pub const COV_EIG_FLOOR: f64 = 1e-6;

fn ensure_finite_matrix<T: Real>(m: &DMatrix<T>, context: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: context.to_string() });
    }
    Ok(())
}

fn ensure_finite_slice<T: Real>(v: &[T], context: &str) -> Result<()> {
    if v.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: context.to_string() });
    }
    Ok(())
}

/// N×D matrix of sensed observations; row `n` is observation `x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedMatrix<T: Real> {
    data: DMatrix<T>,
}

impl<T: Real> SensedMatrix<T> {
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "sensed matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        ensure_finite_matrix(&data, "sensed matrix")?;
        Ok(Self { data })
    }

    /// Builds from row-major data.
    pub fn from_rows(n_rows: usize, n_cols: usize, values: &[T]) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::dims("sensed matrix", n_rows * n_cols, values.len()));
        }
        Self::new(DMatrix::from_row_slice(n_rows, n_cols, values))
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    /// Observation `n` as a column vector.
    pub fn row_vector(&self, n: usize) -> DVector<T> {
        self.data.row(n).transpose()
    }

    /// All observations as column vectors, in row order.
    pub fn rows_as_vectors(&self) -> Vec<DVector<T>> {
        (0..self.n_rows()).map(|n| self.row_vector(n)).collect()
    }

    /// The first `n` observations as a new matrix.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_rows() {
            return Err(Error::invalid(format!("prefix length {n} out of range")));
        }
        Ok(Self { data: self.data.rows(0, n).into_owned() })
    }
}

/// Adds to the diagonal until the minimum eigenvalue reaches
/// [`COV_EIG_FLOOR`]. Symmetrizes first; the input must already be symmetric
/// within tolerance.
pub fn floor_covariance<T: Real>(sigma: &DMatrix<T>, context: &str) -> Result<DMatrix<T>> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::dims(context, "square matrix", format!("{}x{}", sigma.nrows(), sigma.ncols())));
    }
    ensure_finite_matrix(sigma, context)?;
    let tol: T = scaled_tol(1e-12);
    let scale = sigma.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    for i in 0..sigma.nrows() {
        for j in (i + 1)..sigma.ncols() {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > tol * scale {
                return Err(Error::invalid(format!("{context}: matrix is not symmetric")));
            }
        }
    }
    let mut sym = (sigma + sigma.transpose()) * real::<T>(0.5);
    let floor: T = real(COV_EIG_FLOOR);
    let min_eig = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    if min_eig < floor {
        let shift = floor - min_eig;
        for i in 0..sym.nrows() {
            sym[(i, i)] += shift;
        }
    }
    Ok(sym)
}

/// Mixture parameters (weights, means, covariances): weight vector of length
/// K, K×D mean matrix (row k is the k-th mean) and K stacked D×D covariance
/// matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T: Real> {
    weights: DVector<T>,
    means: DMatrix<T>,
    covariances: Vec<DMatrix<T>>,
}

impl<T: Real> MixtureParams<T> {
    /// Validates the simplex and covariance invariants; covariances are
    /// floored so the result is always positive definite.
    pub fn new(weights: DVector<T>, means: DMatrix<T>, covariances: Vec<DMatrix<T>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.nrows() != k {
            return Err(Error::dims("mixture means", format!("{k} rows"), means.nrows()));
        }
        let d = means.ncols();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be at least 1"));
        }
        if covariances.len() != k {
            return Err(Error::dims("mixture covariances", k, covariances.len()));
        }
        ensure_finite_matrix(&means, "mixture means")?;
        ensure_finite_slice(weights.as_slice(), "mixture weights")?;
        let tol: T = scaled_tol(1e-12);
        let mut total = T::zero();
        for w in weights.iter() {
            if *w < -tol || *w > T::one() + tol {
                return Err(Error::invalid("mixture weight outside [0, 1]"));
            }
            total += *w;
        }
        if (total - T::one()).abs() > tol {
            return Err(Error::invalid(format!(
                "mixture weights must sum to 1, got {}",
                total.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let covariances = covariances
            .iter()
            .enumerate()
            .map(|(kk, c)| {
                if c.nrows() != d || c.ncols() != d {
                    return Err(Error::dims(
                        "mixture covariance",
                        format!("{d}x{d}"),
                        format!("{}x{}", c.nrows(), c.ncols()),
                    ));
                }
                floor_covariance(c, &format!("covariance of component {kk}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights, means, covariances })
    }

    /// Single-component helper.
    pub fn single(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        Self::new(
            DVector::from_element(1, T::one()),
            DMatrix::from_row_slice(1, d, mean.as_slice()),
            vec![covariance],
        )
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<T> {
        &self.means
    }

    pub fn mean_vector(&self, k: usize) -> DVector<T> {
        self.means.row(k).transpose()
    }

    pub fn covariances(&self) -> &[DMatrix<T>] {
        &self.covariances
    }

    /// Mean parameters flattened component-major: (k, d) ↦ entry k·D + d.
    pub fn mean_parameter_vector(&self) -> DVector<T> {
        let (k, d) = (self.k(), self.dim());
        DVector::from_fn(k * d, |i, _| self.means[(i / d, i % d)])
    }

    /// Replaces the means, keeping weights and covariances.
    pub fn with_means(&self, means: DMatrix<T>) -> Result<Self> {
        Self::new(self.weights.clone(), means, self.covariances.clone())
    }
}

/// N×K posterior membership probabilities; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities<T: Real> {
    gamma: DMatrix<T>,
}

impl<T: Real> Responsibilities<T> {
    pub fn new(gamma: DMatrix<T>) -> Result<Self> {
        if gamma.nrows() == 0 || gamma.ncols() == 0 {
            return Err(Error::invalid("responsibilities must be at least 1x1"));
        }
        ensure_finite_matrix(&gamma, "responsibilities")?;
        let tol: T = scaled_tol(1e-12);
        for n in 0..gamma.nrows() {
            let mut row_sum = T::zero();
            for k in 0..gamma.ncols() {
                let g = gamma[(n, k)];
                if g < -tol || g > T::one() + tol {
                    return Err(Error::invalid(format!(
                        "responsibility ({n}, {k}) outside [0, 1]"
                    )));
                }
                row_sum += g;
            }
            if (row_sum - T::one()).abs() > tol {
                return Err(Error::invalid(format!(
                    "responsibility row {n} sums to {}, expected 1",
                    row_sum.to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> &DMatrix<T> {
        &self.gamma
    }

    pub fn n_rows(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }
}

/// One source-claim report. `polarity = true` means the source reports the
/// claim as true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assertion {
    pub source: usize,
    pub claim: usize,
    pub polarity: bool,
}

/// Bipartite source→claim assertion structure for the fact-finding baselines.
///
/// `assertions` is deduplicated on (source, claim); `events` preserves the
/// raw emission sequence (repeats included) for online experiments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationGraph {
    n_sources: usize,
    n_claims: usize,
    assertions: Vec<Assertion>,
    events: Vec<Assertion>,
}

impl ObservationGraph {
    pub fn new(n_sources: usize, n_claims: usize, assertions: Vec<Assertion>) -> Result<Self> {
        let events = assertions.clone();
        Self::with_events(n_sources, n_claims, assertions, events)
    }

    pub fn with_events(
        n_sources: usize,
        n_claims: usize,
        assertions: Vec<Assertion>,
        events: Vec<Assertion>,
    ) -> Result<Self> {
        if n_sources == 0 || n_claims == 0 {
            return Err(Error::invalid("graph needs at least one source and one claim"));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &assertions {
            if a.source >= n_sources || a.claim >= n_claims {
                return Err(Error::invalid(format!(
                    "assertion ({}, {}) out of range {}x{}",
                    a.source, a.claim, n_sources, n_claims
                )));
            }
            if !seen.insert((a.source, a.claim)) {
                return Err(Error::invalid(format!(
                    "duplicate assertion for source {} and claim {}",
                    a.source, a.claim
                )));
            }
        }
        for e in &events {
            if e.source >= n_sources || e.claim >= n_claims {
                return Err(Error::invalid(format!(
                    "event ({}, {}) out of range {}x{}",
                    e.source, e.claim, n_sources, n_claims
                )));
            }
        }
        Ok(Self { n_sources, n_claims, assertions, events })
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_claims(&self) -> usize {
        self.n_claims
    }

    pub fn assertions(&self) -> &[Assertion] {
        &self.assertions
    }

    pub fn events(&self) -> &[Assertion] {
        &self.events
    }

    /// Per-claim list of (source, polarity).
    pub fn by_claim(&self) -> Vec<Vec<(usize, bool)>> {
        let mut out = vec![Vec::new(); self.n_claims];
        for a in &self.assertions {
            out[a.claim].push((a.source, a.polarity));
        }
        out
    }

    /// Per-source list of (claim, polarity).
    pub fn by_source(&self) -> Vec<Vec<(usize, bool)>> {
        let mut out = vec![Vec::new(); self.n_sources];
        for a in &self.assertions {
            out[a.source].push((a.claim, a.polarity));
        }
        out
    }
}

/// Known truth for synthetic scenarios; every field is optional because the
/// two experiment families (parameter space vs claim space) expose different
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Real> {
    pub true_params: Option<MixtureParams<T>>,
    pub claim_labels: Option<Vec<bool>>,
    pub source_reliability: Option<Vec<T>>,
    pub claim_quality: Option<Vec<T>>,
}

impl<T: Real> GroundTruth<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("source reliability", &self.source_reliability),
            ("claim quality", &self.claim_quality),
        ] {
            if let Some(values) = v {
                ensure_finite_slice(values, name)?;
                if values.iter().any(|p| *p < T::zero() || *p > T::one()) {
                    return Err(Error::invalid(format!("{name} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian prior over the mixture means: entrywise `N(center, variance)`.
/// Weights and covariances of a prior draw are copied from the template
/// carried here, so only the means are random.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec<T: Real> {
    mean_center: DMatrix<T>,
    mean_variance: T,
    template_weights: DVector<T>,
    template_covariances: Vec<DMatrix<T>>,
}

impl<T: Real> PriorSpec<T> {
    pub fn new(
        mean_center: DMatrix<T>,
        mean_variance: T,
        template_weights: DVector<T>,
        template_covariances: Vec<DMatrix<T>>,
    ) -> Result<Self> {
        if mean_variance <= T::zero() || !mean_variance.is_finite() {
            return Err(Error::invalid("prior variance must be positive and finite"));
        }
        // Template validity is exactly the mixture invariant set.
        let template = MixtureParams::new(
            template_weights,
            mean_center.clone(),
            template_covariances,
        )?;
        Ok(Self {
            mean_center,
            mean_variance,
            template_weights: template.weights().clone(),
            template_covariances: template.covariances().to_vec(),
        })
    }

    /// Prior centered at the template's own means.
    pub fn centered_on(template: &MixtureParams<T>, mean_variance: T) -> Result<Self> {
        Self::new(
            template.means().clone(),
            mean_variance,
            template.weights().clone(),
            template.covariances().to_vec(),
        )
    }

    pub fn k(&self) -> usize {
        self.mean_center.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean_center.ncols()
    }

    /// Number of mean parameters bounded by the prior (K·D).
    pub fn n_mean_params(&self) -> usize {
        self.k() * self.dim()
    }

    pub fn mean_center(&self) -> &DMatrix<T> {
        &self.mean_center
    }

    pub fn mean_variance(&self) -> T {
        self.mean_variance
    }

    pub fn template_weights(&self) -> &DVector<T> {
        &self.template_weights
    }

    pub fn template_covariances(&self) -> &[DMatrix<T>] {
        &self.template_covariances
    }

    /// The mixture at the prior center (template weights and covariances).
    pub fn center_params(&self) -> MixtureParams<T> {
        MixtureParams::new(
            self.template_weights.clone(),
            self.mean_center.clone(),
            self.template_covariances.clone(),
        )
        .expect("prior template was validated on construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn sensed_matrix_rejects_non_finite() {
        let err = SensedMatrix::new(dmatrix![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        let err = SensedMatrix::new(dmatrix![0.0, f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn sensed_matrix_rejects_empty() {
        assert!(SensedMatrix::<f64>::new(DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn mixture_weights_must_be_simplex() {
        let cov = vec![dmatrix![1.0]];
        let means = dmatrix![0.0];
        assert!(MixtureParams::new(dvector![0.9], means.clone(), cov.clone()).is_err());
        assert!(MixtureParams::new(dvector![1.0], means, cov).is_ok());
    }

    #[test]
    fn mixture_rejects_asymmetric_covariance() {
        let cov = vec![dmatrix![1.0, 0.5; 0.1, 1.0]];
        let err = MixtureParams::new(dvector![1.0], dmatrix![0.0, 0.0], cov).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn covariance_floor_restores_pd() {
        let sigma = dmatrix![0.0, 0.0; 0.0, 0.0];
        let floored = floor_covariance(&sigma, "test").unwrap();
        let min_eig = floored
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= COV_EIG_FLOOR - 1e-15);
    }

    #[test]
    fn covariance_floor_leaves_healthy_matrices_alone() {
        let sigma = dmatrix![2.0, 0.3; 0.3, 1.0];
        let floored = floor_covariance(&sigma, "test").unwrap();
        assert_eq!(floored, sigma);
    }

    #[test]
    fn responsibilities_rows_must_sum_to_one() {
        assert!(Responsibilities::new(dmatrix![0.5, 0.4]).is_err());
        assert!(Responsibilities::new(dmatrix![0.5, 0.5]).is_ok());
        assert!(Responsibilities::new(dmatrix![1.2, -0.2]).is_err());
    }

    #[test]
    fn graph_rejects_duplicates_and_out_of_range() {
        let a = Assertion { source: 0, claim: 0, polarity: true };
        assert!(ObservationGraph::new(1, 1, vec![a, a]).is_err());
        let b = Assertion { source: 1, claim: 0, polarity: true };
        assert!(ObservationGraph::new(1, 1, vec![b]).is_err());
        assert!(ObservationGraph::new(1, 1, vec![a]).is_ok());
    }

    #[test]
    fn ground_truth_bounds_probabilities() {
        let gt = GroundTruth::<f64> {
            true_params: None,
            claim_labels: None,
            source_reliability: Some(vec![0.0, 1.0, 0.5]),
            claim_quality: Some(vec![1.5]),
        };
        assert!(gt.validate().is_err());
    }

    #[test]
    fn prior_requires_positive_variance() {
        let template = MixtureParams::single(dvector![0.0], dmatrix![1.0]).unwrap();
        assert!(PriorSpec::centered_on(&template, 0.0).is_err());
        assert!(PriorSpec::centered_on(&template, 1.0).is_ok());
    }

    #[test]
    fn mean_parameter_vector_is_component_major() {
        let params = MixtureParams::new(
            dvector![0.5, 0.5],
            dmatrix![1.0, 2.0; 3.0, 4.0],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        )
        .unwrap();
        let theta = params.mean_parameter_vector();
        assert_eq!(theta.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
