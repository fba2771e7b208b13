//! Seeded k-means: hard assignment to the nearest centroid (ties broken by
//! the lowest component index) alternated with mean updates, until the
//! assignment stops changing. Initial centroids are k distinct data rows
//! chosen by the seed with squared-distance weighting, so well-separated
//! groups almost always receive their own seed; empty clusters are
//! re-seeded on the worst-fit point.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::SensedMatrix;
use crate::scalar::Real;

/// Converged clustering state.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansState<T: Real> {
    pub centroids: DMatrix<T>,
    pub assignments: Vec<usize>,
    pub objective: T,
    pub iterations: usize,
    /// Objective recorded after every centroid update, for monotonicity
    /// checks.
    pub objective_history: Vec<T>,
    pub converged: bool,
}

fn squared_distance<T: Real>(x: &DMatrix<T>, row: usize, centroids: &DMatrix<T>, k: usize) -> T {
    let mut acc = T::zero();
    for c in 0..x.ncols() {
        let d = x[(row, c)] - centroids[(k, c)];
        acc += d * d;
    }
    acc
}

/// Nearest-centroid assignment; ties go to the lowest index.
pub fn assign_points<T: Real>(x: &SensedMatrix<T>, centroids: &DMatrix<T>) -> Result<Vec<usize>> {
    if centroids.ncols() != x.n_cols() {
        return Err(Error::dims("assignment", x.n_cols(), centroids.ncols()));
    }
    let data = x.data();
    Ok((0..x.n_rows())
        .map(|n| {
            let mut best = 0usize;
            let mut best_dist = squared_distance(data, n, centroids, 0);
            for k in 1..centroids.nrows() {
                let dist = squared_distance(data, n, centroids, k);
                if dist < best_dist {
                    best = k;
                    best_dist = dist;
                }
            }
            best
        })
        .collect())
}

/// Per-cluster means. Errors if a cluster has no members.
pub fn update_centroids<T: Real>(
    x: &SensedMatrix<T>,
    assignments: &[usize],
    k: usize,
) -> Result<DMatrix<T>> {
    if assignments.len() != x.n_rows() {
        return Err(Error::dims("centroid update", x.n_rows(), assignments.len()));
    }
    let d = x.n_cols();
    let mut sums = DMatrix::<T>::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (n, &label) in assignments.iter().enumerate() {
        if label >= k {
            return Err(Error::invalid(format!("assignment label {label} out of range")));
        }
        counts[label] += 1;
        for c in 0..d {
            sums[(label, c)] += x.data()[(n, c)];
        }
    }
    for (label, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::invalid(format!("cluster {label} is empty")));
        }
        let inv = T::one() / T::from_usize(count).unwrap();
        for c in 0..d {
            sums[(label, c)] *= inv;
        }
    }
    Ok(sums)
}

/// Sum over points of the squared distance to the assigned centroid.
pub fn kmeans_objective<T: Real>(x: &SensedMatrix<T>, state: &KmeansState<T>) -> Result<T> {
    objective_of(x, &state.centroids, &state.assignments)
}

fn objective_of<T: Real>(
    x: &SensedMatrix<T>,
    centroids: &DMatrix<T>,
    assignments: &[usize],
) -> Result<T> {
    if centroids.ncols() != x.n_cols() {
        return Err(Error::dims("objective", x.n_cols(), centroids.ncols()));
    }
    if assignments.len() != x.n_rows() {
        return Err(Error::dims("objective", x.n_rows(), assignments.len()));
    }
    let mut total = T::zero();
    for (n, &label) in assignments.iter().enumerate() {
        if label >= centroids.nrows() {
            return Err(Error::invalid(format!("assignment label {label} out of range")));
        }
        total += squared_distance(x.data(), n, centroids, label);
    }
    Ok(total)
}

/// Re-seeds every empty cluster on the point currently farthest from its own
/// centroid, claiming that point for the cluster.
fn repair_empty_clusters<T: Real>(
    x: &SensedMatrix<T>,
    centroids: &mut DMatrix<T>,
    assignments: &mut [usize],
) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &label in assignments.iter() {
            counts[label] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut worst = 0usize;
        let mut worst_dist = T::zero();
        for n in 0..x.n_rows() {
            let dist = squared_distance(x.data(), n, centroids, assignments[n]);
            if dist > worst_dist {
                worst = n;
                worst_dist = dist;
            }
        }
        for c in 0..x.n_cols() {
            centroids[(empty, c)] = x.data()[(worst, c)];
        }
        assignments[worst] = empty;
    }
}

/// Runs seeded k-means to convergence (unchanged assignments) or `max_iter`.
pub fn kmeans_run<T: Real>(
    x: &SensedMatrix<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KmeansState<T>> {
    let n = x.n_rows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::TooFewRows { n, k });
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = seed_rows(x, k, &mut rng);
    let mut centroids = DMatrix::<T>::zeros(k, x.n_cols());
    for (kk, &row) in chosen.iter().enumerate() {
        for c in 0..x.n_cols() {
            centroids[(kk, c)] = x.data()[(row, c)];
        }
    }

    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next = assign_points(x, &centroids)?;
        repair_empty_clusters(x, &mut centroids, &mut next);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        centroids = update_centroids(x, &assignments, k)?;
        iterations += 1;
        history.push(objective_of(x, &centroids, &assignments)?);
    }
    let objective = objective_of(x, &centroids, &assignments)?;
    Ok(KmeansState { centroids, assignments, objective, iterations, objective_history: history, converged })
}
