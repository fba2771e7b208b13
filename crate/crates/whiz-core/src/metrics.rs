//! Estimation metrics: label-switching repair, RMSE over mean parameters,
//! and the false-positive / false-negative rates with the claim-space
//! denominators (classified-true and classified-false counts).

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::model::MixtureParams;
use crate::scalar::Real;

/// Largest K for which the exhaustive assignment search runs.
pub const MATCH_MAX_K: usize = 8;

/// Optimal component matching: returns `perm` such that estimated component
/// `perm[k]` pairs with true component `k`, minimizing the total squared
/// mean distance. Exhaustive over permutations (K ≤ 8 by contract).
pub fn match_components<T: Real>(
    est: &MixtureParams<T>,
    truth: &MixtureParams<T>,
) -> Result<Vec<usize>> {
    let k = truth.k();
    if est.k() != k || est.dim() != truth.dim() {
        return Err(Error::dims(
            "component matching",
            format!("{}x{}", k, truth.dim()),
            format!("{}x{}", est.k(), est.dim()),
        ));
    }
    if k > MATCH_MAX_K {
        return Err(Error::invalid(format!(
            "component matching supports K <= {MATCH_MAX_K}, got {k}"
        )));
    }
    let d = truth.dim();
    // cost[e][t] = squared distance between estimated mean e and true mean t
    let mut cost = vec![vec![T::zero(); k]; k];
    for (e, row) in cost.iter_mut().enumerate() {
        for (t, entry) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for c in 0..d {
                let diff = est.means()[(e, c)] - truth.means()[(t, c)];
                acc += diff * diff;
            }
            *entry = acc;
        }
    }
    let mut best: Option<(T, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let total = perm
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (t, &e)| acc + cost[e][t]);
        match &best {
            Some((current, _)) if total >= *current => {}
            _ => best = Some((total, perm)),
        }
    }
    Ok(best.expect("K >= 1 always yields a permutation").1)
}

/// Root-mean-square error over all K·D mean entries, after optimal matching.
pub fn rmse<T: Real>(est: &MixtureParams<T>, truth: &MixtureParams<T>) -> Result<T> {
    let perm = match_components(est, truth)?;
    let (k, d) = (truth.k(), truth.dim());
    let mut sum_sq = T::zero();
    for t in 0..k {
        let e = perm[t];
        for c in 0..d {
            let diff = est.means()[(e, c)] - truth.means()[(t, c)];
            sum_sq += diff * diff;
        }
    }
    Ok((sum_sq / T::from_usize(k * d).unwrap()).sqrt())
}

/// RMSE between a belief vector and boolean labels (labels read as 0/1).
pub fn rmse_beliefs<T: Real>(beliefs: &[T], labels: &[bool]) -> Result<T> {
    if beliefs.len() != labels.len() {
        return Err(Error::dims("belief rmse", labels.len(), beliefs.len()));
    }
    if beliefs.is_empty() {
        return Err(Error::invalid("belief rmse over an empty vector"));
    }
    let mut sum_sq = T::zero();
    for (b, l) in beliefs.iter().zip(labels) {
        let target = if *l { T::one() } else { T::zero() };
        let diff = *b - target;
        sum_sq += diff * diff;
    }
    Ok((sum_sq / T::from_usize(beliefs.len()).unwrap()).sqrt())
}

/// False-positive and false-negative rates:
/// `fp = |false ∧ classified-true| / |classified-true|` and
/// `fn = |true ∧ classified-false| / |classified-false|`.
/// A rate whose denominator is empty is reported as `None`.
pub fn fp_fn_rates<T: Real>(
    predicted: &[bool],
    actual: &[bool],
) -> Result<(Option<T>, Option<T>)> {
    if predicted.len() != actual.len() {
        return Err(Error::dims("fp/fn rates", actual.len(), predicted.len()));
    }
    let mut pred_true = 0usize;
    let mut pred_false = 0usize;
    let mut false_pos = 0usize;
    let mut false_neg = 0usize;
    for (&p, &a) in predicted.iter().zip(actual) {
        if p {
            pred_true += 1;
            if !a {
                false_pos += 1;
            }
        } else {
            pred_false += 1;
            if a {
                false_neg += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| {
        (den > 0).then(|| T::from_usize(num).unwrap() / T::from_usize(den).unwrap())
    };
    Ok((ratio(false_pos, pred_true), ratio(false_neg, pred_false)))
}

/// Mean and sample standard deviation (n−1 denominator; 0 for n ≤ 1),
/// accumulated in a fixed two-pass order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}
