//! Synthetic input generators: mixture datasets, bipartite source/claim
//! scenarios, pricing-deferral session logs and prior draws.
//!
//! Every generator is a pure function of (config, seed); per-trial seeds are
//! derived with a splitmix-style mix so trial-level parallelism cannot change
//! results.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assertion, GroundTruth, MixtureParams, ObservationGraph, PriorSpec, SensedMatrix};
use crate::scalar::{real, Real};

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-task seed derivation: hash of (master, a, b). Used for trial
/// and sweep indices so execution order never matters.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(master ^ 0x51_7c_c1_b7_27_22_0a_95) ^ mix64(a).wrapping_add(b.wrapping_mul(0x2545_f491_4f6c_dd1d)))
}

fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn standard_normal<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = rng.sample(StandardNormal);
    real(z)
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

/// How per-source reliability is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P1Mode {
    /// U(0, 1), the default when nothing else is known.
    Uniform01,
    /// Every source has the same reliability.
    Fixed(f64),
}

/// Declarative description of a synthetic source/claim scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_sources: usize,
    pub n_claims: usize,
    pub claims_per_source: usize,
    /// Fraction of claims that are true, in (0, 1).
    pub true_claim_ratio: f64,
    pub p1_mode: P1Mode,
    /// Claim-quality range, a subinterval of [0, 1].
    pub p2_range: (f64, f64),
    /// Scales how many assertion events each source emits;
    /// `base_observations` events correspond to a demand ratio of 1.
    #[serde(default = "default_demand_ratio")]
    pub demand_ratio: f64,
    #[serde(default = "default_base_observations")]
    pub base_observations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_demand_ratio() -> f64 {
    1.0
}

fn default_base_observations() -> usize {
    10
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_claims == 0 || self.claims_per_source == 0 {
            return Err(Error::invalid("scenario counts must be at least 1"));
        }
        if self.claims_per_source > self.n_claims {
            return Err(Error::invalid(format!(
                "claims_per_source {} exceeds n_claims {}",
                self.claims_per_source, self.n_claims
            )));
        }
        if !(self.true_claim_ratio > 0.0 && self.true_claim_ratio < 1.0) {
            return Err(Error::invalid("true_claim_ratio must lie in (0, 1)"));
        }
        if let P1Mode::Fixed(v) = self.p1_mode {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("fixed reliability must lie in [0, 1]"));
            }
        }
        let (lo, hi) = self.p2_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid("p2_range must be an ordered subinterval of [0, 1]"));
        }
        if self.demand_ratio <= 0.0 || !self.demand_ratio.is_finite() {
            return Err(Error::invalid("demand_ratio must be positive"));
        }
        if self.base_observations == 0 {
            return Err(Error::invalid("base_observations must be at least 1"));
        }
        Ok(())
    }

    /// Assertion events emitted per source under the demand scaling rule.
    pub fn events_per_source(&self) -> usize {
        let scaled = (self.demand_ratio * self.base_observations as f64).round();
        let per_source = self.claims_per_source as f64 * scaled / self.base_observations as f64;
        per_source.round().max(1.0) as usize
    }
}

/// Draws `n` observations from the mixture: pick a component by weight, then
/// sample from its Gaussian. Same seed, same output.
pub fn gen_gmm_dataset<T: Real>(
    params: &MixtureParams<T>,
    n: usize,
    seed: u64,
) -> Result<SensedMatrix<T>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let k = params.k();
    let d = params.dim();
    let factors: Vec<DMatrix<T>> = params
        .covariances()
        .iter()
        .enumerate()
        .map(|(kk, c)| {
            nalgebra::Cholesky::new(c.clone())
                .map(|ch| ch.l())
                .ok_or_else(|| Error::NotPositiveDefinite {
                    context: format!("covariance of component {kk}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let cum_weights: Vec<f64> = {
        let mut acc = 0.0;
        params
            .weights()
            .iter()
            .map(|w| {
                acc += w.to_f64().unwrap_or(0.0);
                acc
            })
            .collect()
    };
    let mut rng = rng_from(seed);
    let mut data = DMatrix::<T>::zeros(n, d);
    for row in 0..n {
        let u = uniform01(&mut rng);
        let mut component = k - 1;
        for (idx, cw) in cum_weights.iter().enumerate() {
            if u < *cw {
                component = idx;
                break;
            }
        }
        let z = DVector::from_fn(d, |_, _| standard_normal::<T>(&mut rng));
        let x = params.mean_vector(component) + &factors[component] * z;
        for c in 0..d {
            data[(row, c)] = x[c];
        }
    }
    SensedMatrix::new(data)
}

/// Generates a source/claim scenario: labels with the configured true ratio,
/// per-source reliability from `p1_mode`, per-claim quality from `p2_range`,
/// each source asserting `claims_per_source` distinct claims. A report is
/// correct with probability `p1 · p2`, otherwise flipped. The event stream
/// repeats each source's reports according to the demand scaling; the
/// deduplicated assertion set keeps one polarity per (source, claim).
pub fn gen_scenario<T: Real>(cfg: &ScenarioConfig) -> Result<(ObservationGraph, GroundTruth<T>)> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let m = cfg.n_claims;
    let s = cfg.n_sources;

    let n_true = ((cfg.true_claim_ratio * m as f64).round() as usize).clamp(1, m - 1);
    let mut labels = vec![false; m];
    for label in labels.iter_mut().take(n_true) {
        *label = true;
    }
    labels.shuffle(&mut rng);

    let p1: Vec<f64> = (0..s)
        .map(|_| match cfg.p1_mode {
            P1Mode::Uniform01 => uniform01(&mut rng),
            P1Mode::Fixed(v) => v,
        })
        .collect();
    let (lo, hi) = cfg.p2_range;
    let p2: Vec<f64> = (0..m)
        .map(|_| if hi > lo { lo + (hi - lo) * uniform01(&mut rng) } else { lo })
        .collect();

    // Each source draws its claim set and a fixed polarity per claim, then
    // emits events by cycling through that set under the demand scaling.
    // The deduplicated assertion set is what the events actually covered,
    // so a demand ratio below 1 genuinely reduces the evidence.
    let events_per_source = cfg.events_per_source();
    let mut assertions = Vec::with_capacity(s * cfg.claims_per_source);
    let mut events = Vec::with_capacity(s * events_per_source);
    for source in 0..s {
        let chosen = rand::seq::index::sample(&mut rng, m, cfg.claims_per_source).into_vec();
        let mut polarities = Vec::with_capacity(chosen.len());
        for &claim in &chosen {
            let correct = uniform01(&mut rng) < p1[source] * p2[claim];
            let polarity = if correct { labels[claim] } else { !labels[claim] };
            polarities.push(polarity);
        }
        for e in 0..events_per_source {
            let idx = e % chosen.len();
            let assertion =
                Assertion { source, claim: chosen[idx], polarity: polarities[idx] };
            if e < chosen.len() {
                assertions.push(assertion);
            }
            events.push(assertion);
        }
    }

    let graph = ObservationGraph::with_events(s, m, assertions, events)?;
    let truth = GroundTruth {
        true_params: None,
        claim_labels: Some(labels),
        source_reliability: Some(p1.iter().map(|v| real::<T>(*v)).collect()),
        claim_quality: Some(p2.iter().map(|v| real::<T>(*v)).collect()),
    };
    truth.validate()?;
    Ok((graph, truth))
}

/// One observed pricing session: offered discount, deferral delay and
/// whether the user actually deferred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeSession<T: Real> {
    pub discount: T,
    pub defer_time: T,
    pub deferred: bool,
}

/// Samples sessions with `d ~ U(0,1)`, `τ ~ U{0..10}` and deferral
/// probability `clip(d / (λ_p (τ+1)^ρ), 0, 1)`.
pub fn gen_tube_sessions<T: Real>(
    rho: f64,
    lambda_p: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<TubeSession<T>>> {
    if rho <= 0.0 || rho.is_nan() || lambda_p <= 0.0 || lambda_p.is_nan() {
        return Err(Error::invalid("rho and lambda_p must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut sessions = Vec::with_capacity(n);
    for _ in 0..n {
        let d = uniform01(&mut rng);
        let tau = rng.random_range(0..=10) as f64;
        let w = (d / (lambda_p * (tau + 1.0).powf(rho))).clamp(0.0, 1.0);
        let deferred = uniform01(&mut rng) < w;
        sessions.push(TubeSession { discount: real(d), defer_time: real(tau), deferred });
    }
    Ok(sessions)
}

/// Draws mixture parameters from the prior: means entrywise
/// `N(center, σ0²)`, weights and covariances copied from the template.
pub fn sample_prior<T: Real>(prior: &PriorSpec<T>, seed: u64) -> Result<MixtureParams<T>> {
    let mut rng = rng_from(seed);
    let sd = prior.mean_variance().sqrt();
    let center = prior.mean_center();
    let means = DMatrix::from_fn(prior.k(), prior.dim(), |i, j| {
        center[(i, j)] + sd * standard_normal::<T>(&mut rng)
    });
    MixtureParams::new(
        prior.template_weights().clone(),
        means,
        prior.template_covariances().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn two_component_template(separation: f64) -> MixtureParams<f64> {
        MixtureParams::new(
            dvector![0.5, 0.5],
            dmatrix![-separation; separation],
            vec![dmatrix![1.0], dmatrix![1.0]],
        )
        .unwrap()
    }

    fn base_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_sources: 50,
            n_claims: 50,
            claims_per_source: 10,
            true_claim_ratio: 0.5,
            p1_mode: P1Mode::Fixed(1.0),
            p2_range: (1.0, 1.0),
            demand_ratio: 1.0,
            base_observations: 10,
            seed: 7,
        }
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
    }

    #[test]
    fn gmm_dataset_is_deterministic() {
        let params = two_component_template(5.0);
        let a = gen_gmm_dataset(&params, 100, 42).unwrap();
        let b = gen_gmm_dataset(&params, 100, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let c = gen_gmm_dataset(&params, 100, 43).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn gmm_degenerate_variance_pins_samples() {
        // The covariance floor lifts 1e-12 to 1e-6; samples stay within 1e-5
        // of the mean at that scale.
        let params: MixtureParams<f64> =
            MixtureParams::single(dvector![0.0], dmatrix![1e-12]).unwrap();
        let data = gen_gmm_dataset(&params, 3, 1).unwrap();
        for v in data.data().iter() {
            assert!(v.abs() < 1e-2, "sample {v} too far from the mean");
        }
    }

    #[test]
    fn gmm_component_proportions_follow_weights() {
        // Law-of-large-numbers check: label each draw by the nearest true
        // mean and compare empirical proportions with the weights.
        let params = two_component_template(5.0);
        let n = 10_000;
        let data = gen_gmm_dataset(&params, n, 9).unwrap();
        let near_low = data.data().column(0).iter().filter(|v| **v < 0.0).count();
        let frac = near_low as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "component fraction {frac}");
    }

    #[test]
    fn scenario_perfect_sources_echo_labels() {
        let cfg = base_scenario();
        let (graph, truth) = gen_scenario::<f64>(&cfg).unwrap();
        let labels = truth.claim_labels.unwrap();
        for a in graph.assertions() {
            assert_eq!(a.polarity, labels[a.claim]);
        }
    }

    #[test]
    fn scenario_adversarial_sources_flip_labels() {
        let cfg = ScenarioConfig { p1_mode: P1Mode::Fixed(0.0), ..base_scenario() };
        let (graph, truth) = gen_scenario::<f64>(&cfg).unwrap();
        let labels = truth.claim_labels.unwrap();
        for a in graph.assertions() {
            assert_eq!(a.polarity, !labels[a.claim]);
        }
    }

    #[test]
    fn scenario_matches_fifty_claim_setup() {
        let cfg = base_scenario();
        let (graph, truth) = gen_scenario::<f64>(&cfg).unwrap();
        assert_eq!(graph.n_sources(), 50);
        assert_eq!(graph.n_claims(), 50);
        let labels = truth.claim_labels.unwrap();
        assert_eq!(labels.iter().filter(|l| **l).count(), 25);
        assert_eq!(graph.assertions().len(), 50 * 10);
        for by in graph.by_source() {
            assert_eq!(by.len(), 10);
        }
    }

    #[test]
    fn scenario_event_count_follows_demand_rule() {
        for demand in [0.5, 1.0, 2.0] {
            let cfg = ScenarioConfig { demand_ratio: demand, ..base_scenario() };
            let (graph, _) = gen_scenario::<f64>(&cfg).unwrap();
            let expected = cfg.n_sources as f64
                * cfg.claims_per_source as f64
                * (cfg.demand_ratio * cfg.base_observations as f64).round()
                / cfg.base_observations as f64;
            assert_eq!(graph.events().len(), expected as usize, "demand {demand}");
        }
    }

    #[test]
    fn scenario_low_demand_truncates_evidence() {
        let cfg = ScenarioConfig { demand_ratio: 0.5, ..base_scenario() };
        let (graph, _) = gen_scenario::<f64>(&cfg).unwrap();
        for by in graph.by_source() {
            assert_eq!(by.len(), 5, "half demand asserts half the chosen claims");
        }
        assert_eq!(graph.events().len(), graph.assertions().len());
    }

    #[test]
    fn scenario_rejects_oversubscription() {
        let cfg = ScenarioConfig { claims_per_source: 51, ..base_scenario() };
        assert!(gen_scenario::<f64>(&cfg).is_err());
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = ScenarioConfig { p1_mode: P1Mode::Uniform01, ..base_scenario() };
        let (g1, t1) = gen_scenario::<f64>(&cfg).unwrap();
        let (g2, t2) = gen_scenario::<f64>(&cfg).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(t1.source_reliability, t2.source_reliability);
    }

    #[test]
    fn tube_sessions_deterministic_and_in_range() {
        let a: Vec<TubeSession<f64>> = gen_tube_sessions(1.0, 1.0, 500, 3).unwrap();
        let b: Vec<TubeSession<f64>> = gen_tube_sessions(1.0, 1.0, 500, 3).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!((0.0..1.0).contains(&s.discount));
            assert!((0.0..=10.0).contains(&s.defer_time));
        }
    }

    #[test]
    fn tube_defer_frequency_tracks_waiting_function() {
        // Monte Carlo vs the closed form, bucketed by defer time and a
        // coarse discount split.
        let n = 5000;
        let sessions: Vec<TubeSession<f64>> = gen_tube_sessions(1.0, 1.0, n, 18).unwrap();
        let mut emp = vec![(0.0f64, 0.0f64); 22]; // (deferred count, total)
        let mut expected = [0.0f64; 22];
        for s in &sessions {
            let bucket = (s.defer_time as usize) * 2 + usize::from(s.discount >= 0.5);
            emp[bucket].1 += 1.0;
            if s.deferred {
                emp[bucket].0 += 1.0;
            }
            expected[bucket] += (s.discount / (s.defer_time + 1.0)).clamp(0.0, 1.0);
        }
        for b in 0..22 {
            if emp[b].1 < 1.0 {
                continue;
            }
            let rate = emp[b].0 / emp[b].1;
            let want = expected[b] / emp[b].1;
            assert!((rate - want).abs() < 0.05, "bucket {b}: {rate} vs {want}");
        }
    }

    #[test]
    fn prior_with_vanishing_variance_reproduces_center() {
        let template = two_component_template(2.0);
        let prior = PriorSpec::centered_on(&template, 1e-18).unwrap();
        let draw = sample_prior(&prior, 5).unwrap();
        for (a, b) in draw.means().iter().zip(template.means().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn prior_draw_variance_matches_spec() {
        // 10000 scalar draws from N(0, 1) via repeated single draws.
        let template = MixtureParams::single(dvector![0.0], dmatrix![1.0]).unwrap();
        let prior = PriorSpec::centered_on(&template, 1.0).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let draw = sample_prior(&prior, derive_seed(17, 0, i as u64)).unwrap();
            let v = draw.means()[(0, 0)];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn prior_draw_is_deterministic() {
        let template = two_component_template(1.0);
        let prior = PriorSpec::centered_on(&template, 1.0).unwrap();
        let a = sample_prior(&prior, 21).unwrap();
        let b = sample_prior(&prior, 21).unwrap();
        assert_eq!(a.means(), b.means());
    }
}
