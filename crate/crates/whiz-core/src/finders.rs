//! Baseline fact-finders over a source/claim assertion graph, plus the
//! time-dependent-pricing deferral model.
//!
//! Reports carry a polarity, so every iterative finder works on polarized
//! claim support: a claim's positive and negative reporter sets are scored
//! separately and the belief compares the two sides, defaulting to 0.5 when
//! a claim was never asserted. All finders are deterministic functions of
//! (graph, hyperparameters).

use serde::{Deserialize, Serialize};

use crate::em::logsumexp;
use crate::error::{Error, Result};
use crate::model::ObservationGraph;
use crate::scalar::{real, Real};
use crate::synth::TubeSession;

/// Joint output of every finder: per-source trust (raw scale of the
/// particular algorithm) and per-claim belief in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FinderScores<T: Real> {
    pub source_trust: Vec<T>,
    pub claim_belief: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Hyperparameters surfaced through the harness config under `finders`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinderParams {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
    pub truthfinder_gamma: f64,
    pub truthfinder_init_trust: f64,
    pub em_init_d: f64,
    pub bayes_alpha: f64,
    pub bayes_beta: f64,
    /// Beta prior on a source's true-report rate for true claims when the
    /// pipeline runs in claim space; mirrored onto the false-claim rate.
    pub whiz_alpha: f64,
    pub whiz_beta: f64,
    /// Total pseudo-count behind that prior; per-source adaptation starts
    /// to dominate once a source's report count rivals it.
    pub whiz_strength: f64,
    pub threshold: f64,
}

impl Default for FinderParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            damping: 0.85,
            truthfinder_gamma: 0.3,
            truthfinder_init_trust: 0.9,
            em_init_d: 0.5,
            bayes_alpha: 1.0,
            bayes_beta: 1.0,
            whiz_alpha: 3.0,
            whiz_beta: 2.0,
            whiz_strength: 50.0,
            threshold: 0.5,
        }
    }
}

/// Polarized adjacency built once per finder run.
struct Supports {
    pos_by_claim: Vec<Vec<usize>>,
    neg_by_claim: Vec<Vec<usize>>,
    by_source: Vec<Vec<(usize, bool)>>,
}

impl Supports {
    fn build(g: &ObservationGraph) -> Self {
        let mut pos_by_claim = vec![Vec::new(); g.n_claims()];
        let mut neg_by_claim = vec![Vec::new(); g.n_claims()];
        for a in g.assertions() {
            if a.polarity {
                pos_by_claim[a.claim].push(a.source);
            } else {
                neg_by_claim[a.claim].push(a.source);
            }
        }
        Self { pos_by_claim, neg_by_claim, by_source: g.by_source() }
    }
}

fn ensure_nonempty(g: &ObservationGraph) -> Result<()> {
    if g.assertions().is_empty() {
        return Err(Error::invalid("graph has no assertions"));
    }
    Ok(())
}

fn ratio_belief<T: Real>(pos: T, neg: T) -> T {
    let total = pos + neg;
    if total > T::zero() {
        pos / total
    } else {
        real(0.5)
    }
}

/// Majority vote: belief is the fraction of positive reports, 0.5 for
/// unasserted claims; trust is uniform.
pub fn voting<T: Real>(g: &ObservationGraph) -> Result<FinderScores<T>> {
    let sup = Supports::build(g);
    let claim_belief = (0..g.n_claims())
        .map(|c| {
            let pos = T::from_usize(sup.pos_by_claim[c].len()).unwrap();
            let neg = T::from_usize(sup.neg_by_claim[c].len()).unwrap();
            ratio_belief(pos, neg)
        })
        .collect();
    Ok(FinderScores {
        source_trust: vec![T::one(); g.n_sources()],
        claim_belief,
        iterations: 1,
        converged: true,
    })
}

fn hubs_authorities<T: Real>(
    g: &ObservationGraph,
    max_iter: usize,
    tol: T,
    log_scaled: bool,
) -> Result<FinderScores<T>> {
    ensure_nonempty(g)?;
    let sup = Supports::build(g);
    let n_claims = g.n_claims();
    let mut trust = vec![T::one(); g.n_sources()];
    let mut pos = vec![T::zero(); n_claims];
    let mut neg = vec![T::zero(); n_claims];
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iter {
        iterations += 1;
        let mut new_pos = vec![T::zero(); n_claims];
        let mut new_neg = vec![T::zero(); n_claims];
        for c in 0..n_claims {
            for &s in &sup.pos_by_claim[c] {
                new_pos[c] += trust[s];
            }
            for &s in &sup.neg_by_claim[c] {
                new_neg[c] += trust[s];
            }
        }
        let max_b = new_pos
            .iter()
            .chain(new_neg.iter())
            .fold(T::zero(), |a, b| a.max(*b));
        if max_b > T::zero() {
            for v in new_pos.iter_mut().chain(new_neg.iter_mut()) {
                *v /= max_b;
            }
        }
        let mut new_trust: Vec<T> = sup
            .by_source
            .iter()
            .map(|claims| {
                let total = claims.iter().fold(T::zero(), |acc, &(c, polarity)| {
                    acc + if polarity { new_pos[c] } else { new_neg[c] }
                });
                if log_scaled {
                    let deg = claims.len();
                    if deg == 0 {
                        T::zero()
                    } else {
                        let deg_t = T::from_usize(deg).unwrap();
                        (T::one() + deg_t).ln() * total / deg_t
                    }
                } else {
                    total
                }
            })
            .collect();
        let max_t = new_trust.iter().fold(T::zero(), |a, b| a.max(*b));
        if max_t > T::zero() {
            for v in new_trust.iter_mut() {
                *v /= max_t;
            }
        }
        let change = trust
            .iter()
            .zip(&new_trust)
            .chain(pos.iter().zip(&new_pos))
            .chain(neg.iter().zip(&new_neg))
            .fold(T::zero(), |acc, (old, new)| acc.max((*old - *new).abs()));
        trust = new_trust;
        pos = new_pos;
        neg = new_neg;
        if change < tol {
            converged = true;
            break;
        }
    }
    let claim_belief = (0..n_claims).map(|c| ratio_belief(pos[c], neg[c])).collect();
    Ok(FinderScores { source_trust: trust, claim_belief, iterations, converged })
}

/// Hubs/authorities credit propagation: claim support sums the trust of its
/// reporters, source trust sums the support of its claims, both
/// max-normalized per iteration.
pub fn sums<T: Real>(g: &ObservationGraph, max_iter: usize, tol: T) -> Result<FinderScores<T>> {
    hubs_authorities(g, max_iter, tol, false)
}

/// Like `sums`, but source trust is the log-scaled average support
/// `ln(1 + deg) · mean(support)`, which keeps single-claim sources alive.
pub fn average_log<T: Real>(
    g: &ObservationGraph,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    hubs_authorities(g, max_iter, tol, true)
}

/// Random-walk scoring on the bipartite graph of sources and polarized
/// claim nodes (an edge in both directions per assertion, uniform
/// teleportation). Claim belief compares the positive and negative node
/// scores.
pub fn pagerank<T: Real>(
    g: &ObservationGraph,
    damping: T,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    ensure_nonempty(g)?;
    if damping <= T::zero() || damping >= T::one() {
        return Err(Error::invalid("damping must lie strictly between 0 and 1"));
    }
    let s = g.n_sources();
    // Lazily materialized polarized claim nodes, in first-seen order.
    let mut facet_ids: std::collections::BTreeMap<(usize, bool), usize> =
        std::collections::BTreeMap::new();
    for a in g.assertions() {
        let next = s + facet_ids.len();
        facet_ids.entry((a.claim, a.polarity)).or_insert(next);
    }
    let n = s + facet_ids.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in g.assertions() {
        let f = facet_ids[&(a.claim, a.polarity)];
        neighbors[a.source].push(f);
        neighbors[f].push(a.source);
    }
    let n_t = T::from_usize(n).unwrap();
    let uniform = T::one() / n_t;
    let mut rank = vec![uniform; n];
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iter {
        iterations += 1;
        let mut dangling = T::zero();
        for (node, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                dangling += rank[node];
            }
        }
        let mut next = vec![(T::one() - damping) / n_t + damping * dangling / n_t; n];
        for (node, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let share = damping * rank[node] / T::from_usize(nbrs.len()).unwrap();
            for &m in nbrs {
                next[m] += share;
            }
        }
        let change = rank
            .iter()
            .zip(&next)
            .fold(T::zero(), |acc, (a, b)| acc + (*a - *b).abs());
        rank = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    let claim_belief = (0..g.n_claims())
        .map(|c| {
            let pos = facet_ids.get(&(c, true)).map_or(T::zero(), |&i| rank[i]);
            let neg = facet_ids.get(&(c, false)).map_or(T::zero(), |&i| rank[i]);
            ratio_belief(pos, neg)
        })
        .collect();
    Ok(FinderScores {
        source_trust: rank[..s].to_vec(),
        claim_belief,
        iterations,
        converged,
    })
}

/// Iterative trustworthiness: source trust feeds claim confidence through a
/// dampened logistic of the signed trust mass, and trust is re-estimated as
/// the mean confidence of the source's own reports.
pub fn truthfinder<T: Real>(
    g: &ObservationGraph,
    gamma_damp: T,
    init_trust: T,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    ensure_nonempty(g)?;
    if init_trust <= T::zero() || init_trust >= T::one() {
        return Err(Error::invalid("init_trust must lie strictly between 0 and 1"));
    }
    if gamma_damp <= T::zero() || gamma_damp >= T::one() {
        return Err(Error::invalid("gamma dampening must lie strictly between 0 and 1"));
    }
    let sup = Supports::build(g);
    let cap: T = T::one() - real(1e-12);
    let mut trust = vec![init_trust; g.n_sources()];
    let mut confidence = vec![real::<T>(0.5); g.n_claims()];
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iter {
        iterations += 1;
        let tau: Vec<T> = trust.iter().map(|t| -(T::one() - (*t).min(cap)).ln()).collect();
        for c in 0..g.n_claims() {
            let mut signed = T::zero();
            for &s in &sup.pos_by_claim[c] {
                signed += tau[s];
            }
            for &s in &sup.neg_by_claim[c] {
                signed -= tau[s];
            }
            confidence[c] = T::one() / (T::one() + (-gamma_damp * signed).exp());
        }
        let new_trust: Vec<T> = sup
            .by_source
            .iter()
            .zip(&trust)
            .map(|(claims, old)| {
                if claims.is_empty() {
                    return *old;
                }
                let total = claims.iter().fold(T::zero(), |acc, &(c, polarity)| {
                    acc + if polarity { confidence[c] } else { T::one() - confidence[c] }
                });
                total / T::from_usize(claims.len()).unwrap()
            })
            .collect();
        let change = trust
            .iter()
            .zip(&new_trust)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        trust = new_trust;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(FinderScores { source_trust: trust, claim_belief: confidence, iterations, converged })
}

const EM_A_INIT: f64 = 0.7;
const EM_B_INIT: f64 = 0.3;
const RATE_FLOOR: f64 = 1e-6;

fn clamp_rate<T: Real>(v: T) -> T {
    v.max(real(RATE_FLOOR)).min(T::one() - real(RATE_FLOOR))
}

/// One Beta prior over a Bernoulli rate, in pseudo-count form.
#[derive(Debug, Clone, Copy)]
struct RatePrior<T: Real> {
    mean: T,
    pseudo_num: T,
    pseudo_den: T,
    alpha: T,
    beta: T,
}

impl<T: Real> RatePrior<T> {
    fn new(alpha: T, beta: T) -> Result<Self> {
        if alpha <= T::zero() || beta <= T::zero() {
            return Err(Error::invalid("pseudo-count parameters must be positive"));
        }
        Ok(Self {
            mean: alpha / (alpha + beta),
            pseudo_num: alpha - T::one(),
            pseudo_den: alpha + beta - real::<T>(2.0),
            alpha,
            beta,
        })
    }

    fn is_flat(&self) -> bool {
        self.pseudo_num == T::zero() && self.pseudo_den == T::zero()
    }

    /// Posterior-mode update from weighted counts; falls back to the prior
    /// mean when there is no information at all.
    fn update(&self, num: T, den: T) -> T {
        let tiny: T = real(1e-12);
        if den + self.pseudo_den > tiny {
            clamp_rate((num + self.pseudo_num) / (den + self.pseudo_den))
        } else {
            clamp_rate(self.mean)
        }
    }

    /// Log prior density up to a constant.
    fn log_density(&self, p: T) -> T {
        (self.alpha - T::one()) * p.ln() + (self.beta - T::one()) * (T::one() - p).ln()
    }
}

/// Latent-truth EM shared by the plain and smoothed fact-finders. Each
/// report rate (and the claim prior) carries its own Beta pseudo-counts;
/// flat `Beta(1, 1)` priors reduce the update to plain maximum likelihood.
fn em_mle_core<T: Real>(
    g: &ObservationGraph,
    init_d: T,
    a_prior: RatePrior<T>,
    b_prior: RatePrior<T>,
    d_prior: RatePrior<T>,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    ensure_nonempty(g)?;
    if init_d <= T::zero() || init_d >= T::one() {
        return Err(Error::invalid("init_d must lie strictly between 0 and 1"));
    }
    let sup = Supports::build(g);
    let n_sources = g.n_sources();
    let n_claims = g.n_claims();

    let mut a = vec![clamp_rate::<T>(real(EM_A_INIT)); n_sources];
    let mut b = vec![clamp_rate::<T>(real(EM_B_INIT)); n_sources];
    let mut d = clamp_rate(init_d);
    let mut z = vec![d; n_claims];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut objective_prev: Option<T> = None;

    let reporters: Vec<Vec<(usize, bool)>> = {
        let mut by_claim = vec![Vec::new(); n_claims];
        for c in 0..n_claims {
            for &s in &sup.pos_by_claim[c] {
                by_claim[c].push((s, true));
            }
            for &s in &sup.neg_by_claim[c] {
                by_claim[c].push((s, false));
            }
        }
        by_claim
    };

    for _ in 0..max_iter {
        iterations += 1;
        // E-step in log space; the per-claim normalizers accumulate the
        // observed likelihood at the parameters in force this iteration.
        let mut observed_ll = T::zero();
        let mut new_z = vec![T::zero(); n_claims];
        for c in 0..n_claims {
            if reporters[c].is_empty() {
                new_z[c] = d;
                continue;
            }
            let mut log_true = d.ln();
            let mut log_false = (T::one() - d).ln();
            for &(s, polarity) in &reporters[c] {
                if polarity {
                    log_true += a[s].ln();
                    log_false += b[s].ln();
                } else {
                    log_true += (T::one() - a[s]).ln();
                    log_false += (T::one() - b[s]).ln();
                }
            }
            let norm = logsumexp(&[log_true, log_false]);
            observed_ll += norm;
            new_z[c] = (log_true - norm).exp();
        }

        // Penalized objective at the current parameters (observed
        // likelihood plus log prior); with flat priors this is the observed
        // log-likelihood itself. EM guarantees it never drops.
        let mut objective = observed_ll;
        if !(a_prior.is_flat() && b_prior.is_flat() && d_prior.is_flat()) {
            for s in 0..n_sources {
                objective += a_prior.log_density(a[s]) + b_prior.log_density(b[s]);
            }
            objective += d_prior.log_density(d);
        }
        if let Some(prev) = objective_prev {
            let drop = prev - objective;
            if drop > real(1e-9) {
                return Err(Error::LikelihoodDecreased {
                    iteration: iterations,
                    drop: drop.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        objective_prev = Some(objective);

        let change = z
            .iter()
            .zip(&new_z)
            .fold(T::zero(), |acc, (old, new)| acc.max((*old - *new).abs()));
        z = new_z;

        // M-step with per-rate pseudo-counts
        for s in 0..n_sources {
            let claims = &sup.by_source[s];
            if claims.is_empty() {
                a[s] = clamp_rate(a_prior.mean);
                b[s] = clamp_rate(b_prior.mean);
                continue;
            }
            let mut num_a = T::zero();
            let mut den_a = T::zero();
            let mut num_b = T::zero();
            let mut den_b = T::zero();
            for &(c, polarity) in claims {
                let zc = z[c];
                den_a += zc;
                den_b += T::one() - zc;
                if polarity {
                    num_a += zc;
                    num_b += T::one() - zc;
                }
            }
            a[s] = a_prior.update(num_a, den_a);
            b[s] = b_prior.update(num_b, den_b);
        }
        let z_sum = z.iter().fold(T::zero(), |acc, v| acc + *v);
        let m_t = T::from_usize(n_claims).unwrap();
        d = d_prior.update(z_sum, m_t);

        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(FinderScores { source_trust: a, claim_belief: z, iterations, converged })
}

/// Maximum-likelihood fact-finder: latent claim truth with per-source
/// true/false report rates, fitted by EM.
pub fn em_mle_factfinder<T: Real>(
    g: &ObservationGraph,
    init_d: T,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    let flat = RatePrior::new(T::one(), T::one())?;
    em_mle_core(g, init_d, flat, flat, flat, max_iter, tol)
}

/// The same EM with Beta(alpha, beta) pseudo-counts on the report rates and
/// the claim prior; a source with no assertions sits at the prior mean
/// `alpha / (alpha + beta)`.
pub fn bayesian_factfinder<T: Real>(
    g: &ObservationGraph,
    alpha: T,
    beta: T,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    let prior = RatePrior::new(alpha, beta)?;
    em_mle_core(g, real(0.5), prior, prior, prior, max_iter, tol)
}

/// The pipeline's claim-space configuration: the latent-truth EM with prior
/// knowledge about the sources. The true-report rate carries a Beta prior
/// with mean `alpha / (alpha + beta)` and total pseudo-count `strength`,
/// the false-claim rate carries its exact mirror, and the claim prior is
/// anchored at one half with the same pseudo-count mass. The mirrored pair
/// keeps the per-report log-odds shifts symmetric, so the claim prior
/// cannot drift off by feedback; the data takes over wherever its count
/// rivals `strength` (per source for the rates, per graph for the claim
/// prior). Requires alpha > beta so the prior breaks the label-flip
/// symmetry.
pub fn whiz_claim_factfinder<T: Real>(
    g: &ObservationGraph,
    alpha: T,
    beta: T,
    strength: T,
    max_iter: usize,
    tol: T,
) -> Result<FinderScores<T>> {
    if alpha <= beta {
        return Err(Error::invalid("claim-space pipeline needs alpha > beta"));
    }
    if strength <= real(2.0) {
        return Err(Error::invalid("claim-space pipeline needs strength > 2"));
    }
    let mean_a = alpha / (alpha + beta);
    let a_prior = RatePrior::new(mean_a * strength, (T::one() - mean_a) * strength)?;
    let b_prior = RatePrior::new((T::one() - mean_a) * strength, mean_a * strength)?;
    let d_prior = RatePrior::new(strength, strength)?;
    em_mle_core(g, real(0.5), a_prior, b_prior, d_prior, max_iter, tol)
}

/// Thresholds beliefs into labels; a belief exactly at the threshold counts
/// as true.
pub fn classify_claims<T: Real>(scores: &FinderScores<T>, threshold: T) -> Result<Vec<bool>> {
    if threshold <= T::zero() || threshold >= T::one() {
        return Err(Error::invalid("threshold must lie strictly between 0 and 1"));
    }
    Ok(scores.claim_belief.iter().map(|b| *b >= threshold).collect())
}

/// Parameters of the deferral probability `w(d, τ) = d / (λ_p (τ+1)^ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeParams<T: Real> {
    pub rho: T,
    pub lambda_p: T,
}

impl<T: Real> TubeParams<T> {
    pub fn new(rho: T, lambda_p: T) -> Result<Self> {
        if rho <= T::zero() || lambda_p <= T::zero() {
            return Err(Error::invalid("rho and lambda_p must be positive"));
        }
        Ok(Self { rho, lambda_p })
    }
}

/// Deferral probability, clipped into [0, 1].
pub fn tube_waiting<T: Real>(d: T, tau: T, params: &TubeParams<T>) -> T {
    let raw = d / (params.lambda_p * (tau + T::one()).powf(params.rho));
    raw.max(T::zero()).min(T::one())
}

/// Bernoulli log-likelihood of observed sessions under the waiting function,
/// with probabilities padded away from {0, 1}.
pub fn tube_log_likelihood<T: Real>(sessions: &[TubeSession<T>], params: &TubeParams<T>) -> T {
    let pad: T = real(1e-9);
    sessions.iter().fold(T::zero(), |acc, s| {
        let w = tube_waiting(s.discount, s.defer_time, params).max(pad).min(T::one() - pad);
        acc + if s.deferred { w.ln() } else { (T::one() - w).ln() }
    })
}

const TUBE_RHO_RANGE: (f64, f64) = (1e-3, 20.0);
const TUBE_LAMBDA_RANGE: (f64, f64) = (1e-3, 100.0);

fn golden_section_max<T: Real>(mut lo: T, mut hi: T, mut f: impl FnMut(T) -> T) -> (T, T) {
    let inv_phi: T = real(0.618_033_988_749_894_9);
    let mut c = hi - (hi - lo) * inv_phi;
    let mut d = lo + (hi - lo) * inv_phi;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - (hi - lo) * inv_phi;
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + (hi - lo) * inv_phi;
            fd = f(d);
        }
    }
    let mid = (lo + hi) * real(0.5);
    (mid, f(mid))
}

/// Coordinate-ascent maximum likelihood for the waiting-function parameters
/// (golden-section per coordinate over fixed brackets). The likelihood never
/// decreases across sweeps; data with only one outcome is rejected as
/// non-identifiable.
pub fn tube_fit<T: Real>(
    sessions: &[TubeSession<T>],
    init: &TubeParams<T>,
    max_iter: usize,
) -> Result<TubeParams<T>> {
    if sessions.len() < 10 {
        return Err(Error::invalid("tube fit needs at least 10 sessions"));
    }
    let deferred = sessions.iter().filter(|s| s.deferred).count();
    if deferred == 0 || deferred == sessions.len() {
        return Err(Error::NonIdentifiable(
            "sessions must contain both deferred and non-deferred outcomes".to_string(),
        ));
    }
    TubeParams::new(init.rho, init.lambda_p)?;
    let mut best = *init;
    let mut best_ll = tube_log_likelihood(sessions, &best);
    let tol: T = real(1e-10);
    for _ in 0..max_iter.max(1) {
        let before = best_ll;
        let lambda = best.lambda_p;
        let (rho, ll_rho) = golden_section_max(
            real(TUBE_RHO_RANGE.0),
            real(TUBE_RHO_RANGE.1),
            |r| tube_log_likelihood(sessions, &TubeParams { rho: r, lambda_p: lambda }),
        );
        if ll_rho > best_ll {
            best = TubeParams { rho, lambda_p: lambda };
            best_ll = ll_rho;
        }
        let rho_fixed = best.rho;
        let (lambda, ll_lambda) = golden_section_max(
            real(TUBE_LAMBDA_RANGE.0),
            real(TUBE_LAMBDA_RANGE.1),
            |l| tube_log_likelihood(sessions, &TubeParams { rho: rho_fixed, lambda_p: l }),
        );
        if ll_lambda > best_ll {
            best = TubeParams { rho: rho_fixed, lambda_p: lambda };
            best_ll = ll_lambda;
        }
        if best_ll - before < tol * (T::one() + before.abs()) {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Assertion;
    use crate::synth::{derive_seed, gen_scenario, gen_tube_sessions, P1Mode, ScenarioConfig};
    use approx::assert_relative_eq;

    fn graph(n_sources: usize, n_claims: usize, edges: &[(usize, usize, bool)]) -> ObservationGraph {
        ObservationGraph::new(
            n_sources,
            n_claims,
            edges
                .iter()
                .map(|&(source, claim, polarity)| Assertion { source, claim, polarity })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn voting_counts_and_defaults() {
        let g = graph(3, 3, &[
            (0, 0, true),
            (1, 0, true),
            (2, 0, false),
            (0, 1, true),
            (1, 1, true),
        ]);
        let scores = voting::<f64>(&g).unwrap();
        assert_relative_eq!(scores.claim_belief[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(scores.claim_belief[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(scores.claim_belief[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sums_single_edge_normalizes_to_one() {
        let g = graph(1, 1, &[(0, 0, true)]);
        let scores = sums::<f64>(&g, 200, 1e-8).unwrap();
        assert_relative_eq!(scores.source_trust[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(scores.claim_belief[0], 1.0, epsilon = 1e-12);
        assert!(scores.converged);
    }

    #[test]
    fn sums_disconnected_identical_stars_score_identically() {
        // two identical stars: sources 0..2 -> claim 0, sources 3..5 -> claim 1
        let g = graph(6, 2, &[
            (0, 0, true),
            (1, 0, true),
            (2, 0, false),
            (3, 1, true),
            (4, 1, true),
            (5, 1, false),
        ]);
        let scores = sums::<f64>(&g, 200, 1e-10).unwrap();
        assert_relative_eq!(scores.claim_belief[0], scores.claim_belief[1], epsilon = 1e-9);
        for i in 0..3 {
            assert_relative_eq!(scores.source_trust[i], scores.source_trust[i + 3], epsilon = 1e-9);
        }
    }

    fn random_graph(seed: u64) -> ObservationGraph {
        let cfg = ScenarioConfig {
            n_sources: 50,
            n_claims: 50,
            claims_per_source: 10,
            true_claim_ratio: 0.5,
            p1_mode: P1Mode::Uniform01,
            p2_range: (0.5, 1.0),
            demand_ratio: 1.0,
            base_observations: 10,
            seed,
        };
        gen_scenario::<f64>(&cfg).unwrap().0
    }

    #[test]
    fn sums_and_average_log_converge_on_random_graphs() {
        for seed in 0..20 {
            let g = random_graph(seed);
            let s = sums::<f64>(&g, 200, 1e-8).unwrap();
            assert!(s.converged, "sums seed {seed} took {} iterations", s.iterations);
            let a = average_log::<f64>(&g, 200, 1e-8).unwrap();
            assert!(a.converged, "average_log seed {seed}");
        }
    }

    #[test]
    fn average_log_trust_uses_log_degree_scaling() {
        // one source with one claim against one source with four claims,
        // all beliefs equal after the first support pass
        let g = graph(2, 5, &[
            (0, 0, true),
            (1, 1, true),
            (1, 2, true),
            (1, 3, true),
            (1, 4, true),
        ]);
        // one iteration: support of every claim is 1 (after normalization);
        // trust(0) = ln(2)·1, trust(1) = ln(5)·1, then max-normalized.
        let scores = average_log::<f64>(&g, 1, 1e-30).unwrap();
        let expected = 2.0f64.ln() / 5.0f64.ln();
        assert_relative_eq!(scores.source_trust[0], expected, epsilon = 1e-12);
        assert_relative_eq!(scores.source_trust[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn average_log_equals_sums_on_regular_degree() {
        let g = graph(4, 4, &[
            (0, 0, true),
            (0, 1, false),
            (1, 1, true),
            (1, 2, true),
            (2, 2, false),
            (2, 3, true),
            (3, 3, true),
            (3, 0, true),
        ]);
        let s = sums::<f64>(&g, 300, 1e-12).unwrap();
        let a = average_log::<f64>(&g, 300, 1e-12).unwrap();
        for (x, y) in s.source_trust.iter().zip(&a.source_trust) {
            assert_relative_eq!(x, y, epsilon = 1e-8);
        }
        for (x, y) in s.claim_belief.iter().zip(&a.claim_belief) {
            assert_relative_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn pagerank_two_node_symmetry() {
        let g = graph(1, 1, &[(0, 0, true)]);
        let scores = pagerank::<f64>(&g, 0.85, 200, 1e-12).unwrap();
        assert_relative_eq!(scores.source_trust[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(scores.claim_belief[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pagerank_mass_is_conserved() {
        let g = random_graph(3);
        let scores = pagerank::<f64>(&g, 0.85, 200, 1e-14).unwrap();
        // reconstruct total mass: source nodes plus facet nodes; the facet
        // scores are folded into beliefs, so check via a small graph where
        // all nodes are observable instead.
        assert!(scores.converged);
        let small = graph(2, 1, &[(0, 0, true), (1, 0, true)]);
        let s = pagerank::<f64>(&small, 0.85, 300, 1e-14).unwrap();
        // chain s0 - facet - s1: by symmetry the sources tie
        assert_relative_eq!(s.source_trust[0], s.source_trust[1], epsilon = 1e-12);
    }

    #[test]
    fn pagerank_chain_matches_linear_system_oracle() {
        // nodes: s0, s1, facet; edges s0<->f, s1<->f
        let g = graph(2, 1, &[(0, 0, true), (1, 0, true)]);
        let damping = 0.85;
        // dense transition: column-stochastic P with p(f|s)=1, p(s|f)=1/2
        let p = nalgebra::dmatrix![
            0.0, 0.0, 0.5;
            0.0, 0.0, 0.5;
            1.0, 1.0, 0.0
        ];
        let n = 3.0;
        let lhs = nalgebra::DMatrix::identity(3, 3) - p * damping;
        let rhs = nalgebra::DVector::from_element(3, (1.0 - damping) / n);
        let stationary = lhs.lu().solve(&rhs).unwrap();
        let scores = pagerank::<f64>(&g, damping, 500, 1e-14).unwrap();
        assert!((scores.source_trust[0] - stationary[0]).abs() < 1e-8);
        assert!((scores.source_trust[1] - stationary[1]).abs() < 1e-8);
    }

    #[test]
    fn truthfinder_single_source_hand_value() {
        let g = graph(1, 1, &[(0, 0, true)]);
        let scores = truthfinder::<f64>(&g, 0.3, 0.9, 1, 1e-30).unwrap();
        // tau = -ln(0.1) = 2.302585..., sigma = 1/(1+exp(-0.3 tau))
        let expected = 1.0 / (1.0 + (-0.3 * 0.1f64.recip().ln()).exp());
        assert_relative_eq!(scores.claim_belief[0], expected, epsilon = 1e-12);
        assert_relative_eq!(scores.claim_belief[0], 0.6661, epsilon = 1e-4);
    }

    #[test]
    fn truthfinder_unasserted_claim_sits_at_half() {
        let g = graph(1, 2, &[(0, 0, true)]);
        let scores = truthfinder::<f64>(&g, 0.3, 0.9, 50, 1e-10).unwrap();
        assert_relative_eq!(scores.claim_belief[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn truthfinder_converged_state_is_stable() {
        let g = random_graph(11);
        let a = truthfinder::<f64>(&g, 0.3, 0.9, 500, 1e-12).unwrap();
        assert!(a.converged);
        let b = truthfinder::<f64>(&g, 0.3, 0.9, a.iterations + 50, 1e-12).unwrap();
        for (x, y) in a.source_trust.iter().zip(&b.source_trust) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn em_mle_separable_instance_saturates_labels() {
        // 3 perfect sources over 4 claims with consistent reports
        let labels = [true, false, true, false];
        let mut edges = Vec::new();
        for s in 0..3 {
            for (c, &l) in labels.iter().enumerate() {
                edges.push((s, c, l));
            }
        }
        let g = graph(3, 4, &edges);
        let scores = em_mle_factfinder::<f64>(&g, 0.5, 500, 1e-12).unwrap();
        for (c, &l) in labels.iter().enumerate() {
            let z = scores.claim_belief[c];
            if l {
                assert!(z > 1.0 - 1e-6, "claim {c}: {z}");
            } else {
                assert!(z < 1e-6, "claim {c}: {z}");
            }
        }
    }

    #[test]
    fn em_mle_recovers_labels_from_reliable_sources() {
        let mut correct = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let cfg = ScenarioConfig {
                n_sources: 50,
                n_claims: 50,
                claims_per_source: 10,
                true_claim_ratio: 0.5,
                p1_mode: P1Mode::Fixed(0.9),
                p2_range: (1.0, 1.0),
                demand_ratio: 1.0,
                base_observations: 10,
                seed: derive_seed(500, 0, seed),
            };
            let (g, truth) = gen_scenario::<f64>(&cfg).unwrap();
            let labels = truth.claim_labels.unwrap();
            let scores = em_mle_factfinder::<f64>(&g, 0.5, 300, 1e-10).unwrap();
            let predicted = classify_claims(&scores, 0.5).unwrap();
            correct += predicted.iter().zip(&labels).filter(|(p, a)| p == a).count();
            total += labels.len();
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy >= 0.9, "accuracy {accuracy}");
    }

    #[test]
    fn bayesian_with_uniform_prior_equals_plain_em() {
        let g = random_graph(5);
        let plain = em_mle_factfinder::<f64>(&g, 0.5, 300, 1e-10).unwrap();
        let smoothed = bayesian_factfinder::<f64>(&g, 1.0, 1.0, 300, 1e-10).unwrap();
        assert_eq!(plain.claim_belief, smoothed.claim_belief);
        assert_eq!(plain.source_trust, smoothed.source_trust);
    }

    #[test]
    fn bayesian_idle_source_sits_at_prior_mean() {
        // source 1 never asserts anything
        let g = graph(2, 2, &[(0, 0, true), (0, 1, false)]);
        let scores = bayesian_factfinder::<f64>(&g, 3.0, 2.0, 100, 1e-10).unwrap();
        assert_relative_eq!(scores.source_trust[1], 3.0 / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_prior_pulls_rates_up() {
        let g = random_graph(8);
        let plain = em_mle_factfinder::<f64>(&g, 0.5, 300, 1e-10).unwrap();
        let smoothed = bayesian_factfinder::<f64>(&g, 100.0, 1.0, 300, 1e-10).unwrap();
        for (s, (p, q)) in plain.source_trust.iter().zip(&smoothed.source_trust).enumerate() {
            assert!(q >= p, "source {s}: smoothed {q} < plain {p}");
        }
    }

    #[test]
    fn classify_respects_threshold_and_boundary() {
        let scores = FinderScores::<f64> {
            source_trust: vec![],
            claim_belief: vec![0.9, 0.1, 0.5],
            iterations: 1,
            converged: true,
        };
        assert_eq!(classify_claims(&scores, 0.5).unwrap(), vec![true, false, true]);
        assert!(classify_claims(&scores, 1.0).is_err());
        assert!(classify_claims(&scores, 0.0).is_err());
    }

    #[test]
    fn finders_are_equivariant_under_claim_permutation() {
        let g = random_graph(13);
        let m = g.n_claims();
        // rotate claims by 7
        let perm: Vec<usize> = (0..m).map(|c| (c + 7) % m).collect();
        let permuted = ObservationGraph::new(
            g.n_sources(),
            m,
            g.assertions()
                .iter()
                .map(|a| Assertion { source: a.source, claim: perm[a.claim], polarity: a.polarity })
                .collect(),
        )
        .unwrap();
        type Finder = fn(&ObservationGraph) -> FinderScores<f64>;
        let finders: Vec<(&str, Finder)> = vec![
            ("voting", |g| voting(g).unwrap()),
            ("sums", |g| sums(g, 300, 1e-10).unwrap()),
            ("average_log", |g| average_log(g, 300, 1e-10).unwrap()),
            ("pagerank", |g| pagerank(g, 0.85, 300, 1e-12).unwrap()),
            ("truthfinder", |g| truthfinder(g, 0.3, 0.9, 300, 1e-10).unwrap()),
            ("em_mle", |g| em_mle_factfinder(g, 0.5, 300, 1e-10).unwrap()),
        ];
        for (name, f) in finders {
            let base = f(&g);
            let shifted = f(&permuted);
            for c in 0..m {
                let diff = (base.claim_belief[c] - shifted.claim_belief[perm[c]]).abs();
                assert!(diff <= 1e-9, "{name} claim {c} differs by {diff}");
            }
        }
    }

    #[test]
    fn beliefs_stay_in_unit_interval() {
        for seed in [2, 9, 31] {
            let g = random_graph(seed);
            let all = [
                voting::<f64>(&g).unwrap(),
                sums(&g, 300, 1e-10).unwrap(),
                average_log(&g, 300, 1e-10).unwrap(),
                pagerank(&g, 0.85, 300, 1e-12).unwrap(),
                truthfinder(&g, 0.3, 0.9, 300, 1e-10).unwrap(),
                em_mle_factfinder(&g, 0.5, 300, 1e-10).unwrap(),
                bayesian_factfinder(&g, 2.0, 2.0, 300, 1e-10).unwrap(),
            ];
            for scores in &all {
                for b in &scores.claim_belief {
                    assert!((0.0..=1.0).contains(b), "belief {b}");
                }
                for t in &scores.source_trust {
                    assert!(t.is_finite());
                }
            }
        }
    }

    #[test]
    fn tube_waiting_hand_values() {
        let p = TubeParams::new(2.0, 1.0).unwrap();
        assert_relative_eq!(tube_waiting(1.0, 0.0, &p), 1.0, epsilon = 1e-12);
        assert_relative_eq!(tube_waiting(1.0, 1.0, &p), 0.25, epsilon = 1e-12);
        let p = TubeParams::new(1.0, 1.0).unwrap();
        assert_relative_eq!(tube_waiting(3.0, 0.0, &p), 1.0, epsilon = 1e-12);
        assert_relative_eq!(tube_waiting(2.0, 3.0, &p), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tube_fit_rejects_single_outcome_data() {
        let sessions: Vec<TubeSession<f64>> = (0..20)
            .map(|i| TubeSession { discount: 0.5, defer_time: i as f64 % 3.0, deferred: true })
            .collect();
        let err = tube_fit(&sessions, &TubeParams::new(1.0, 1.0).unwrap(), 50).unwrap_err();
        assert!(matches!(err, Error::NonIdentifiable(_)));
    }

    #[test]
    fn tube_fit_recovers_patience_index() {
        let mut errors: Vec<f64> = (0..20u64)
            .map(|seed| {
                let sessions: Vec<TubeSession<f64>> =
                    gen_tube_sessions(1.0, 1.0, 5000, derive_seed(900, 1, seed)).unwrap();
                let fit = tube_fit(&sessions, &TubeParams::new(2.0, 2.0).unwrap(), 50).unwrap();
                (fit.rho - 1.0).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        assert!(median <= 0.15, "median patience error {median}");
    }

    #[test]
    fn tube_fit_at_truth_does_not_wander() {
        let sessions: Vec<TubeSession<f64>> = gen_tube_sessions(1.0, 1.0, 5000, 77).unwrap();
        let truth = TubeParams::new(1.0, 1.0).unwrap();
        let ll_truth = tube_log_likelihood(&sessions, &truth);
        let fit = tube_fit(&sessions, &truth, 50).unwrap();
        let ll_fit = tube_log_likelihood(&sessions, &fit);
        assert!(ll_fit >= ll_truth - 1e-9);
        assert!((fit.rho - 1.0).abs() < 0.2, "rho {}", fit.rho);
    }
}
