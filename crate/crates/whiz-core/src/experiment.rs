//! Declarative experiment sweeps and their reduction into result tables.
//!
//! Two data pipelines back the experiment kinds. Claim-space sweeps
//! (`vary_*` with a `scenario` block, `fpfn_sweep`) generate source/claim
//! scenarios and run the fact-finders, with the pipeline itself entering as
//! its smoothed latent-truth EM configuration. Parameter-space sweeps
//! (`vary_*` with a `gmm` block, `tube_compare`, `convergence`,
//! `bound_validity`) draw mixture parameters from the prior, generate
//! observations and score mean recovery. Every trial derives its own seed
//! from (master seed, sweep index, trial index), so trial-level parallelism
//! cannot perturb the output, and rows are reduced and sorted in a fixed
//! order: identical configs produce identical bytes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bim_bcrlb, fisher_information, whiz_estimator, BoundMode, WhizConfig,
};
use crate::em::{em_run, init_from_kmeans};
use crate::error::{Error, Result};
use crate::finders::{
    average_log, bayesian_factfinder, classify_claims, em_mle_factfinder, pagerank, sums,
    truthfinder, tube_fit, voting, whiz_claim_factfinder, FinderParams, FinderScores, TubeParams,
};
use crate::kmeans::kmeans_run;
use crate::metrics::{fp_fn_rates, mean_std, rmse, rmse_beliefs};
use crate::model::{MixtureParams, PriorSpec, SensedMatrix};
use crate::scalar::real;
use crate::synth::{
    derive_seed, gen_gmm_dataset, gen_scenario, gen_tube_sessions, sample_prior, P1Mode,
    ScenarioConfig, TubeSession,
};

/// Experiment families; the names are the JSON config values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VaryIf,
    VaryCoi,
    VaryCoiPerIf,
    VarySatisfaction,
    VaryDemand,
    Convergence,
    FpfnSweep,
    TubeCompare,
    BoundValidity,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::VaryIf => "vary_if",
            Self::VaryCoi => "vary_coi",
            Self::VaryCoiPerIf => "vary_coi_per_if",
            Self::VarySatisfaction => "vary_satisfaction",
            Self::VaryDemand => "vary_demand",
            Self::Convergence => "convergence",
            Self::FpfnSweep => "fpfn_sweep",
            Self::TubeCompare => "tube_compare",
            Self::BoundValidity => "bound_validity",
        }
    }
}

/// Which satisfaction knob a `vary_satisfaction` sweep moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SatisfactionTarget {
    /// Per-source reliability (fixed across sources at the swept value).
    #[default]
    If,
    /// Fraction of claims that are true.
    Coi,
}

/// Synthetic mixture family used by the parameter-space pipeline: K
/// components spread `2·separation` apart along the first axis, isotropic
/// `sigma2` covariance, uniform weights, and a Gaussian prior of variance
/// `prior_variance` centered on those means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSpec {
    pub k: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma2: f64,
    pub prior_variance: f64,
    /// Base observation count (a demand ratio of 1).
    pub n_obs: usize,
    /// Observations contributed per observation channel in `vary_if`.
    pub obs_per_if: usize,
}

impl Default for GmmSpec {
    fn default() -> Self {
        Self {
            k: 2,
            dim: 1,
            separation: 5.0,
            sigma2: 1.0,
            prior_variance: 1.0,
            n_obs: 100,
            obs_per_if: 10,
        }
    }
}

impl GmmSpec {
    pub fn template(&self, k: usize, dim: usize) -> Result<MixtureParams<f64>> {
        if k == 0 || dim == 0 {
            return Err(Error::Config("gmm spec needs k >= 1 and dim >= 1".to_string()));
        }
        let weights = DVector::from_element(k, 1.0 / k as f64);
        let means = DMatrix::from_fn(k, dim, |i, j| {
            if j == 0 {
                self.separation * (2.0 * i as f64 - (k as f64 - 1.0))
            } else {
                0.0
            }
        });
        let covs = (0..k).map(|_| DMatrix::identity(dim, dim) * self.sigma2).collect();
        MixtureParams::new(weights, means, covs)
    }

    pub fn prior(&self, k: usize, dim: usize) -> Result<PriorSpec<f64>> {
        PriorSpec::centered_on(&self.template(k, dim)?, self.prior_variance)
    }
}

/// Session generation for the pricing-deferral baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TubeSpec {
    pub rho: f64,
    pub lambda_p: f64,
    /// Base session count (a demand ratio / channel count of 1).
    pub sessions_base: usize,
}

impl Default for TubeSpec {
    fn default() -> Self {
        Self { rho: 1.0, lambda_p: 1.0, sessions_base: 100 }
    }
}

/// Declarative sweep: regenerate data per (sweep value, trial), run each
/// method, reduce metrics to mean/std.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<GmmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<TubeSpec>,
    pub methods: Vec<String>,
    pub trials: usize,
    /// Trial count restored by `--full` runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_trials: Option<usize>,
    pub seed: u64,
    pub sweep_values: Vec<f64>,
    /// Sweep axis for kinds that support several (`fpfn_sweep`,
    /// `tube_compare`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<String>,
    #[serde(default)]
    pub satisfaction_target: SatisfactionTarget,
    #[serde(default)]
    pub finders: FinderParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.as_str().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".to_string()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep_values must be nonempty".to_string()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".to_string()));
        }
        match self.experiment {
            ExperimentKind::FpfnSweep => {
                if self.scenario.is_none() {
                    return Err(Error::Config("fpfn_sweep needs a scenario block".to_string()));
                }
                if self.sweep_param.is_none() {
                    return Err(Error::Config(
                        "fpfn_sweep needs sweep_param (n_sources | n_claims | p1 | demand_ratio | true_claim_ratio)"
                            .to_string(),
                    ));
                }
            }
            ExperimentKind::TubeCompare => {
                if self.gmm.is_none() || self.tube.is_none() {
                    return Err(Error::Config("tube_compare needs gmm and tube blocks".to_string()));
                }
                if self.sweep_param.is_none() {
                    return Err(Error::Config(
                        "tube_compare needs sweep_param (n_if | n_coi | satisfaction | demand)".to_string(),
                    ));
                }
            }
            ExperimentKind::Convergence | ExperimentKind::BoundValidity => {
                if self.gmm.is_none() {
                    return Err(Error::Config(format!(
                        "{} needs a gmm block",
                        self.experiment.as_str()
                    )));
                }
            }
            _ => {
                if self.scenario.is_none() == self.gmm.is_none() {
                    return Err(Error::Config(
                        "vary_* experiments need exactly one of scenario or gmm".to_string(),
                    ));
                }
            }
        }
        for m in &self.methods {
            method_is_known(m)?;
        }
        Ok(())
    }
}

fn method_is_known(name: &str) -> Result<()> {
    const KNOWN: &[&str] = &[
        "whiz",
        "voting",
        "sums",
        "average_log",
        "pagerank",
        "truthfinder",
        "em_mle",
        "bayesian",
        "em",
        "kmeans",
        "tube",
        "posterior_mean",
    ];
    if KNOWN.contains(&name) {
        Ok(())
    } else {
        Err(Error::UnknownMethod(name.to_string()))
    }
}

/// One reduced measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub trial_count: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Reduced experiment output; rows sort deterministically for emission.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn sorted_rows(&self) -> Vec<&ResultRow> {
        let mut rows: Vec<&ResultRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            (&a.experiment, &a.method, &a.sweep_param)
                .cmp(&(&b.experiment, &b.method, &b.sweep_param))
                .then(a.sweep_value.total_cmp(&b.sweep_value))
                .then(a.metric.cmp(&b.metric))
        });
        rows
    }

    /// Mean column for one (method, metric), ordered by sweep value.
    pub fn series(&self, method: &str, metric: &str) -> Vec<(f64, f64)> {
        let mut points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| (r.sweep_value, r.mean))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points
    }
}

/// Values produced by one trial: (method, metric, value).
type TrialMetrics = Vec<(String, String, f64)>;

fn reduce_cell(
    cfg: &ExperimentConfig,
    sweep_param: &str,
    sweep_value: f64,
    outcomes: Vec<std::result::Result<TrialMetrics, String>>,
    table: &mut ResultTable,
) -> Result<()> {
    let trials = outcomes.len();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    // more than 20% of trials failed
    if failures * 5 > trials {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(Error::SweepCellAborted { sweep_value, failures, trials, first });
    }
    let mut series: std::collections::BTreeMap<(String, String), Vec<f64>> =
        std::collections::BTreeMap::new();
    for outcome in outcomes.into_iter().flatten() {
        for (method, metric, value) in outcome {
            series.entry((method, metric)).or_default().push(value);
        }
    }
    for ((method, metric), values) in series {
        let (mean, std) = mean_std(&values);
        table.push(ResultRow {
            experiment: cfg.experiment_name(),
            method,
            sweep_param: sweep_param.to_string(),
            sweep_value,
            trial_count: values.len(),
            metric,
            mean,
            std,
        });
    }
    Ok(())
}

/// Runs the configured sweep and reduces it to a table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::FpfnSweep => run_scenario_sweep(cfg, true),
        ExperimentKind::TubeCompare => run_tube_compare(cfg),
        ExperimentKind::BoundValidity => run_bound_validity(cfg),
        ExperimentKind::Convergence => run_convergence(cfg),
        _ => {
            if cfg.scenario.is_some() {
                run_scenario_sweep(cfg, false)
            } else {
                run_gmm_sweep(cfg)
            }
        }
    }
}

fn scenario_sweep_param(cfg: &ExperimentConfig) -> Result<String> {
    Ok(match cfg.experiment {
        ExperimentKind::VaryIf => "n_sources".to_string(),
        ExperimentKind::VaryCoi => "n_claims".to_string(),
        ExperimentKind::VaryCoiPerIf => "claims_per_source".to_string(),
        ExperimentKind::VarySatisfaction => match cfg.satisfaction_target {
            SatisfactionTarget::If => "p1".to_string(),
            SatisfactionTarget::Coi => "true_claim_ratio".to_string(),
        },
        ExperimentKind::VaryDemand => "demand_ratio".to_string(),
        ExperimentKind::FpfnSweep => cfg
            .sweep_param
            .clone()
            .ok_or_else(|| Error::Config("fpfn_sweep needs sweep_param".to_string()))?,
        other => {
            return Err(Error::Config(format!(
                "{} is not a scenario sweep",
                other.as_str()
            )))
        }
    })
}

fn apply_scenario_sweep(base: &ScenarioConfig, param: &str, value: f64) -> Result<ScenarioConfig> {
    let mut cfg = base.clone();
    match param {
        "n_sources" => cfg.n_sources = as_count(value, "n_sources")?,
        "n_claims" => {
            cfg.n_claims = as_count(value, "n_claims")?;
            cfg.claims_per_source = cfg.claims_per_source.min(cfg.n_claims);
        }
        "claims_per_source" => cfg.claims_per_source = as_count(value, "claims_per_source")?,
        "p1" => cfg.p1_mode = P1Mode::Fixed(value),
        "true_claim_ratio" => cfg.true_claim_ratio = value,
        "demand_ratio" => cfg.demand_ratio = value,
        other => {
            return Err(Error::Config(format!("unknown scenario sweep axis {other:?}")));
        }
    }
    Ok(cfg)
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    let rounded = value.round();
    if rounded < 1.0 || (value - rounded).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} sweep value {value} is not a positive count")));
    }
    Ok(rounded as usize)
}

fn run_graph_method(
    name: &str,
    graph: &crate::model::ObservationGraph,
    fp: &FinderParams,
) -> Result<FinderScores<f64>> {
    match name {
        "voting" => voting(graph),
        "sums" => sums(graph, fp.max_iter, fp.tol),
        "average_log" => average_log(graph, fp.max_iter, fp.tol),
        "pagerank" => pagerank(graph, fp.damping, fp.max_iter, fp.tol),
        "truthfinder" => {
            truthfinder(graph, fp.truthfinder_gamma, fp.truthfinder_init_trust, fp.max_iter, fp.tol)
        }
        "em_mle" => em_mle_factfinder(graph, fp.em_init_d, fp.max_iter, fp.tol),
        "bayesian" => bayesian_factfinder(graph, fp.bayes_alpha, fp.bayes_beta, fp.max_iter, fp.tol),
        // The pipeline in claim space: its latent-truth EM with the
        // Bayesian prior carrying the knowledge that sources beat chance.
        "whiz" => whiz_claim_factfinder(
            graph,
            fp.whiz_alpha,
            fp.whiz_beta,
            fp.whiz_strength,
            fp.max_iter,
            fp.tol,
        ),
        other => Err(Error::MethodPipelineMismatch {
            method: other.to_string(),
            pipeline: "scenario".to_string(),
        }),
    }
}

fn run_scenario_sweep(cfg: &ExperimentConfig, fpfn: bool) -> Result<ResultTable> {
    let base = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| Error::Config("scenario block required".to_string()))?;
    let param = scenario_sweep_param(cfg)?;
    let mut table = ResultTable::default();
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let swept = apply_scenario_sweep(base, &param, value)?;
        swept.validate().map_err(|e| Error::Config(format!("sweep value {value}: {e}")))?;
        let outcomes: Vec<std::result::Result<TrialMetrics, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let mut scenario = swept.clone();
                scenario.seed = derive_seed(cfg.seed, si as u64, trial as u64);
                let run = || -> Result<TrialMetrics> {
                    let (graph, truth) = gen_scenario::<f64>(&scenario)?;
                    let labels = truth
                        .claim_labels
                        .ok_or_else(|| Error::invalid("scenario without claim labels"))?;
                    let mut metrics = Vec::new();
                    for method in &cfg.methods {
                        let scores = run_graph_method(method, &graph, &cfg.finders)?;
                        if fpfn {
                            let predicted = classify_claims(&scores, cfg.finders.threshold)?;
                            let (fp_rate, fn_rate) = fp_fn_rates::<f64>(&predicted, &labels)?;
                            if let Some(v) = fp_rate {
                                metrics.push((method.clone(), "fp".to_string(), v));
                            }
                            if let Some(v) = fn_rate {
                                metrics.push((method.clone(), "fn".to_string(), v));
                            }
                        } else {
                            let value = rmse_beliefs(&scores.claim_belief, &labels)?;
                            metrics.push((method.clone(), "rmse".to_string(), value));
                        }
                    }
                    Ok(metrics)
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        reduce_cell(cfg, &param, value, outcomes, &mut table)?;
    }
    Ok(table)
}

/// Replaces a fraction of rows with heavy-noise draws (covariance inflated
/// 25x), modeling unreliable observation channels.
fn corrupt_rows(
    data: &SensedMatrix<f64>,
    template: &MixtureParams<f64>,
    rate: f64,
    seed: u64,
) -> Result<SensedMatrix<f64>> {
    if rate <= 0.0 {
        return Ok(data.clone());
    }
    let noisy = MixtureParams::new(
        template.weights().clone(),
        template.means().clone(),
        template.covariances().iter().map(|c| c * 25.0).collect(),
    )?;
    let replacements = gen_gmm_dataset(&noisy, data.n_rows(), derive_seed(seed, 0xC0, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC1, 0));
    let mut out = data.data().clone();
    for r in 0..out.nrows() {
        if rng.random::<f64>() < rate {
            for c in 0..out.ncols() {
                out[(r, c)] = replacements.data()[(r, c)];
            }
        }
    }
    SensedMatrix::new(out)
}

struct GmmCell {
    k: usize,
    dim: usize,
    n_obs: usize,
    corruption: f64,
}

fn gmm_cell(cfg: &ExperimentConfig, spec: &GmmSpec, value: f64) -> Result<GmmCell> {
    let mut cell =
        GmmCell { k: spec.k, dim: spec.dim, n_obs: spec.n_obs, corruption: 0.0 };
    match cfg.experiment {
        ExperimentKind::VaryIf => {
            cell.n_obs = as_count(value, "n_if")? * spec.obs_per_if;
        }
        ExperimentKind::VaryCoi => {
            cell.k = as_count(value, "n_coi")?;
        }
        ExperimentKind::VaryCoiPerIf => {
            cell.dim = as_count(value, "coi_per_if")?;
        }
        ExperimentKind::VarySatisfaction => {
            cell.corruption = (1.0 - value).clamp(0.0, 1.0);
        }
        ExperimentKind::VaryDemand => {
            cell.n_obs = ((value * spec.n_obs as f64).round() as usize).max(1);
        }
        other => {
            return Err(Error::Config(format!("{} is not a gmm sweep", other.as_str())));
        }
    }
    cell.n_obs = cell.n_obs.max(cell.k + 1);
    Ok(cell)
}

fn gmm_sweep_param(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::VaryIf => "n_if",
        ExperimentKind::VaryCoi => "n_coi",
        ExperimentKind::VaryCoiPerIf => "coi_per_if",
        ExperimentKind::VarySatisfaction => "satisfaction",
        ExperimentKind::VaryDemand => "demand_ratio",
        _ => "sweep",
    }
}

fn run_param_method(
    name: &str,
    data: &SensedMatrix<f64>,
    spec: &GmmSpec,
    cell: &GmmCell,
    seed: u64,
) -> Result<MixtureParams<f64>> {
    match name {
        "whiz" => whiz_estimator(cell.k, derive_seed(seed, 0x7E, 0), 1e-8, 500)(data),
        "em" => {
            // EM from a light-touch seeded init (random distinct rows,
            // uniform weights, pooled covariance).
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7F, 0));
            let n = data.n_rows();
            let idx = rand::seq::index::sample(&mut rng, n, cell.k.min(n)).into_vec();
            let d = data.n_cols();
            let means = DMatrix::from_fn(cell.k, d, |i, j| data.data()[(idx[i % idx.len()], j)]);
            let mut pooled = DMatrix::<f64>::zeros(d, d);
            let col_means: Vec<f64> =
                (0..d).map(|c| data.data().column(c).iter().sum::<f64>() / n as f64).collect();
            for r in 0..n {
                for i in 0..d {
                    for j in 0..d {
                        pooled[(i, j)] += (data.data()[(r, i)] - col_means[i])
                            * (data.data()[(r, j)] - col_means[j]);
                    }
                }
            }
            pooled /= n as f64;
            let init = MixtureParams::new(
                DVector::from_element(cell.k, 1.0 / cell.k as f64),
                means,
                (0..cell.k).map(|_| pooled.clone()).collect(),
            )?;
            Ok(em_run(data, &init, 1e-8, 500)?.final_params)
        }
        "kmeans" => {
            let state = kmeans_run(data, cell.k, derive_seed(seed, 0x80, 0), 100)?;
            init_from_kmeans(data, &state)
        }
        "posterior_mean" => {
            if cell.k != 1 || cell.dim != 1 {
                return Err(Error::MethodPipelineMismatch {
                    method: "posterior_mean".to_string(),
                    pipeline: "gmm with k > 1".to_string(),
                });
            }
            let pm = crate::bounds::scalar_posterior_mean(data, 0.0, spec.prior_variance, spec.sigma2)?;
            MixtureParams::single(DVector::from_element(1, pm), DMatrix::identity(1, 1) * spec.sigma2)
        }
        other => Err(Error::MethodPipelineMismatch {
            method: other.to_string(),
            pipeline: "gmm".to_string(),
        }),
    }
}

fn run_gmm_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let spec = cfg
        .gmm
        .as_ref()
        .ok_or_else(|| Error::Config("gmm block required".to_string()))?;
    let param = gmm_sweep_param(cfg.experiment);
    let mut table = ResultTable::default();
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let cell = gmm_cell(cfg, spec, value)?;
        let template = spec.template(cell.k, cell.dim)?;
        let prior = spec.prior(cell.k, cell.dim)?;
        let outcomes: Vec<std::result::Result<TrialMetrics, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(cfg.seed, si as u64, trial as u64);
                let run = || -> Result<TrialMetrics> {
                    let theta = sample_prior(&prior, derive_seed(seed, 1, 0))?;
                    let clean = gen_gmm_dataset(&theta, cell.n_obs, derive_seed(seed, 2, 0))?;
                    let data = corrupt_rows(&clean, &template, cell.corruption, seed)?;
                    let mut metrics = Vec::new();
                    for method in &cfg.methods {
                        let est = run_param_method(method, &data, spec, &cell, seed)?;
                        metrics.push((method.clone(), "rmse".to_string(), rmse(&est, &theta)?));
                    }
                    Ok(metrics)
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        reduce_cell(cfg, param, value, outcomes, &mut table)?;
    }
    Ok(table)
}

fn run_tube_compare(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let spec = cfg.gmm.as_ref().expect("validated");
    let tube = cfg.tube.as_ref().expect("validated");
    let axis = cfg.sweep_param.clone().expect("validated");
    let mut table = ResultTable::default();
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let (n_obs, n_sessions, corruption, k) = match axis.as_str() {
            "n_if" => {
                let v = as_count(value, "n_if")?;
                (v * spec.obs_per_if, v * tube.sessions_base, 0.0, spec.k)
            }
            "n_coi" => (spec.n_obs, tube.sessions_base, 0.0, as_count(value, "n_coi")?),
            "satisfaction" => {
                (spec.n_obs, tube.sessions_base, (1.0 - value).clamp(0.0, 1.0), spec.k)
            }
            "demand" => {
                let obs = ((value * spec.n_obs as f64).round() as usize).max(2);
                let sessions = ((value * tube.sessions_base as f64).round() as usize).max(10);
                (obs, sessions, 0.0, spec.k)
            }
            other => {
                return Err(Error::Config(format!("unknown tube_compare axis {other:?}")));
            }
        };
        let n_obs = n_obs.max(k + 1);
        let template = spec.template(k, spec.dim)?;
        let prior = spec.prior(k, spec.dim)?;
        let outcomes: Vec<std::result::Result<TrialMetrics, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(cfg.seed, si as u64, trial as u64);
                let run = || -> Result<TrialMetrics> {
                    let mut metrics = Vec::new();
                    for method in &cfg.methods {
                        match method.as_str() {
                            "tube" => {
                                let mut sessions: Vec<TubeSession<f64>> = gen_tube_sessions(
                                    tube.rho,
                                    tube.lambda_p,
                                    n_sessions,
                                    derive_seed(seed, 3, 0),
                                )?;
                                if corruption > 0.0 {
                                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, 0));
                                    for s in sessions.iter_mut() {
                                        if rng.random::<f64>() < corruption {
                                            s.deferred = !s.deferred;
                                        }
                                    }
                                }
                                let init = TubeParams::new(2.0, 2.0)?;
                                let fit = tube_fit(&sessions, &init, 50)?;
                                metrics.push((
                                    method.clone(),
                                    "rmse".to_string(),
                                    (fit.rho - tube.rho).abs(),
                                ));
                            }
                            _ => {
                                let theta = sample_prior(&prior, derive_seed(seed, 1, 0))?;
                                let clean =
                                    gen_gmm_dataset(&theta, n_obs, derive_seed(seed, 2, 0))?;
                                let cell = GmmCell { k, dim: spec.dim, n_obs, corruption };
                                let data = corrupt_rows(&clean, &template, corruption, seed)?;
                                let est = run_param_method(method, &data, spec, &cell, seed)?;
                                metrics.push((
                                    method.clone(),
                                    "rmse".to_string(),
                                    rmse(&est, &theta)?,
                                ));
                            }
                        }
                    }
                    Ok(metrics)
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        reduce_cell(cfg, &axis, value, outcomes, &mut table)?;
    }
    Ok(table)
}

fn run_bound_validity(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let spec = cfg.gmm.as_ref().expect("validated");
    let prior = spec.prior(spec.k, spec.dim)?;
    let mut table = ResultTable::default();
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let n_obs = as_count(value, "n_obs")?;
        let cell = GmmCell { k: spec.k, dim: spec.dim, n_obs, corruption: 0.0 };
        let seed = derive_seed(cfg.seed, si as u64, 0);
        let fisher = fisher_information(&prior.center_params(), 20_000, derive_seed(seed, 9, 0))?;
        let report = bim_bcrlb(&fisher, n_obs, &prior)?;
        let trace_bcrlb = report.trace_bcrlb.expect("bcrlb mode populates the trace");
        for method in &cfg.methods {
            let samples = crate::bounds::global_mse_samples(
                |data| run_param_method(method, data, spec, &cell, derive_seed(seed, 8, 0)),
                &prior,
                n_obs,
                cfg.trials,
                seed,
            )?;
            let (mean, std) = mean_std(&samples);
            let name = cfg.experiment_name();
            for (metric, m, s) in [
                ("global_mse", mean, std),
                ("trace_bcrlb", trace_bcrlb, 0.0),
                ("mse_over_bound", mean / trace_bcrlb, 0.0),
            ] {
                table.push(ResultRow {
                    experiment: name.clone(),
                    method: method.clone(),
                    sweep_param: "n_obs".to_string(),
                    sweep_value: value,
                    trial_count: samples.len(),
                    metric: metric.to_string(),
                    mean: m,
                    std: s,
                });
            }
        }
    }
    Ok(table)
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let spec = cfg.gmm.as_ref().expect("validated");
    let template = spec.template(spec.k, spec.dim)?;
    let prior = spec.prior(spec.k, spec.dim)?;
    let _ = &template;
    let mut table = ResultTable::default();
    for (si, &value) in cfg.sweep_values.iter().enumerate() {
        let iter_cap = as_count(value, "iterations")?;
        let outcomes: Vec<std::result::Result<TrialMetrics, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(cfg.seed, 0xCE, trial as u64);
                let run = || -> Result<TrialMetrics> {
                    let theta = sample_prior(&prior, derive_seed(seed, 1, 0))?;
                    let data = gen_gmm_dataset(&theta, spec.n_obs, derive_seed(seed, 2, 0))?;
                    let km = kmeans_run(&data, spec.k, derive_seed(seed, 3, 0), 100)?;
                    let init = init_from_kmeans(&data, &km)?;
                    let trace = em_run(&data, &init, real(0.0), iter_cap)?;
                    let mut metrics = Vec::new();
                    for method in &cfg.methods {
                        if method != "whiz" {
                            return Err(Error::MethodPipelineMismatch {
                                method: method.clone(),
                                pipeline: "convergence".to_string(),
                            });
                        }
                        metrics.push((
                            method.clone(),
                            "rmse".to_string(),
                            rmse(&trace.final_params, &theta)?,
                        ));
                        metrics.push((
                            method.clone(),
                            "log_likelihood".to_string(),
                            trace.final_log_likelihood(),
                        ));
                    }
                    Ok(metrics)
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        reduce_cell(cfg, "iterations", value, outcomes, &mut table)?;
        let _ = si;
    }
    Ok(table)
}

/// Convenience wrapper used by the pipeline report path: the batch pipeline
/// run as configured for `fit` invocations.
pub fn fit_whiz(
    data: &SensedMatrix<f64>,
    k: usize,
    mode: BoundMode,
    prior: Option<PriorSpec<f64>>,
    seed: u64,
    fisher_mc: usize,
) -> Result<crate::bounds::WhizReport<f64>> {
    let mut cfg = WhizConfig::new(k, mode, prior, seed);
    cfg.fisher_mc = fisher_mc;
    crate::bounds::whiz_run(data, &cfg)
}
