//! `whiz` — synthetic data generation, estimation, bound reports, online
//! filtering traces and benchmark sweeps from the command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use whiz_core::bounds::{
    bim_bcrlb, crlb, fisher_information, online_filter, whiz_run, BoundMode, BoundReport,
    WhizConfig,
};
use whiz_core::em::{em_run, init_from_kmeans};
use whiz_core::experiment::{run_experiment, ExperimentConfig};
use whiz_core::finders::{
    average_log, bayesian_factfinder, classify_claims, em_mle_factfinder, pagerank, sums,
    truthfinder, tube_fit, tube_log_likelihood, voting, whiz_claim_factfinder, FinderParams,
    FinderScores, TubeParams,
};
use whiz_core::io::{
    fmt_sig, load_graph_csv, load_matrix_csv, load_params_json, load_prior_json,
    load_sessions_csv, render_result_table_csv, render_result_table_json, save_events_csv,
    save_graph_csv, save_matrix_csv, save_results, save_sessions_csv, GroundTruthDto,
    MixtureParamsDto, OutputFormat,
};
use whiz_core::kmeans::kmeans_run;
use whiz_core::model::PriorSpec;
use whiz_core::synth::{gen_gmm_dataset, gen_scenario, gen_tube_sessions, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "whiz",
    about = "Unsupervised online Bayesian estimation pipeline, baseline fact-finders and benchmark harness",
    version
)]
struct Cli {
    /// Master seed (overrides config/default seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trial count override for bench runs.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output path (subcommand-specific meaning).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restore full-scale trial counts where a config declares them.
    #[arg(long, global = true)]
    full: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic inputs (mixture datasets, scenarios, sessions).
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run one estimation method on a dataset, graph or session log.
    Fit(FitArgs),
    /// Report estimation bounds for given parameters (and prior).
    Bound(BoundArgs),
    /// Stream a CSV through the online filter and emit the per-step trace.
    Online(OnlineArgs),
    /// Run an experiment sweep from a JSON config and write the table.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Sample a mixture dataset from parameters given as JSON.
    Gmm(GenGmmArgs),
    /// Generate a source/claim scenario from a JSON config.
    Scenario(GenScenarioArgs),
    /// Generate deferral sessions from the waiting function.
    Tube(GenTubeArgs),
}

#[derive(Args)]
struct GenGmmArgs {
    /// Mixture parameters JSON ({weights, means, covariances}).
    #[arg(long)]
    params: PathBuf,
    /// Number of observations.
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct GenScenarioArgs {
    /// ScenarioConfig JSON.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the deduplicated assertion graph CSV.
    #[arg(long)]
    out_graph: PathBuf,
    /// Where to write the ground truth JSON.
    #[arg(long)]
    out_truth: PathBuf,
    /// Optional raw event stream CSV (repeats included).
    #[arg(long)]
    out_events: Option<PathBuf>,
}

#[derive(Args)]
struct GenTubeArgs {
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    n: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Whiz,
    Em,
    Kmeans,
    Voting,
    Sums,
    AverageLog,
    Pagerank,
    Truthfinder,
    EmMle,
    Bayesian,
    WhizClaim,
    Tube,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OfflineCrlb,
    OfflineBcrlb,
    Online,
}

impl From<ModeArg> for BoundMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OfflineCrlb => BoundMode::OfflineCrlb,
            ModeArg::OfflineBcrlb => BoundMode::OfflineBcrlb,
            ModeArg::Online => BoundMode::Online,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Estimation method.
    #[arg(long, value_enum)]
    method: FitMethod,
    /// Input file: observation CSV (matrix methods), assertion CSV (graph
    /// methods) or session CSV (tube).
    #[arg(long)]
    input: PathBuf,
    /// Number of mixture components (matrix methods).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Bound path for the pipeline.
    #[arg(long, value_enum, default_value = "offline-crlb")]
    mode: ModeArg,
    /// Prior variance; builds a zero-centered prior when no prior file is
    /// given.
    #[arg(long)]
    prior_var: Option<f64>,
    /// Full prior JSON ({center, variance, weights, covariances}).
    #[arg(long)]
    prior_file: Option<PathBuf>,
    /// Monte Carlo draws per Fisher estimate.
    #[arg(long, default_value_t = 20_000)]
    fisher_mc: usize,
    /// Classification threshold for graph methods.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct BoundArgs {
    /// Mixture parameters JSON.
    #[arg(long)]
    params: PathBuf,
    /// Observation count the bound refers to.
    #[arg(long)]
    n_obs: usize,
    /// Prior variance; when present the Bayesian bound is reported too.
    #[arg(long)]
    prior_var: Option<f64>,
    /// Full prior JSON (overrides --prior-var).
    #[arg(long)]
    prior_file: Option<PathBuf>,
    /// Monte Carlo draws for the Fisher estimate.
    #[arg(long, default_value_t = 20_000)]
    n_mc: usize,
}

#[derive(Args)]
struct OnlineArgs {
    /// Observation CSV streamed row by row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    prior_var: f64,
    #[arg(long)]
    prior_file: Option<PathBuf>,
    /// EM tolerance for each warm-started refit.
    #[arg(long, default_value_t = 1e-8)]
    refit_tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Serialize)]
struct EmSummary {
    iterations: usize,
    converged: bool,
    log_likelihood: f64,
}

#[derive(Serialize)]
struct BoundSummary {
    trace_crlb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_bcrlb: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<MixtureParamsDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    em: Option<EmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<BoundSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<ScoreReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tube: Option<TubeReport>,
}

#[derive(Serialize)]
struct ScoreReport {
    source_trust: Vec<f64>,
    claim_belief: Vec<f64>,
    classified: Vec<bool>,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct TubeReport {
    rho: f64,
    lambda_p: f64,
    log_likelihood: f64,
}

#[derive(Serialize)]
struct FullBoundReport {
    fisher: Vec<Vec<f64>>,
    crlb: Vec<Vec<f64>>,
    trace_crlb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bim: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bcrlb: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_bcrlb: Option<f64>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn bound_to_report(b: &BoundReport<f64>) -> FullBoundReport {
    FullBoundReport {
        fisher: matrix_to_rows(&b.fisher),
        crlb: matrix_to_rows(&b.crlb),
        trace_crlb: b.trace_crlb,
        bim: b.bim.as_ref().map(matrix_to_rows),
        bcrlb: b.bcrlb.as_ref().map(matrix_to_rows),
        trace_bcrlb: b.trace_bcrlb,
    }
}

/// Zero-centered prior with a uniform-weight, unit-covariance template.
fn default_prior(k: usize, dim: usize, variance: f64) -> whiz_core::Result<PriorSpec<f64>> {
    PriorSpec::new(
        DMatrix::zeros(k, dim),
        variance,
        DVector::from_element(k, 1.0 / k as f64),
        (0..k).map(|_| DMatrix::identity(dim, dim)).collect(),
    )
}

fn resolve_prior(
    prior_file: &Option<PathBuf>,
    prior_var: Option<f64>,
    k: usize,
    dim: usize,
) -> whiz_core::Result<Option<PriorSpec<f64>>> {
    if let Some(path) = prior_file {
        return Ok(Some(load_prior_json(path)?));
    }
    match prior_var {
        Some(v) => Ok(Some(default_prior(k, dim, v)?)),
        None => Ok(None),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen(gen) => run_gen(gen, seed, cli.out),
        Command::Fit(args) => run_fit(args, seed),
        Command::Bound(args) => run_bound(args, seed, cli.out),
        Command::Online(args) => run_online(args, seed, cli.out),
        Command::Bench(args) => run_bench(args, cli.seed, cli.trials, cli.full, cli.out),
    }
}

fn run_gen(gen: GenCommand, seed: u64, out: Option<PathBuf>) -> Result<(), String> {
    match gen {
        GenCommand::Gmm(args) => {
            let out = out.ok_or("gen gmm needs --out for the dataset CSV")?;
            let params = load_params_json::<f64>(&args.params).map_err(|e| e.to_string())?;
            let data = gen_gmm_dataset(&params, args.n, seed).map_err(|e| e.to_string())?;
            save_matrix_csv(&data, &out).map_err(|e| e.to_string())?;
            eprintln!("wrote {} rows to {}", data.n_rows(), out.display());
            Ok(())
        }
        GenCommand::Scenario(args) => {
            let text = std::fs::read_to_string(&args.config).map_err(|e| e.to_string())?;
            let mut cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            cfg.seed = seed;
            let (graph, truth) = gen_scenario::<f64>(&cfg).map_err(|e| e.to_string())?;
            save_graph_csv(&graph, &args.out_graph).map_err(|e| e.to_string())?;
            let truth_json = serde_json::to_string_pretty(&GroundTruthDto::from_truth(&truth))
                .map_err(|e| e.to_string())?;
            std::fs::write(&args.out_truth, truth_json).map_err(|e| e.to_string())?;
            if let Some(events) = &args.out_events {
                save_events_csv(&graph, events).map_err(|e| e.to_string())?;
            }
            eprintln!(
                "wrote {} assertions ({} events) over {} sources x {} claims",
                graph.assertions().len(),
                graph.events().len(),
                graph.n_sources(),
                graph.n_claims()
            );
            Ok(())
        }
        GenCommand::Tube(args) => {
            let out = out.ok_or("gen tube needs --out for the session CSV")?;
            let sessions = gen_tube_sessions::<f64>(args.rho, args.lambda, args.n, seed)
                .map_err(|e| e.to_string())?;
            save_sessions_csv(&sessions, &out).map_err(|e| e.to_string())?;
            eprintln!("wrote {} sessions to {}", sessions.len(), out.display());
            Ok(())
        }
    }
}

fn run_fit(args: FitArgs, seed: u64) -> Result<(), String> {
    let finders = FinderParams::default();
    let graph_fit = |scores: FinderScores<f64>, name: &str| -> Result<(), String> {
        let classified =
            classify_claims(&scores, args.threshold).map_err(|e| e.to_string())?;
        print_json(&FitReport {
            method: name.to_string(),
            params: None,
            em: None,
            bound: None,
            scores: Some(ScoreReport {
                source_trust: scores.source_trust,
                claim_belief: scores.claim_belief,
                classified,
                iterations: scores.iterations,
                converged: scores.converged,
            }),
            tube: None,
        })
    };
    match args.method {
        FitMethod::Whiz => {
            let data = load_matrix_csv::<f64>(&args.input).map_err(|e| e.to_string())?;
            let prior = resolve_prior(&args.prior_file, args.prior_var, args.k, data.n_cols())
                .map_err(|e| e.to_string())?;
            let mut cfg = WhizConfig::new(args.k, args.mode.into(), prior, seed);
            cfg.fisher_mc = args.fisher_mc;
            let report = whiz_run(&data, &cfg).map_err(|e| e.to_string())?;
            print_json(&FitReport {
                method: "whiz".to_string(),
                params: Some(MixtureParamsDto::from_params(&report.em_trace.final_params)),
                em: Some(EmSummary {
                    iterations: report.em_trace.iterations,
                    converged: report.em_trace.converged,
                    log_likelihood: report.em_trace.final_log_likelihood(),
                }),
                bound: Some(BoundSummary {
                    trace_crlb: report.bound.trace_crlb,
                    trace_bcrlb: report.bound.trace_bcrlb,
                }),
                scores: None,
                tube: None,
            })
        }
        FitMethod::Em | FitMethod::Kmeans => {
            let data = load_matrix_csv::<f64>(&args.input).map_err(|e| e.to_string())?;
            let km = kmeans_run(&data, args.k, seed, 100).map_err(|e| e.to_string())?;
            let init = init_from_kmeans(&data, &km).map_err(|e| e.to_string())?;
            let (params, em) = if matches!(args.method, FitMethod::Em) {
                let trace = em_run(&data, &init, 1e-8, 500).map_err(|e| e.to_string())?;
                let summary = EmSummary {
                    iterations: trace.iterations,
                    converged: trace.converged,
                    log_likelihood: trace.final_log_likelihood(),
                };
                (trace.final_params, Some(summary))
            } else {
                (init, None)
            };
            print_json(&FitReport {
                method: if matches!(args.method, FitMethod::Em) { "em" } else { "kmeans" }
                    .to_string(),
                params: Some(MixtureParamsDto::from_params(&params)),
                em,
                bound: None,
                scores: None,
                tube: None,
            })
        }
        FitMethod::Tube => {
            let sessions = load_sessions_csv::<f64>(&args.input).map_err(|e| e.to_string())?;
            let init = TubeParams::new(2.0, 2.0).map_err(|e| e.to_string())?;
            let fit = tube_fit(&sessions, &init, 50).map_err(|e| e.to_string())?;
            print_json(&FitReport {
                method: "tube".to_string(),
                params: None,
                em: None,
                bound: None,
                scores: None,
                tube: Some(TubeReport {
                    rho: fit.rho,
                    lambda_p: fit.lambda_p,
                    log_likelihood: tube_log_likelihood(&sessions, &fit),
                }),
            })
        }
        graph_method => {
            let graph = load_graph_csv(&args.input).map_err(|e| e.to_string())?;
            let fp = &finders;
            let (name, scores) = match graph_method {
                FitMethod::Voting => ("voting", voting::<f64>(&graph)),
                FitMethod::Sums => ("sums", sums(&graph, fp.max_iter, fp.tol)),
                FitMethod::AverageLog => ("average_log", average_log(&graph, fp.max_iter, fp.tol)),
                FitMethod::Pagerank => {
                    ("pagerank", pagerank(&graph, fp.damping, fp.max_iter, fp.tol))
                }
                FitMethod::Truthfinder => (
                    "truthfinder",
                    truthfinder(
                        &graph,
                        fp.truthfinder_gamma,
                        fp.truthfinder_init_trust,
                        fp.max_iter,
                        fp.tol,
                    ),
                ),
                FitMethod::EmMle => {
                    ("em_mle", em_mle_factfinder(&graph, fp.em_init_d, fp.max_iter, fp.tol))
                }
                FitMethod::Bayesian => (
                    "bayesian",
                    bayesian_factfinder(&graph, fp.bayes_alpha, fp.bayes_beta, fp.max_iter, fp.tol),
                ),
                FitMethod::WhizClaim => (
                    "whiz_claim",
                    whiz_claim_factfinder(
                        &graph,
                        fp.whiz_alpha,
                        fp.whiz_beta,
                        fp.whiz_strength,
                        fp.max_iter,
                        fp.tol,
                    ),
                ),
                _ => unreachable!("matrix methods handled above"),
            };
            graph_fit(scores.map_err(|e| e.to_string())?, name)
        }
    }
}

fn run_bound(args: BoundArgs, seed: u64, out: Option<PathBuf>) -> Result<(), String> {
    let params = load_params_json::<f64>(&args.params).map_err(|e| e.to_string())?;
    let fisher = fisher_information(&params, args.n_mc, seed).map_err(|e| e.to_string())?;
    let prior = resolve_prior(&args.prior_file, args.prior_var, params.k(), params.dim())
        .map_err(|e| e.to_string())?;
    let report = match prior {
        Some(prior) => bim_bcrlb(&fisher, args.n_obs, &prior).map_err(|e| e.to_string())?,
        None => {
            let crlb_matrix = crlb(&fisher, args.n_obs).map_err(|e| e.to_string())?;
            BoundReport {
                trace_crlb: crlb_matrix.trace(),
                fisher,
                crlb: crlb_matrix,
                bim: None,
                bcrlb: None,
                trace_bcrlb: None,
            }
        }
    };
    let rendered = bound_to_report(&report);
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&rendered).map_err(|e| e.to_string())?;
            std::fs::write(path, text).map_err(|e| e.to_string())?;
            Ok(())
        }
        None => print_json(&rendered),
    }
}

fn run_online(args: OnlineArgs, seed: u64, out: Option<PathBuf>) -> Result<(), String> {
    let data = load_matrix_csv::<f64>(&args.input).map_err(|e| e.to_string())?;
    let km = kmeans_run(&data, args.k, seed, 100).map_err(|e| e.to_string())?;
    let init = init_from_kmeans(&data, &km).map_err(|e| e.to_string())?;
    let prior = match &args.prior_file {
        Some(path) => load_prior_json(path).map_err(|e| e.to_string())?,
        None => default_prior(args.k, data.n_cols(), args.prior_var).map_err(|e| e.to_string())?,
    };
    let states = online_filter(&data.rows_as_vectors(), &init, &prior, args.refit_tol, 500)
        .map_err(|e| e.to_string())?;
    let p = args.k * data.n_cols();
    let mut text = String::from("step,trace_bcrlb");
    for i in 0..p {
        text.push_str(&format!(",mu{i}"));
    }
    text.push('\n');
    for state in &states {
        let trace = *state
            .trace_bcrlb_history
            .last()
            .expect("every state records its own trace");
        text.push_str(&format!("{},{}", state.seen, fmt_sig(trace)));
        let theta = state.params.mean_parameter_vector();
        for i in 0..p {
            text.push_str(&format!(",{}", fmt_sig(theta[i])));
        }
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| e.to_string()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_bench(
    args: BenchArgs,
    seed: Option<u64>,
    trials: Option<usize>,
    full: bool,
    out: Option<PathBuf>,
) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if full {
        if let Some(full_trials) = cfg.full_trials {
            cfg.trials = full_trials;
        }
    }
    if let Some(trials) = trials {
        cfg.trials = trials;
    }
    let table = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let out_path = out.or_else(|| cfg.output.as_ref().map(PathBuf::from));
    match out_path {
        Some(path) => {
            let format = match args.format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            };
            save_results(&table, &path, format).map_err(|e| e.to_string())?;
            eprintln!("wrote {} rows to {}", table.rows().len(), path.display());
            Ok(())
        }
        None => {
            let rendered = match args.format {
                FormatArg::Csv => render_result_table_csv(&table),
                FormatArg::Json => render_result_table_json(&table),
            }
            .map_err(|e| e.to_string())?;
            print!("{rendered}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
