//! Unsupervised online Bayesian estimation pipeline and benchmark suite.
//!
//! The pipeline stacks three stages: seeded k-means initialization of latent
//! groups ([`kmeans`]), Gaussian-mixture EM estimation ([`em`]), and
//! estimation-quality quantification through Fisher-information bounds with
//! an optional prior and an online per-observation update ([`bounds`]).
//! Around it sit synthetic data generators ([`synth`]), the baseline
//! fact-finders it is benchmarked against ([`finders`]), evaluation metrics
//! ([`metrics`]) and a declarative experiment harness ([`experiment`]).
//!
//! All numeric code is generic over the [`scalar::Real`] scalar; the aliases
//! below fix the two concrete precisions.

pub mod bounds;
pub mod em;
pub mod error;
pub mod experiment;
pub mod finders;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

// f64 aliases: the precision the CLI and harness run at.
pub type SensedMatrix = model::SensedMatrix<f64>;
pub type MixtureParams = model::MixtureParams<f64>;
pub type Responsibilities = model::Responsibilities<f64>;
pub type GroundTruth = model::GroundTruth<f64>;
pub type PriorSpec = model::PriorSpec<f64>;
pub type KmeansState = kmeans::KmeansState<f64>;
pub type EmTrace = em::EmTrace<f64>;
pub type BoundReport = bounds::BoundReport<f64>;
pub type OnlineState = bounds::OnlineState<f64>;
pub type WhizReport = bounds::WhizReport<f64>;
pub type WhizConfig = bounds::WhizConfig<f64>;
pub type FinderScores = finders::FinderScores<f64>;
pub type TubeParams = finders::TubeParams<f64>;
pub type TubeSession = synth::TubeSession<f64>;

// f32 aliases for callers that trade precision for footprint.
pub type SensedMatrixF32 = model::SensedMatrix<f32>;
pub type MixtureParamsF32 = model::MixtureParams<f32>;
pub type ResponsibilitiesF32 = model::Responsibilities<f32>;
pub type KmeansStateF32 = kmeans::KmeansState<f32>;
pub type EmTraceF32 = em::EmTrace<f32>;
pub type FinderScoresF32 = finders::FinderScores<f32>;
