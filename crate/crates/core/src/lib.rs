//! Bayesian nonparametric logistic regression with Gaussian-process
//! functional effects and Dirichlet-process random intercepts, fitted by a
//! Pólya-Gamma data-augmented Gibbs sampler.

pub use nalgebra;

pub mod data;
pub mod dp;
pub mod error;
pub mod gibbs;
pub mod gp;
pub mod model;
pub mod random;
pub mod rng;
pub mod simulation;
pub mod summary;

pub use data::{build_dataset, Covariate, Dataset, DatasetSchema, Observation, RawRow};
pub use error::{Error, Result};
pub use gibbs::{run_chain, ChainConfig, DrawLayout, GibbsSampler, PosteriorDraws};
pub use model::{
    BetaPrior, ChainState, FunctionalEffects, FunctionalMode, InterceptMode, Intercepts, ModelSpec,
    ParamState,
};
pub use rng::{RngStream, Step};
pub use simulation::{evaluate, generate_dataset, generate_truth, Scenario, ScenarioTruth, StudyMetrics};
pub use summary::{
    cluster_summary, functional_summary, hpd_interval, summarize_coefficients, trace_table,
    ClusterSummary, CoefficientSummary, TraceTable,
};
