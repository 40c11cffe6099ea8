//! Local-mean quasi-likelihood inference and parametric hypothesis tests for
//! ergodic diffusions observed at high frequency under additive observation
//! noise.
//!
//! The pipeline: simulate or ingest a noisy record `Y = X + Lambda^(1/2) eps`
//! of an SDE `dX = b(X, beta) dt + a(X, alpha) dW`, average it over disjoint
//! blocks of length `p_n = floor(h_n^(-1/tau))`, estimate the noise variance,
//! maximize the two quasi-likelihoods adaptively (`Lambda`, then `alpha`,
//! then `beta`), and test zero restrictions with likelihood-ratio, Rao, or
//! Wald statistics, all of which are chi-square under the null.

pub mod chi2;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod likelihood;
pub mod model;
pub mod preprocess;
pub mod simulate;
pub mod testing;

pub use error::{QltError, Result};
pub use estimate::{fit_adaptive, maximize, FitResult, Objective, OptimizerConfig};
pub use experiment::{run_study, StudyConfig, StudyResult};
pub use likelihood::QuasiLikContext;
pub use model::{restrict, validate_model, Hypothesis, Interval, ModelSpec, SamplingScheme};
pub use preprocess::{derive_tuning, estimate_noise_variance, local_means, LocalMeanSeries, NoiseVarianceEstimate};
pub use simulate::{contaminate, euler_maruyama, NoiseSpec, ObservationSeries, RngStream};
pub use testing::{chi2_cdf, chi2_quantile, run_test, TestBattery, TestKind, TestReport};
