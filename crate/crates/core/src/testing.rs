//! Test statistics (likelihood-ratio, Rao, Wald), degrees of freedom, and
//! chi-square p-values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::chi2::{chi2_cdf, chi2_quantile};
use crate::error::{QltError, Result, StageExt};
use crate::estimate::{fit_adaptive_with_ctx, FitResult, OptimizerConfig};
use crate::likelihood::{hess_fd, QuasiLikContext};
use crate::model::{Hypothesis, ModelSpec};
use crate::preprocess::{estimate_noise_variance, local_means};
use crate::simulate::ObservationSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Lrt,
    Rao,
    Wald,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::Lrt, TestKind::Rao, TestKind::Wald];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Lrt => "lrt",
            TestKind::Rao => "rao",
            TestKind::Wald => "wald",
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = QltError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrt" => Ok(TestKind::Lrt),
            "rao" => Ok(TestKind::Rao),
            "wald" => Ok(TestKind::Wald),
            other => Err(QltError::InvalidInput(format!("unknown test kind '{other}'"))),
        }
    }
}

/// Packaged outcome of one hypothesis test.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub stat_alpha: f64,
    pub stat_beta: f64,
    pub stat_total: f64,
    pub dof: usize,
    pub p_value: f64,
    /// True when a tiny negative statistic was clamped to zero.
    pub clamp_applied: bool,
    pub fit: FitResult,
}

/// Likelihood-ratio statistics `(16/9) (L1(hat) - L1(tilde))` and
/// `2 (L2(hat) - L2(tilde))`; a side with nothing restricted scores 0.
pub fn lrt_statistics(fit: &FitResult, hyp: &Hypothesis) -> (f64, f64) {
    let t1 = if hyp.r1() > 0 {
        16.0 / 9.0 * (fit.l1_at_hat - fit.l1_at_tilde)
    } else {
        0.0
    };
    let t2 = if hyp.r2() > 0 {
        2.0 * (fit.l2_at_hat - fit.l2_at_tilde)
    } else {
        0.0
    };
    (t1, t2)
}

/// Quadratic form `g M^-1 g^T` of a score against a positive-definite
/// normalizer.
pub fn rao_form(scaled_grad: &DVector<f64>, normalizer: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(normalizer.clone()).ok_or(QltError::SingularNormalizer)?;
    Ok(scaled_grad.dot(&chol.solve(scaled_grad)))
}

/// Quadratic form `scale * diff^T M diff`.
pub fn wald_form(diff: &DVector<f64>, normalizer: &DMatrix<f64>, scale: f64) -> f64 {
    scale * diff.dot(&(normalizer * diff))
}

/// All pieces of the three statistic families for one fitted hypothesis,
/// computed once so every family can be reported from the same fit.
pub struct TestBattery {
    fit: FitResult,
    r1: usize,
    r2: usize,
    /// `-(9 / 8 k_n) hess_l1(alpha_hat)`, present when `r1 > 0`.
    norm_alpha: Option<DMatrix<f64>>,
    /// `-(1 / T_n) hess_l2(beta_hat | alpha_hat)`, present when `r2 > 0`.
    norm_beta: Option<DMatrix<f64>>,
    /// `(1 / sqrt(k_n)) grad_l1(alpha_tilde)`.
    score_alpha: Option<DVector<f64>>,
    /// `(1 / sqrt(T_n)) grad_l2(beta_tilde | alpha_hat)`.
    score_beta: Option<DVector<f64>>,
    k_n: f64,
    t_n: f64,
}

impl TestBattery {
    pub fn new(ctx: &QuasiLikContext, hyp: &Hypothesis, cfg: &OptimizerConfig) -> Result<Self> {
        if hyp.r() == 0 {
            return Err(QltError::InvalidHypothesis(
                "hypothesis restricts no component (r = 0)".into(),
            ));
        }
        let fit = fit_adaptive_with_ctx(ctx, hyp, cfg)?;
        Self::from_fit(ctx, hyp, fit)
    }

    /// Build the battery around an existing fit (used when one full fit is
    /// shared across several reports).
    pub fn from_fit(ctx: &QuasiLikContext, hyp: &Hypothesis, fit: FitResult) -> Result<Self> {
        let k_n = ctx.scheme().k_n() as f64;
        let t_n = ctx.scheme().t_n();
        let (mut norm_alpha, mut score_alpha) = (None, None);
        if hyp.r1() > 0 {
            let hess = ctx.hess_l1(&fit.alpha_hat).stage("normalizer-alpha")?;
            norm_alpha = Some(hess * (-9.0 / (8.0 * k_n)));
            let grad = ctx.grad_l1(&fit.alpha_tilde).stage("score-alpha")?;
            score_alpha = Some(grad / k_n.sqrt());
        }
        let (mut norm_beta, mut score_beta) = (None, None);
        if hyp.r2() > 0 {
            let profile = ctx.l2_profile(&fit.alpha_hat).stage("normalizer-beta")?;
            let hess = hess_fd(&|th| profile.grad(th), &fit.beta_hat).stage("normalizer-beta")?;
            norm_beta = Some(hess * (-1.0 / t_n));
            let grad = profile.grad(&fit.beta_tilde).stage("score-beta")?;
            score_beta = Some(grad / t_n.sqrt());
        }
        Ok(Self {
            fit,
            r1: hyp.r1(),
            r2: hyp.r2(),
            norm_alpha,
            norm_beta,
            score_alpha,
            score_beta,
            k_n,
            t_n,
        })
    }

    pub fn fit(&self) -> &FitResult {
        &self.fit
    }

    pub fn dof(&self) -> usize {
        self.r1 + self.r2
    }

    fn raw_pair(&self, kind: TestKind) -> Result<(f64, f64)> {
        let hyp_pair = match kind {
            TestKind::Lrt => {
                let t1 = if self.r1 > 0 {
                    16.0 / 9.0 * (self.fit.l1_at_hat - self.fit.l1_at_tilde)
                } else {
                    0.0
                };
                let t2 = if self.r2 > 0 {
                    2.0 * (self.fit.l2_at_hat - self.fit.l2_at_tilde)
                } else {
                    0.0
                };
                (t1, t2)
            }
            TestKind::Rao => {
                let r1 = match (&self.score_alpha, &self.norm_alpha) {
                    (Some(g), Some(m)) => rao_form(g, m)?,
                    _ => 0.0,
                };
                let r2 = match (&self.score_beta, &self.norm_beta) {
                    (Some(g), Some(m)) => rao_form(g, m)?,
                    _ => 0.0,
                };
                (r1, r2)
            }
            TestKind::Wald => {
                let w1 = match &self.norm_alpha {
                    Some(m) => {
                        let diff = &self.fit.alpha_hat - &self.fit.alpha_tilde;
                        wald_form(&diff, m, self.k_n)
                    }
                    None => 0.0,
                };
                let w2 = match &self.norm_beta {
                    Some(m) => {
                        let diff = &self.fit.beta_hat - &self.fit.beta_tilde;
                        wald_form(&diff, m, self.t_n)
                    }
                    None => 0.0,
                };
                (w1, w2)
            }
        };
        Ok(hyp_pair)
    }

    pub fn report(&self, kind: TestKind) -> Result<TestReport> {
        let (raw_a, raw_b) = self.raw_pair(kind)?;
        // Sup differences are non-negative in exact arithmetic; tiny
        // negatives are numerics and get clamped rather than erroring.
        let clamp_applied = raw_a < 0.0 || raw_b < 0.0;
        let stat_alpha = raw_a.max(0.0);
        let stat_beta = raw_b.max(0.0);
        let stat_total = stat_alpha + stat_beta;
        let dof = self.dof();
        let p_value = 1.0 - chi2_cdf(stat_total, dof as u32)?;
        Ok(TestReport {
            kind,
            stat_alpha,
            stat_beta,
            stat_total,
            dof,
            p_value,
            clamp_applied,
            fit: self.fit.clone(),
        })
    }
}

/// Rao statistics from a fitted battery-less call, per the printed
/// normalizations; exposed for API parity with the other statistic families.
pub fn rao_statistics(ctx: &QuasiLikContext, fit: &FitResult, hyp: &Hypothesis) -> Result<(f64, f64)> {
    let battery = TestBattery::from_fit(ctx, hyp, fit.clone())?;
    battery.raw_pair(TestKind::Rao)
}

/// Wald statistics from an existing fit.
pub fn wald_statistics(ctx: &QuasiLikContext, fit: &FitResult, hyp: &Hypothesis) -> Result<(f64, f64)> {
    let battery = TestBattery::from_fit(ctx, hyp, fit.clone())?;
    battery.raw_pair(TestKind::Wald)
}

/// End-to-end test: preprocess, fit, statistic, p-value.
pub fn run_test(
    obs: &ObservationSeries,
    model: &ModelSpec,
    hyp: &Hypothesis,
    kind: TestKind,
    cfg: &OptimizerConfig,
) -> Result<TestReport> {
    let means = local_means(obs).stage("preprocess")?;
    let lambda = estimate_noise_variance(obs);
    let ctx = QuasiLikContext::new(&means, &lambda, model).stage("preprocess")?;
    let battery = TestBattery::new(&ctx, hyp, cfg).stage("fit")?;
    battery.report(kind).stage("statistic")
}
