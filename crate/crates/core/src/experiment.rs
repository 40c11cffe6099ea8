//! Monte Carlo study harness: seeded replicates, rejection-rate tables, and
//! empirical distribution functions of the test statistics.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chi2::{chi2_cdf, chi2_quantile};
use crate::error::{QltError, Result, StageExt};
use crate::estimate::OptimizerConfig;
use crate::likelihood::QuasiLikContext;
use crate::model::{Hypothesis, ModelSpec};
use crate::preprocess::{estimate_noise_variance, local_means};
use crate::simulate::{contaminate, euler_maruyama, replicate_streams, NoiseSpec, RngStream};
use crate::testing::{TestBattery, TestKind};

/// Everything one study needs; replicates depend only on this and their
/// index, so results cannot depend on scheduling.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub alpha_star: DVector<f64>,
    pub beta_star: DVector<f64>,
    pub noise: NoiseSpec,
    pub x0: DVector<f64>,
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub substeps: usize,
    pub hypothesis: Hypothesis,
    pub kinds: Vec<TestKind>,
    pub replicates: usize,
    pub master_seed: u64,
    pub levels: Vec<f64>,
    pub opt: OptimizerConfig,
    /// Fraction of failed replicates the study tolerates before aborting.
    pub max_error_fraction: f64,
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(QltError::InvalidInput("replicate count must be >= 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(QltError::InvalidInput("at least one statistic kind required".into()));
        }
        if self.levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(QltError::InvalidInput(
                "significance levels must lie in (0, 1)".into(),
            ));
        }
        if self.hypothesis.r() == 0 {
            return Err(QltError::InvalidHypothesis(
                "study hypothesis restricts no component".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the rejection-rate table.
#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub kind: TestKind,
    pub level: f64,
    pub critical_value: f64,
    pub rejections: usize,
    pub effective_replicates: usize,
    pub rate: f64,
    pub std_error: f64,
}

/// Aggregated study output. Per-replicate statistics are stored in replicate
/// order (failures skipped), so reruns are bitwise comparable.
#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub dof: usize,
    pub stats: BTreeMap<TestKind, Vec<f64>>,
    pub rejection: Vec<RateRow>,
    pub levels: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    pub replicates_requested: usize,
}

impl StudyResult {
    pub fn effective_replicates(&self) -> usize {
        self.stats.values().next().map_or(0, Vec::len)
    }

    /// Empirical rejection rate of one statistic family at one level.
    pub fn rate(&self, kind: TestKind, level: f64) -> Option<&RateRow> {
        self.rejection
            .iter()
            .find(|r| r.kind == kind && (r.level - level).abs() < 1e-12)
    }

    /// Sorted statistic values with their empirical distribution heights.
    pub fn edf(&self, kind: TestKind) -> Vec<(f64, f64)> {
        edf_points(self.stats.get(&kind).map_or(&[][..], Vec::as_slice))
    }

    /// EDF pairs plus the chi-square reference cdf sampled on the same grid.
    pub fn edf_export(&self, kind: TestKind) -> Result<Vec<EdfRow>> {
        let points = self.edf(kind);
        let mut rows = Vec::with_capacity(points.len());
        for (x, f_hat) in points {
            rows.push(EdfRow {
                x,
                edf: f_hat,
                chi2_ref: chi2_cdf(x.max(0.0), self.dof as u32)?,
            });
        }
        Ok(rows)
    }

    /// Kolmogorov-Smirnov distance between the statistic EDF and the
    /// chi-square reference with the study's degrees of freedom.
    pub fn ks_distance_to_chi2(&self, kind: TestKind) -> Result<f64> {
        let stats = self
            .stats
            .get(&kind)
            .ok_or_else(|| QltError::InvalidInput(format!("kind {kind:?} not in study")))?;
        ks_distance(stats, |x| chi2_cdf(x.max(0.0), self.dof as u32).unwrap_or(0.0))
    }

    /// Self-diagnostic: fraction of random half-splits whose two rejection
    /// rates differ by at most `4 * binomial SE`.
    pub fn split_half_agreement(&self, kind: TestKind, level: f64, splits: usize, seed: u64) -> Result<f64> {
        let stats = self
            .stats
            .get(&kind)
            .ok_or_else(|| QltError::InvalidInput(format!("kind {kind:?} not in study")))?;
        let n = stats.len();
        if n < 4 {
            return Err(QltError::InvalidInput("too few replicates to split".into()));
        }
        let crit = chi2_quantile(1.0 - level, self.dof as u32)?;
        let rejected: Vec<bool> = stats.iter().map(|&s| s > crit).collect();
        let mut rng = RngStream::new(seed, 0).rng();
        let half = n / 2;
        let mut ok = 0usize;
        for _ in 0..splits {
            let mut idx: Vec<usize> = (0..n).collect();
            // Fisher-Yates.
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let r1 = idx[..half].iter().filter(|&&i| rejected[i]).count() as f64 / half as f64;
            let r2 = idx[half..].iter().filter(|&&i| rejected[i]).count() as f64
                / (n - half) as f64;
            let pooled = rejected.iter().filter(|&&b| b).count() as f64 / n as f64;
            let se = (pooled * (1.0 - pooled) * (1.0 / half as f64 + 1.0 / (n - half) as f64))
                .sqrt()
                .max(1e-12);
            if (r1 - r2).abs() <= 4.0 * se {
                ok += 1;
            }
        }
        Ok(ok as f64 / splits as f64)
    }
}

/// One row of the exported EDF table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EdfRow {
    pub x: f64,
    pub edf: f64,
    pub chi2_ref: f64,
}

/// Right-continuous EDF points `(x_(i), (i+1)/N)` over sorted values.
pub fn edf_points(stats: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Kolmogorov-Smirnov sup-distance between the EDF of `sample` and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(QltError::InvalidInput("empty sample".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - f).abs());
    }
    Ok(sup)
}

fn run_replicate(cfg: &StudyConfig, index: usize) -> Result<Vec<f64>> {
    let scheme = crate::model::SamplingScheme::derive(cfg.n, cfg.h, cfg.tau).stage("tuning")?;
    let (path_seed, noise_seed) = replicate_streams(cfg.master_seed, index);
    let path = euler_maruyama(
        &cfg.model,
        &cfg.alpha_star,
        &cfg.beta_star,
        &cfg.x0,
        &scheme,
        cfg.substeps,
        path_seed,
    )
    .stage("simulate")?;
    let obs = contaminate(&path, &cfg.noise, noise_seed)
        .stage("contaminate")?
        .without_latent();
    drop(path);
    let means = local_means(&obs).stage("preprocess")?;
    let lambda = estimate_noise_variance(&obs);
    let ctx = QuasiLikContext::new(&means, &lambda, &cfg.model).stage("preprocess")?;
    let battery = TestBattery::new(&ctx, &cfg.hypothesis, &cfg.opt).stage("fit")?;
    cfg.kinds
        .iter()
        .map(|&kind| battery.report(kind).map(|r| r.stat_total).stage("statistic"))
        .collect()
}

/// Run the full study. Replicates execute in the current rayon pool; the
/// result is identical for any worker count because every replicate is a
/// pure function of `(config, index)` and aggregation is order-independent.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let outcomes: Vec<(usize, std::result::Result<Vec<f64>, String>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|i| (i, run_replicate(cfg, i).map_err(|e| e.to_string())))
        .collect();

    let mut stats: BTreeMap<TestKind, Vec<f64>> =
        cfg.kinds.iter().map(|&k| (k, Vec::new())).collect();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok(values) => {
                for (&kind, &value) in cfg.kinds.iter().zip(values.iter()) {
                    stats.get_mut(&kind).expect("kind present").push(value);
                }
            }
            Err(msg) => failures.push((i, msg)),
        }
    }
    let allowed = (cfg.max_error_fraction * cfg.replicates as f64).floor() as usize;
    if failures.len() > allowed {
        return Err(QltError::StudyAborted {
            failed: failures.len(),
            total: cfg.replicates,
            first: failures
                .first()
                .map(|(i, m)| format!("replicate {i}: {m}"))
                .unwrap_or_default(),
        });
    }

    let dof = cfg.hypothesis.r();
    let effective = cfg.replicates - failures.len();
    let mut rejection = Vec::new();
    for &kind in &cfg.kinds {
        let values = &stats[&kind];
        for &level in &cfg.levels {
            let critical_value = chi2_quantile(1.0 - level, dof as u32)?;
            let rejections = values.iter().filter(|&&s| s > critical_value).count();
            let rate = rejections as f64 / effective as f64;
            let std_error = (rate * (1.0 - rate) / effective as f64).sqrt();
            rejection.push(RateRow {
                kind,
                level,
                critical_value,
                rejections,
                effective_replicates: effective,
                rate,
                std_error,
            });
        }
    }

    Ok(StudyResult {
        dof,
        stats,
        rejection,
        levels: cfg.levels.clone(),
        failures,
        replicates_requested: cfg.replicates,
    })
}
