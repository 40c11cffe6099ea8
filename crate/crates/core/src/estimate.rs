//! Box-constrained maximization of the quasi-likelihoods and the staged
//! (noise variance, then diffusion, then drift) fit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{QltError, Result, StageExt};
use crate::likelihood::{L2Profile, QuasiLikContext};
use crate::model::{restrict, Hypothesis, Interval, ModelSpec};
use crate::preprocess::{estimate_noise_variance, local_means};
use crate::simulate::ObservationSeries;

/// Multi-start settings for [`maximize`]. Defaults are tuned for the bundled
/// studies and can be overridden from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    /// Gradient tolerance, scaled internally by `1 + |value|`.
    pub grad_tol: f64,
    /// Seed offsetting the low-discrepancy start sequence.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iters: 500,
            grad_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Objective for the ascent routine. Implementations must be deterministic
/// functions of `theta`.
pub trait Objective {
    fn value(&self, theta: &DVector<f64>) -> Result<f64>;

    fn value_and_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let v = self.value(theta)?;
        let g = crate::likelihood::grad_fd(&|th| self.value(th), theta)?;
        Ok((v, g))
    }
}

/// Per-maximization diagnostics.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct OptDiagnostics {
    pub starts: usize,
    pub converged_starts: usize,
    /// Iterations used by the winning start.
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub best_start: usize,
}

struct AscentOutcome {
    x: DVector<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    grad_norm: f64,
}

fn project(x: &mut DVector<f64>, bounds: &[Interval]) {
    for (v, iv) in x.iter_mut().zip(bounds) {
        *v = iv.clamp(*v);
    }
}

/// Norm of the projected gradient step `P(x + g) - x`; zero exactly at a
/// box-constrained stationary point.
fn projected_grad_norm(x: &DVector<f64>, g: &DVector<f64>, bounds: &[Interval]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let moved = bounds[i].clamp(x[i] + g[i]) - x[i];
        acc += moved * moved;
    }
    acc.sqrt()
}

/// Projected gradient ascent with a Barzilai-Borwein step and Armijo
/// backtracking along the projection arc.
fn ascend(
    obj: &dyn Objective,
    bounds: &[Interval],
    start: DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<AscentOutcome> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 40;

    let mut x = start;
    project(&mut x, bounds);
    let (mut value, mut grad) = obj.value_and_grad(&x)?;
    let mut evaluations = 1;
    let mut step = 1.0 / (1.0 + grad.norm());
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let tol = cfg.grad_tol * (1.0 + value.abs());
        let pg = projected_grad_norm(&x, &grad, bounds);
        if pg <= tol {
            converged = true;
            break;
        }

        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut cand = &x + &grad * t;
            project(&mut cand, bounds);
            let displacement = &cand - &x;
            let gain_floor = ARMIJO * grad.dot(&displacement);
            if displacement.norm() <= 1e-15 * (1.0 + x.norm()) {
                break;
            }
            match obj.value_and_grad(&cand) {
                Ok((cv, cg)) => {
                    evaluations += 1;
                    if cv >= value + gain_floor {
                        accepted = Some((cand, cv, cg, displacement));
                        break;
                    }
                }
                // A candidate outside the evaluable region acts like a failed
                // Armijo trial: shrink the step.
                Err(_) => {
                    evaluations += 1;
                }
            }
            t *= 0.5;
        }

        match accepted {
            Some((nx, nv, ng, s)) => {
                let y = &ng - &grad;
                let sy = s.dot(&y).abs();
                step = if sy > 1e-300 {
                    (s.dot(&s) / sy).clamp(1e-14, 1e14)
                } else {
                    (t * 4.0).clamp(1e-14, 1e14)
                };
                x = nx;
                value = nv;
                grad = ng;
            }
            None => {
                // No improving step at any scale: numerically stationary.
                converged = true;
                break;
            }
        }
    }

    let grad_norm = projected_grad_norm(&x, &grad, bounds);
    if !converged {
        converged = grad_norm <= cfg.grad_tol * (1.0 + value.abs());
    }
    Ok(AscentOutcome {
        x,
        value,
        iterations,
        evaluations,
        converged,
        grad_norm,
    })
}

const HALTON_PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn start_points(bounds: &[Interval], cfg: &OptimizerConfig) -> Vec<DVector<f64>> {
    let dim = bounds.len();
    let mut points = Vec::with_capacity(cfg.n_starts.max(1));
    points.push(DVector::from_iterator(dim, bounds.iter().map(|iv| iv.center())));
    // Low-discrepancy starts, offset by the seed for reproducible variety.
    let offset = cfg.seed.wrapping_mul(0x9E37_79B9) % 10_000 + 17;
    for s in 1..cfg.n_starts.max(1) {
        points.push(DVector::from_iterator(
            dim,
            (0..dim).map(|i| {
                let u = halton(offset + s as u64, HALTON_PRIMES[i % HALTON_PRIMES.len()]);
                bounds[i].lo + u * bounds[i].width()
            }),
        ));
    }
    points
}

/// Multi-start box-constrained maximization. Starts at the box center plus
/// `n_starts - 1` low-discrepancy points; ties within 1e-10 go to the lowest
/// start index. Errors only when every start fails both convergence criteria
/// or cannot be evaluated at all.
pub fn maximize(
    obj: &dyn Objective,
    bounds: &[Interval],
    cfg: &OptimizerConfig,
) -> Result<(DVector<f64>, f64, OptDiagnostics)> {
    if bounds.is_empty() {
        return Err(QltError::InvalidInput("empty parameter box".into()));
    }
    let mut best: Option<(usize, AscentOutcome)> = None;
    let mut diag = OptDiagnostics::default();
    let mut last_err = None;
    for (s, start) in start_points(bounds, cfg).into_iter().enumerate() {
        diag.starts += 1;
        match ascend(obj, bounds, start, cfg) {
            Ok(out) => {
                diag.evaluations += out.evaluations;
                if out.converged {
                    diag.converged_starts += 1;
                }
                let replace = match &best {
                    None => true,
                    Some((_, b)) => out.value > b.value + 1e-10,
                };
                if replace {
                    best = Some((s, out));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((s, out)) = best else {
        return Err(last_err.unwrap_or(QltError::OptimizerDidNotConverge {
            starts: diag.starts,
            iterations: 0,
            best_grad_norm: f64::NAN,
        }));
    };
    if diag.converged_starts == 0 {
        return Err(QltError::OptimizerDidNotConverge {
            starts: diag.starts,
            iterations: out.iterations,
            best_grad_norm: out.grad_norm,
        });
    }
    diag.iterations = out.iterations;
    diag.converged = out.converged;
    diag.final_grad_norm = out.grad_norm;
    diag.best_start = s;
    Ok((out.x, out.value, diag))
}

/// One extra ascent from a given interior point; used to guarantee that the
/// full-space value dominates the restricted one.
fn polish(
    obj: &dyn Objective,
    bounds: &[Interval],
    from: DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<(DVector<f64>, f64)> {
    let out = ascend(obj, bounds, from, cfg)?;
    Ok((out.x, out.value))
}

struct L1Objective<'a> {
    ctx: &'a QuasiLikContext,
}

impl Objective for L1Objective<'_> {
    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.ctx.l1(theta)
    }

    fn value_and_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.ctx.l1_with_grad(theta)
    }
}

struct L2Objective<'a, 'b> {
    profile: &'a L2Profile<'b>,
}

impl Objective for L2Objective<'_, '_> {
    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.profile.value(theta)
    }

    fn value_and_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.profile.value_and_grad(theta)
    }
}

/// Adapter optimizing over the unmasked coordinates only, with masked
/// components pinned to exactly 0.
struct Restricted<'a> {
    inner: &'a dyn Objective,
    mask: &'a [bool],
}

impl Restricted<'_> {
    fn embed(&self, reduced: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.mask.len());
        let mut k = 0;
        for (i, &m) in self.mask.iter().enumerate() {
            if !m {
                full[i] = reduced[k];
                k += 1;
            }
        }
        full
    }

    fn reduce(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.mask.iter().filter(|&&m| !m).count(),
            full.iter().zip(self.mask).filter(|(_, &m)| !m).map(|(&v, _)| v),
        )
    }
}

impl Objective for Restricted<'_> {
    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.inner.value(&self.embed(theta))
    }

    fn value_and_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (v, g) = self.inner.value_and_grad(&self.embed(theta))?;
        Ok((v, self.reduce(&g)))
    }
}

fn reduced_bounds(bounds: &[Interval], mask: &[bool]) -> Vec<Interval> {
    bounds
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&iv, _)| iv)
        .collect()
}

/// Maximize over the full box and over the restricted slice, guaranteeing
/// `value_full >= value_restricted` by re-polishing the full fit from the
/// restricted optimum when needed.
fn fit_pair(
    obj: &dyn Objective,
    bounds: &[Interval],
    mask: &[bool],
    cfg: &OptimizerConfig,
) -> Result<(DVector<f64>, f64, OptDiagnostics, DVector<f64>, f64, OptDiagnostics)> {
    let (mut hat, mut value_hat, mut diag_hat) = maximize(obj, bounds, cfg)?;
    if mask.iter().all(|&m| !m) {
        let tilde = hat.clone();
        return Ok((hat.clone(), value_hat, diag_hat, tilde, value_hat, diag_hat));
    }
    let restricted = Restricted { inner: obj, mask };
    let r_bounds = reduced_bounds(bounds, mask);
    // Every component restricted: the null space is the single point 0.
    let (tilde, value_tilde, diag_tilde) = if r_bounds.is_empty() {
        let tilde = DVector::zeros(mask.len());
        let value = obj.value(&tilde)?;
        let diag = OptDiagnostics {
            starts: 0,
            converged_starts: 0,
            iterations: 0,
            evaluations: 1,
            converged: true,
            final_grad_norm: 0.0,
            best_start: 0,
        };
        (tilde, value, diag)
    } else {
        let (tilde_reduced, value, diag) = maximize(&restricted, &r_bounds, cfg)?;
        (restricted.embed(&tilde_reduced), value, diag)
    };
    if value_tilde > value_hat {
        let (px, pv) = polish(obj, bounds, tilde.clone(), cfg)?;
        if pv >= value_hat {
            hat = px;
            value_hat = pv;
            diag_hat.converged = true;
        }
    }
    Ok((hat, value_hat, diag_hat, tilde, value_tilde, diag_tilde))
}

/// Full and restricted adaptive estimates with the quasi-likelihood values
/// backing the test statistics.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub alpha_hat: DVector<f64>,
    pub alpha_tilde: DVector<f64>,
    pub beta_hat: DVector<f64>,
    pub beta_tilde: DVector<f64>,
    pub lambda_hat: DMatrix<f64>,
    pub l1_at_hat: f64,
    pub l1_at_tilde: f64,
    pub l2_at_hat: f64,
    pub l2_at_tilde: f64,
    pub diag_alpha_hat: OptDiagnostics,
    pub diag_alpha_tilde: OptDiagnostics,
    pub diag_beta_hat: OptDiagnostics,
    pub diag_beta_tilde: OptDiagnostics,
}

/// Staged fit: noise variance first, then the diffusion parameter over the
/// full and restricted boxes, then the drift parameter given the
/// unrestricted diffusion estimate.
pub fn fit_adaptive(
    obs: &ObservationSeries,
    model: &ModelSpec,
    hyp: &Hypothesis,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let means = local_means(obs).stage("preprocess")?;
    let lambda = estimate_noise_variance(obs);
    let ctx = QuasiLikContext::new(&means, &lambda, model).stage("preprocess")?;
    fit_adaptive_with_ctx(&ctx, hyp, cfg)
}

/// (`fit_adaptive` against an already-built context, letting callers reuse
/// the local means across several hypotheses.)
pub fn fit_adaptive_with_ctx(
    ctx: &QuasiLikContext,
    hyp: &Hypothesis,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let model = ctx.model();
    let l1_obj = L1Objective { ctx };
    let (alpha_hat, l1_at_hat, diag_alpha_hat, alpha_tilde, l1_at_tilde, diag_alpha_tilde) =
        fit_pair(&l1_obj, model.alpha_box(), hyp.alpha_zero_mask(), cfg).stage("fit-alpha")?;

    // Both drift estimators plug in the unrestricted alpha_hat.
    let profile = ctx.l2_profile(&alpha_hat).stage("fit-beta")?;
    let l2_obj = L2Objective { profile: &profile };
    let (beta_hat, l2_at_hat, diag_beta_hat, beta_tilde, l2_at_tilde, diag_beta_tilde) =
        fit_pair(&l2_obj, model.beta_box(), hyp.beta_zero_mask(), cfg).stage("fit-beta")?;

    debug_assert!(l1_at_hat >= l1_at_tilde - 1e-8 * l1_at_hat.abs().max(1.0));
    debug_assert!(l2_at_hat >= l2_at_tilde - 1e-8 * l2_at_hat.abs().max(1.0));

    Ok(FitResult {
        alpha_hat,
        alpha_tilde,
        beta_hat,
        beta_tilde,
        lambda_hat: ctx.lambda_hat().clone(),
        l1_at_hat,
        l1_at_tilde,
        l2_at_hat,
        l2_at_tilde,
        diag_alpha_hat,
        diag_alpha_tilde,
        diag_beta_hat,
        diag_beta_tilde,
    })
}

/// Restriction helper re-exported next to the estimators for convenience.
pub fn restrict_vector(theta: &DVector<f64>, mask: &[bool]) -> DVector<f64> {
    restrict(theta, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::simulate::{contaminate, euler_maruyama, NoiseSpec, RngStream};

    struct Bowl {
        target: DVector<f64>,
    }

    impl Objective for Bowl {
        fn value(&self, theta: &DVector<f64>) -> Result<f64> {
            Ok(-(theta - &self.target).norm_squared())
        }

        fn value_and_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            let d = theta - &self.target;
            Ok((-d.norm_squared(), -2.0 * d))
        }
    }

    fn unit_box(dim: usize) -> Vec<Interval> {
        vec![Interval::new(-1.0, 1.0).unwrap(); dim]
    }

    #[test]
    fn bowl_interior_maximum() {
        let target = DVector::from_column_slice(&[0.3, -0.7]);
        let obj = Bowl {
            target: target.clone(),
        };
        let cfg = OptimizerConfig::default();
        let (x, v, diag) = maximize(&obj, &unit_box(2), &cfg).unwrap();
        assert!(diag.converged);
        assert!((x - target).norm() < 1e-6, "argmax off target, value {v}");
    }

    #[test]
    fn bowl_exterior_maximum_projects() {
        let target = DVector::from_column_slice(&[2.5, -0.4]);
        let obj = Bowl {
            target: target.clone(),
        };
        let cfg = OptimizerConfig::default();
        let (x, _, _) = maximize(&obj, &unit_box(2), &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
        assert!((x[1] + 0.4).abs() < 1e-6);
    }

    fn study_obs(alpha: &[f64], beta: &[f64], n: usize, seed: u64) -> ObservationSeries {
        study_obs_at(alpha, beta, n, 6.31e-5, seed)
    }

    fn study_obs_at(alpha: &[f64], beta: &[f64], n: usize, h: f64, seed: u64) -> ObservationSeries {
        let model = presets::paper_1d();
        let scheme = crate::model::SamplingScheme::derive(n, h, 1.9).unwrap();
        let path = euler_maruyama(
            &model,
            &DVector::from_column_slice(alpha),
            &DVector::from_column_slice(beta),
            &DVector::zeros(1),
            &scheme,
            1,
            RngStream::new(seed, 0),
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(1, 1e-3).unwrap();
        contaminate(&path, &noise, RngStream::new(seed, 1)).unwrap()
    }

    #[test]
    fn l1_optimizer_beats_grid_oracle() {
        let model = presets::paper_1d();
        let obs = study_obs(&[1.0, 1.0], &[-1.0, 1.0], 100_000, 2024);
        let means = local_means(&obs).unwrap();
        let lambda = estimate_noise_variance(&obs);
        let ctx = QuasiLikContext::new(&means, &lambda, &model).unwrap();
        let obj = L1Objective { ctx: &ctx };
        let cfg = OptimizerConfig::default();
        let (_, value, _) = maximize(&obj, model.alpha_box(), &cfg).unwrap();

        // Dense grid over the box, 200 points per axis.
        let mut grid_best = f64::NEG_INFINITY;
        let (b0, b1) = (model.alpha_box()[0], model.alpha_box()[1]);
        for i in 0..200 {
            let a0 = b0.lo + b0.width() * i as f64 / 199.0;
            for j in 0..200 {
                let a1 = b1.lo + b1.width() * j as f64 / 199.0;
                if let Ok(v) = ctx.l1(&DVector::from_column_slice(&[a0, a1])) {
                    grid_best = grid_best.max(v);
                }
            }
        }
        assert!(
            value >= grid_best - 1e-6,
            "optimizer {value} below grid best {grid_best}"
        );
    }

    #[test]
    fn fit_consistency_at_h0_and_unrestricted_masks() {
        let model = presets::paper_1d();
        let obs = study_obs(&[1.0, 0.0], &[-1.0, 1.0], 100_000, 7);
        let cfg = OptimizerConfig::default();

        // Unrestricted hypothesis: tilde estimates coincide with hats.
        let hyp0 = Hypothesis::unrestricted(&model);
        let fit0 = fit_adaptive(&obs, &model, &hyp0, &cfg).unwrap();
        assert_eq!(fit0.alpha_hat, fit0.alpha_tilde);
        assert_eq!(fit0.beta_hat, fit0.beta_tilde);

        // alpha2 = 0 hypothesis: tilde searches the 1-d slice.
        let hyp = Hypothesis::from_components(&model, &[2], &[]).unwrap();
        let fit = fit_adaptive(&obs, &model, &hyp, &cfg).unwrap();
        assert_eq!(fit.alpha_tilde[1], 0.0, "pinned component must be exactly zero");
        assert!(
            (fit.alpha_tilde[0] - 1.0).abs() < 0.15,
            "restricted alpha1 {} far from 1",
            fit.alpha_tilde[0]
        );
        assert!(
            (fit.alpha_hat[0] - 1.0).abs() < 0.15 && fit.alpha_hat[1].abs() < 0.4,
            "full alpha {:?} far from (1, 0)",
            fit.alpha_hat
        );
        assert!(fit.l1_at_hat >= fit.l1_at_tilde - 1e-8 * fit.l1_at_hat.abs());
        assert!(fit.l2_at_hat >= fit.l2_at_tilde - 1e-8 * fit.l2_at_hat.abs());
    }

    #[test]
    fn fit_estimates_beta_near_truth() {
        // Drift accuracy needs horizon, not block count, so this test runs
        // at the coarser step with T_n = 63.1.
        let model = presets::paper_1d();
        let obs = study_obs_at(&[1.0, 1.0], &[-1.0, 1.0], 100_000, 6.31e-4, 401);
        let cfg = OptimizerConfig::default();
        let hyp = Hypothesis::unrestricted(&model);
        let fit = fit_adaptive(&obs, &model, &hyp, &cfg).unwrap();
        assert!(
            (fit.beta_hat[0] + 1.0).abs() < 0.5 && (fit.beta_hat[1] - 1.0).abs() < 0.5,
            "beta_hat {:?} far from (-1, 1)",
            fit.beta_hat
        );
        assert!(
            (fit.alpha_hat[0] - 1.0).abs() < 0.15 && (fit.alpha_hat[1] - 1.0).abs() < 0.15,
            "alpha_hat {:?} far from (1, 1)",
            fit.alpha_hat
        );
    }

    #[test]
    fn restricted_gap_grows_linearly_in_k_under_h1() {
        let model = presets::paper_1d();
        let cfg = OptimizerConfig::default();
        let hyp = Hypothesis::from_components(&model, &[2], &[]).unwrap();
        let mut gaps = Vec::new();
        let mut ks = Vec::new();
        // Both horizons sit in the ergodic regime (T_n = 6.31 and 63.1) so
        // the per-block misfit is comparable and the gap scales with k_n.
        for n in [10_000usize, 100_000] {
            let obs = study_obs_at(&[1.0, 1.0], &[-1.0, 1.0], n, 6.31e-4, 99);
            let fit = fit_adaptive(&obs, &model, &hyp, &cfg).unwrap();
            gaps.push(fit.l1_at_hat - fit.l1_at_tilde);
            ks.push(obs.scheme().k_n() as f64);
        }
        let slope_ratio = (gaps[1] / gaps[0]) / (ks[1] / ks[0]);
        assert!(
            (0.4..2.5).contains(&slope_ratio),
            "gap growth {slope_ratio} is not roughly linear in k_n (gaps {gaps:?})"
        );
    }

    #[test]
    fn determinism_same_config_same_fit() {
        let model = presets::paper_1d();
        let obs = study_obs(&[1.0, 0.0], &[-1.0, 1.0], 20_000, 55);
        let cfg = OptimizerConfig::default();
        let hyp = Hypothesis::from_components(&model, &[2], &[]).unwrap();
        let a = fit_adaptive(&obs, &model, &hyp, &cfg).unwrap();
        let b = fit_adaptive(&obs, &model, &hyp, &cfg).unwrap();
        assert_eq!(a.alpha_hat, b.alpha_hat);
        assert_eq!(a.beta_tilde, b.beta_tilde);
        assert_eq!(a.l1_at_hat.to_bits(), b.l1_at_hat.to_bits());
    }

    #[test]
    fn hessian_at_optimum_is_negative_semidefinite() {
        let model = presets::paper_1d();
        let obs = study_obs(&[1.0, 1.0], &[-1.0, 1.0], 50_000, 12);
        let means = local_means(&obs).unwrap();
        let lambda = estimate_noise_variance(&obs);
        let ctx = QuasiLikContext::new(&means, &lambda, &model).unwrap();
        let obj = L1Objective { ctx: &ctx };
        let cfg = OptimizerConfig::default();
        let (alpha_hat, value, _) = maximize(&obj, model.alpha_box(), &cfg).unwrap();
        let h = ctx.hess_l1(&alpha_hat).unwrap();
        let eig = nalgebra::SymmetricEigen::new(h);
        let max_eig = eig.eigenvalues.max();
        assert!(
            max_eig <= 1e-6 * value.abs().max(1.0),
            "hessian max eigenvalue {max_eig} not <= tolerance"
        );
    }
}
