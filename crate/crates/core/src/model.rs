//! SDE model declarations, parameter spaces, sampling schemes, and
//! zero-restriction hypotheses.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QltError, Result};

pub type DriftFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type DiffusionFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Jacobian of the drift in the drift parameter, `d x m2`.
pub type DriftJacobianFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Per-component derivatives of the diffusion in the diffusion parameter,
/// one `d x r` matrix per component.
pub type DiffusionDerivsFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;

/// Closed finite interval used for per-component parameter boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(QltError::InvalidInput(format!(
                "interval [{lo}, {hi}] must be finite and non-degenerate"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Observation grid and pre-averaging tuning.
///
/// Stores the primitive quantities `(n, h, tau, p)`; everything else
/// (`k_n`, `delta_n`, `t_n`, the regularizer coefficient) is recomputed on
/// demand so no pair of fields can drift out of sync.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    n: usize,
    h: f64,
    tau: f64,
    p: usize,
}

impl SamplingScheme {
    /// Build a scheme with the block length derived from `h` and `tau` via
    /// `p_n = floor(h^(-1/tau))`.
    pub fn derive(n: usize, h: f64, tau: f64) -> Result<Self> {
        if !(tau > 1.0 && tau < 2.0) {
            return Err(QltError::TuningOutOfRange { tau });
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(QltError::InvalidInput(format!("step size h = {h} must be positive")));
        }
        // Guard against 161.999999... representations of an exact block count.
        let p = (h.powf(-1.0 / tau) + 1e-9).floor() as usize;
        Self::with_block_length(n, h, tau, p.max(1))
    }

    /// Build a scheme with an explicit block length. Intended for tests and
    /// experiments that pin `p_n` directly.
    pub fn with_block_length(n: usize, h: f64, tau: f64, p: usize) -> Result<Self> {
        if !(tau > 1.0 && tau < 2.0) {
            return Err(QltError::TuningOutOfRange { tau });
        }
        if !(h.is_finite() && h > 0.0) || p == 0 {
            return Err(QltError::InvalidInput(format!(
                "invalid sampling scheme: h = {h}, p = {p}"
            )));
        }
        let scheme = Self { n, h, tau, p };
        if scheme.k_n() < 3 {
            return Err(QltError::InsufficientBlocks {
                k_n: scheme.k_n(),
                min: 3,
            });
        }
        Ok(scheme)
    }

    /// Number of observed increments; observations carry indices `0..=n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Block length `p_n`.
    pub fn p_n(&self) -> usize {
        self.p
    }

    /// Number of complete blocks `k_n = floor(n / p_n)`.
    pub fn k_n(&self) -> usize {
        self.n / self.p
    }

    /// Block duration `delta_n = p_n * h_n`.
    pub fn delta_n(&self) -> f64 {
        self.p as f64 * self.h
    }

    /// Observation horizon `T_n = n * h_n`.
    pub fn t_n(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// Coefficient `3 * delta_n^((2 - tau) / (tau - 1))` of the noise
    /// regularizer inside the block-increment covariance model.
    pub fn reg_coeff(&self) -> f64 {
        3.0 * self.delta_n().powf((2.0 - self.tau) / (self.tau - 1.0))
    }
}

/// A parametric SDE model `dX = b(X, beta) dt + a(X, alpha) dW` with compact
/// per-component parameter boxes.
///
/// Evaluation closures are shared immutably, so one spec can be evaluated
/// from any number of worker threads.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    drift_jacobian_beta: Option<Arc<DriftJacobianFn>>,
    diffusion_derivs_alpha: Option<Arc<DiffusionDerivsFn>>,
    alpha_box: Vec<Interval>,
    beta_box: Vec<Interval>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("m1", &self.m1())
            .field("m2", &self.m2())
            .field("analytic_drift_jacobian", &self.drift_jacobian_beta.is_some())
            .field("analytic_diffusion_derivs", &self.diffusion_derivs_alpha.is_some())
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
        alpha_box: Vec<Interval>,
        beta_box: Vec<Interval>,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(QltError::InvalidInput(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if alpha_box.is_empty() || beta_box.is_empty() {
            return Err(QltError::InvalidInput(
                "alpha and beta boxes must be non-empty".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            noise_dim,
            drift,
            diffusion,
            drift_jacobian_beta: None,
            diffusion_derivs_alpha: None,
            alpha_box,
            beta_box,
        })
    }

    pub fn with_drift_jacobian(mut self, jac: Arc<DriftJacobianFn>) -> Self {
        self.drift_jacobian_beta = Some(jac);
        self
    }

    pub fn with_diffusion_derivs(mut self, derivs: Arc<DiffusionDerivsFn>) -> Self {
        self.diffusion_derivs_alpha = Some(derivs);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Dimension of the diffusion parameter.
    pub fn m1(&self) -> usize {
        self.alpha_box.len()
    }

    /// Dimension of the drift parameter.
    pub fn m2(&self) -> usize {
        self.beta_box.len()
    }

    pub fn alpha_box(&self) -> &[Interval] {
        &self.alpha_box
    }

    pub fn beta_box(&self) -> &[Interval] {
        &self.beta_box
    }

    pub fn drift(&self, x: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let b = (self.drift)(x, beta);
        assert_eq!(b.len(), self.state_dim, "drift output must have length d");
        b
    }

    pub fn diffusion(&self, x: &DVector<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
        let a = (self.diffusion)(x, alpha);
        assert_eq!(
            (a.nrows(), a.ncols()),
            (self.state_dim, self.noise_dim),
            "diffusion output must be d x r"
        );
        a
    }

    /// Diffusion matrix `c(x, alpha) = a a^T` (symmetric PSD by construction).
    pub fn c(&self, x: &DVector<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
        let a = self.diffusion(x, alpha);
        &a * a.transpose()
    }

    pub fn drift_jacobian_beta(&self) -> Option<&Arc<DriftJacobianFn>> {
        self.drift_jacobian_beta.as_ref()
    }

    pub fn diffusion_derivs_alpha(&self) -> Option<&Arc<DiffusionDerivsFn>> {
        self.diffusion_derivs_alpha.as_ref()
    }

    /// Look up a bundled preset by name.
    pub fn preset(name: &str) -> Option<ModelSpec> {
        match name {
            "paper-1d" => Some(presets::paper_1d()),
            "paper-2d" => Some(presets::paper_2d()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["paper-1d", "paper-2d"]
    }
}

/// Zero-restriction hypothesis: the masked components of `(alpha, beta)` are
/// pinned to 0 under the null.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    alpha_zero_mask: Vec<bool>,
    beta_zero_mask: Vec<bool>,
}

impl Hypothesis {
    /// Masks may restrict any subset of components; every restricted
    /// component must have 0 inside its box so the null space is non-empty.
    pub fn new(model: &ModelSpec, alpha_zero_mask: Vec<bool>, beta_zero_mask: Vec<bool>) -> Result<Self> {
        if alpha_zero_mask.len() != model.m1() || beta_zero_mask.len() != model.m2() {
            return Err(QltError::InvalidHypothesis(format!(
                "mask lengths ({}, {}) do not match parameter dimensions ({}, {})",
                alpha_zero_mask.len(),
                beta_zero_mask.len(),
                model.m1(),
                model.m2()
            )));
        }
        for (i, (&masked, iv)) in alpha_zero_mask.iter().zip(model.alpha_box()).enumerate() {
            if masked && !iv.contains(0.0) {
                return Err(QltError::InvalidHypothesis(format!(
                    "alpha component {} is restricted to 0 but its box [{}, {}] excludes 0",
                    i + 1,
                    iv.lo,
                    iv.hi
                )));
            }
        }
        for (i, (&masked, iv)) in beta_zero_mask.iter().zip(model.beta_box()).enumerate() {
            if masked && !iv.contains(0.0) {
                return Err(QltError::InvalidHypothesis(format!(
                    "beta component {} is restricted to 0 but its box [{}, {}] excludes 0",
                    i + 1,
                    iv.lo,
                    iv.hi
                )));
            }
        }
        Ok(Self {
            alpha_zero_mask,
            beta_zero_mask,
        })
    }

    /// Hypothesis restricting nothing (`r = 0`); useful for plain fits.
    pub fn unrestricted(model: &ModelSpec) -> Self {
        Self {
            alpha_zero_mask: vec![false; model.m1()],
            beta_zero_mask: vec![false; model.m2()],
        }
    }

    /// Restrict the listed 1-based alpha/beta components to 0.
    pub fn from_components(model: &ModelSpec, alpha: &[usize], beta: &[usize]) -> Result<Self> {
        let mut am = vec![false; model.m1()];
        let mut bm = vec![false; model.m2()];
        for &i in alpha {
            if i == 0 || i > model.m1() {
                return Err(QltError::InvalidHypothesis(format!(
                    "alpha component {i} out of range 1..={}",
                    model.m1()
                )));
            }
            am[i - 1] = true;
        }
        for &i in beta {
            if i == 0 || i > model.m2() {
                return Err(QltError::InvalidHypothesis(format!(
                    "beta component {i} out of range 1..={}",
                    model.m2()
                )));
            }
            bm[i - 1] = true;
        }
        Hypothesis::new(model, am, bm)
    }

    pub fn alpha_zero_mask(&self) -> &[bool] {
        &self.alpha_zero_mask
    }

    pub fn beta_zero_mask(&self) -> &[bool] {
        &self.beta_zero_mask
    }

    /// Number of restricted diffusion components.
    pub fn r1(&self) -> usize {
        self.alpha_zero_mask.iter().filter(|&&m| m).count()
    }

    /// Number of restricted drift components.
    pub fn r2(&self) -> usize {
        self.beta_zero_mask.iter().filter(|&&m| m).count()
    }

    /// Total degrees of freedom of the test.
    pub fn r(&self) -> usize {
        self.r1() + self.r2()
    }
}

/// Copy of `theta` with masked components set to 0.
pub fn restrict(theta: &DVector<f64>, mask: &[bool]) -> DVector<f64> {
    assert_eq!(theta.len(), mask.len(), "mask length must match vector length");
    DVector::from_iterator(
        theta.len(),
        theta.iter().zip(mask).map(|(&t, &m)| if m { 0.0 } else { t }),
    )
}

/// Spot-check report from [`validate_model`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Minimum of `det c(x, alpha)` over all probe points and the evaluated
    /// alpha grid (box corners plus center).
    pub min_det_c: f64,
    /// True when `min_det_c` is numerically zero or negative.
    pub degenerate: bool,
    /// Number of (probe, alpha) pairs evaluated.
    pub evaluations: usize,
    /// Largest symmetry defect `|c - c^T|` observed.
    pub max_asymmetry: f64,
}

/// Evaluate drift and diffusion over probe points and an alpha grid made of
/// box corners and the box center, reporting the worst-case determinant.
///
/// Corner enumeration is capped at 2^12 grid points; beyond that a corner
/// subsample plus the center is used.
pub fn validate_model(spec: &ModelSpec, probe_points: &[DVector<f64>]) -> Result<ValidationReport> {
    if probe_points.is_empty() {
        return Err(QltError::InvalidInput("probe_points must be non-empty".into()));
    }
    let m1 = spec.m1();
    let mut alphas: Vec<DVector<f64>> = Vec::new();
    alphas.push(DVector::from_iterator(
        m1,
        spec.alpha_box().iter().map(|iv| iv.center()),
    ));
    let corner_count = 1usize << m1.min(12);
    for bits in 0..corner_count {
        alphas.push(DVector::from_iterator(
            m1,
            spec.alpha_box().iter().enumerate().map(|(i, iv)| {
                if i < 12 && bits >> i & 1 == 1 {
                    iv.hi
                } else {
                    iv.lo
                }
            }),
        ));
    }
    let beta_center = DVector::from_iterator(
        spec.m2(),
        spec.beta_box().iter().map(|iv| iv.center()),
    );

    let mut min_det = f64::INFINITY;
    let mut max_asym: f64 = 0.0;
    let mut evaluations = 0;
    for x in probe_points {
        if x.len() != spec.state_dim() {
            return Err(QltError::InvalidInput(format!(
                "probe point has dimension {}, expected {}",
                x.len(),
                spec.state_dim()
            )));
        }
        let b = spec.drift(x, &beta_center);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("drift at probe {x:?}"),
            });
        }
        for alpha in &alphas {
            let c = spec.c(x, alpha);
            if c.iter().any(|v| !v.is_finite()) {
                return Err(QltError::NonFiniteModelOutput {
                    context: format!("diffusion at probe {x:?}, alpha {alpha:?}"),
                });
            }
            max_asym = max_asym.max((&c - c.transpose()).abs().max());
            min_det = min_det.min(c.determinant());
            evaluations += 1;
        }
    }
    Ok(ValidationReport {
        min_det_c: min_det,
        degenerate: min_det <= 1e-12,
        evaluations,
        max_asymmetry: max_asym,
    })
}

/// Bundled example models used by the simulation studies.
pub mod presets {
    use super::*;

    fn sat(x: f64) -> f64 {
        x * x / (1.0 + x * x)
    }

    /// 1-d model: drift `beta1 x + beta2`, diffusion
    /// `alpha1 + alpha2 x^2 / (1 + x^2)`.
    pub fn paper_1d() -> ModelSpec {
        let drift: Arc<DriftFn> =
            Arc::new(|x, beta| DVector::from_element(1, beta[0] * x[0] + beta[1]));
        let diffusion: Arc<DiffusionFn> =
            Arc::new(|x, alpha| DMatrix::from_element(1, 1, alpha[0] + alpha[1] * sat(x[0])));
        let jac: Arc<DriftJacobianFn> =
            Arc::new(|x, _beta| DMatrix::from_row_slice(1, 2, &[x[0], 1.0]));
        let derivs: Arc<DiffusionDerivsFn> = Arc::new(|x, _alpha| {
            vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, sat(x[0])),
            ]
        });
        ModelSpec::new(
            "paper-1d",
            1,
            1,
            drift,
            diffusion,
            vec![
                Interval::new(0.1, 10.0).unwrap(),
                Interval::new(-5.0, 10.0).unwrap(),
            ],
            vec![
                Interval::new(-10.0, 10.0).unwrap(),
                Interval::new(-10.0, 10.0).unwrap(),
            ],
        )
        .expect("preset is valid")
        .with_drift_jacobian(jac)
        .with_diffusion_derivs(derivs)
    }

    /// 2-d model with linear drift (matrix `[[b1, b2], [b4, b5]]`, intercept
    /// `[b3, b6]`) and a symmetric state-dependent diffusion whose
    /// off-diagonal is `sqrt(a1 a4) a7`.
    pub fn paper_2d() -> ModelSpec {
        let drift: Arc<DriftFn> = Arc::new(|x, beta| {
            DVector::from_column_slice(&[
                beta[0] * x[0] + beta[1] * x[1] + beta[2],
                beta[3] * x[0] + beta[4] * x[1] + beta[5],
            ])
        });
        let diffusion: Arc<DiffusionFn> = Arc::new(|x, alpha| {
            let s1 = sat(x[0]);
            let s2 = sat(x[1]);
            let off = (alpha[0] * alpha[3]).sqrt() * alpha[6];
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    alpha[0] + alpha[1] * s1 + alpha[2] * s2,
                    off,
                    off,
                    alpha[3] + alpha[4] * s1 + alpha[5] * s2,
                ],
            )
        });
        let jac: Arc<DriftJacobianFn> = Arc::new(|x, _beta| {
            DMatrix::from_row_slice(
                2,
                6,
                &[x[0], x[1], 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, x[0], x[1], 1.0],
            )
        });
        let derivs: Arc<DiffusionDerivsFn> = Arc::new(|x, alpha| {
            let s1 = sat(x[0]);
            let s2 = sat(x[1]);
            let root = (alpha[0] * alpha[3]).sqrt();
            // d off / d a1 = a7 sqrt(a4 / a1) / 2, and symmetrically for a4.
            let d_off_1 = 0.5 * alpha[6] * (alpha[3] / alpha[0]).sqrt();
            let d_off_4 = 0.5 * alpha[6] * (alpha[0] / alpha[3]).sqrt();
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, d_off_1, d_off_1, 0.0]),
                DMatrix::from_row_slice(2, 2, &[s1, 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[s2, 0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, d_off_4, d_off_4, 1.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, s1]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, s2]),
                DMatrix::from_row_slice(2, 2, &[0.0, root, root, 0.0]),
            ]
        });
        ModelSpec::new(
            "paper-2d",
            2,
            2,
            drift,
            diffusion,
            vec![
                Interval::new(0.1, 20.0).unwrap(),
                Interval::new(-3.0, 10.0).unwrap(),
                Interval::new(-3.0, 10.0).unwrap(),
                Interval::new(0.1, 20.0).unwrap(),
                Interval::new(-3.0, 10.0).unwrap(),
                Interval::new(-3.0, 10.0).unwrap(),
                Interval::new(-0.95, 0.95).unwrap(),
            ],
            vec![Interval::new(-10.0, 10.0).unwrap(); 6],
        )
        .expect("preset is valid")
        .with_drift_jacobian(jac)
        .with_diffusion_derivs(derivs)
    }
}
