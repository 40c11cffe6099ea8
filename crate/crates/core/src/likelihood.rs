//! The two quasi-likelihoods of the local-mean sequence, their gradients,
//! and Hessians.
//!
//! `l1` drives the diffusion parameter: block increments are modelled as
//! centred Gaussians with covariance `(2/3) delta_n c_n_tau`, and the
//! log-determinant term carries `c_n_tau` without that scalar factor. `l2`
//! drives the drift parameter with weight `(delta_n c_n_tau)^-1` and no
//! log-determinant term.

use nalgebra::{DMatrix, DVector};

use crate::error::{QltError, Result};
use crate::model::{ModelSpec, SamplingScheme};
use crate::preprocess::{LocalMeanSeries, NoiseVarianceEstimate};

/// Finite-difference step scales, used whenever a model does not supply
/// analytic parameter derivatives. The actual step is `SCALE * (1 + |theta_i|)`.
pub mod fd {
    /// First-derivative step scale.
    pub const GRAD_STEP: f64 = 1e-6;
    /// Second-derivative step scale (differences of gradients).
    pub const HESS_STEP: f64 = 1e-4;
}

/// Symmetric positive-definite factorization with closed forms for the
/// one- and two-dimensional states that dominate practical use.
enum Spd {
    D1 {
        a: f64,
    },
    D2 {
        a11: f64,
        a12: f64,
        a22: f64,
        det: f64,
    },
    General {
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
}

impl Spd {
    fn factor(m: &DMatrix<f64>) -> Option<Self> {
        match m.nrows() {
            1 => {
                let a = m[(0, 0)];
                (a > 0.0 && a.is_finite()).then_some(Spd::D1 { a })
            }
            2 => {
                let a11 = m[(0, 0)];
                let a12 = 0.5 * (m[(0, 1)] + m[(1, 0)]);
                let a22 = m[(1, 1)];
                let det = a11 * a22 - a12 * a12;
                (a11 > 0.0 && det > 0.0 && det.is_finite())
                    .then_some(Spd::D2 { a11, a12, a22, det })
            }
            _ => nalgebra::Cholesky::new(m.clone()).map(|chol| Spd::General { chol }),
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            Spd::D1 { a } => a.ln(),
            Spd::D2 { det, .. } => det.ln(),
            Spd::General { chol } => 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum(),
        }
    }

    /// `v^T A^-1 v`.
    fn quad(&self, v: &DVector<f64>) -> f64 {
        match self {
            Spd::D1 { a } => v[0] * v[0] / a,
            Spd::D2 { a11, a12, a22, det } => {
                (a22 * v[0] * v[0] - 2.0 * a12 * v[0] * v[1] + a11 * v[1] * v[1]) / det
            }
            Spd::General { chol } => v.dot(&chol.solve(v)),
        }
    }

    /// `A^-1 v`.
    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Spd::D1 { a } => DVector::from_element(1, v[0] / a),
            Spd::D2 { a11, a12, a22, det } => DVector::from_column_slice(&[
                (a22 * v[0] - a12 * v[1]) / det,
                (a11 * v[1] - a12 * v[0]) / det,
            ]),
            Spd::General { chol } => chol.solve(v),
        }
    }

    /// `A^-1 M` for a `d x r` matrix `M`.
    fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Spd::D1 { a } => m / *a,
            Spd::D2 { a11, a12, a22, det } => {
                let mut out = DMatrix::zeros(2, m.ncols());
                for c in 0..m.ncols() {
                    out[(0, c)] = (a22 * m[(0, c)] - a12 * m[(1, c)]) / det;
                    out[(1, c)] = (a11 * m[(1, c)] - a12 * m[(0, c)]) / det;
                }
                out
            }
            Spd::General { chol } => {
                let mut out = m.clone();
                chol.solve_mut(&mut out);
                out
            }
        }
    }
}

/// Shared inputs for evaluating the quasi-likelihoods at one data set:
/// the local means, the noise-variance estimate, the model, and the
/// precomputed regularizer `reg_coeff * lambda_hat`.
#[derive(Debug, Clone)]
pub struct QuasiLikContext {
    model: ModelSpec,
    scheme: SamplingScheme,
    /// `Ybar_{j-1}` for summand `j = 1..=k_n-2`.
    eval_points: Vec<DVector<f64>>,
    /// `Ybar_{j+1} - Ybar_j` for the same summands.
    increments: Vec<DVector<f64>>,
    lambda_hat: DMatrix<f64>,
    reg_coeff: f64,
    reg_lambda: DMatrix<f64>,
}

impl QuasiLikContext {
    pub fn new(
        means: &LocalMeanSeries,
        noise: &NoiseVarianceEstimate,
        model: &ModelSpec,
    ) -> Result<Self> {
        Self::from_parts(
            model.clone(),
            *means.scheme(),
            means.means().clone(),
            noise.lambda_hat().clone(),
        )
    }

    /// Assemble a context from raw pieces; `means` holds one block mean per
    /// row. Exposed for tests and custom pipelines.
    pub fn from_parts(
        model: ModelSpec,
        scheme: SamplingScheme,
        means: DMatrix<f64>,
        lambda_hat: DMatrix<f64>,
    ) -> Result<Self> {
        let k = means.nrows();
        if k < 3 {
            return Err(QltError::InsufficientBlocks { k_n: k, min: 3 });
        }
        let d = means.ncols();
        if d != model.state_dim() {
            return Err(QltError::InvalidInput(format!(
                "means have dimension {d}, model expects {}",
                model.state_dim()
            )));
        }
        if lambda_hat.nrows() != d || lambda_hat.ncols() != d {
            return Err(QltError::InvalidInput(
                "lambda_hat dimension does not match the state dimension".into(),
            ));
        }
        let mut eval_points = Vec::with_capacity(k - 2);
        let mut increments = Vec::with_capacity(k - 2);
        for j in 1..=k - 2 {
            eval_points.push(means.row(j - 1).transpose());
            increments.push((means.row(j + 1) - means.row(j)).transpose());
        }
        let reg_coeff = scheme.reg_coeff();
        if !(reg_coeff.is_finite() && reg_coeff > 0.0) {
            return Err(QltError::InvalidInput(format!(
                "regularizer coefficient {reg_coeff} must be positive and finite"
            )));
        }
        let reg_lambda = &lambda_hat * reg_coeff;
        Ok(Self {
            model,
            scheme,
            eval_points,
            increments,
            lambda_hat,
            reg_coeff,
            reg_lambda,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    pub fn lambda_hat(&self) -> &DMatrix<f64> {
        &self.lambda_hat
    }

    /// `3 * delta_n^((2 - tau)/(tau - 1))`, recomputed from the scheme.
    pub fn reg_coeff(&self) -> f64 {
        self.reg_coeff
    }

    /// Number of summands `k_n - 2`.
    pub fn num_summands(&self) -> usize {
        self.increments.len()
    }

    /// Regularized diffusion matrix `c(x, alpha) + reg_coeff * lambda_hat`.
    pub fn c_n_tau(&self, x: &DVector<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
        self.model.c(x, alpha) + &self.reg_lambda
    }

    fn factor_c_n_tau(&self, j: usize, alpha: &DVector<f64>) -> Result<(DMatrix<f64>, Spd)> {
        let a = self.model.diffusion(&self.eval_points[j], alpha);
        let mut c = &a * a.transpose();
        c += &self.reg_lambda;
        let spd = Spd::factor(&c).ok_or(QltError::SingularDiffusionMatrix { block: j + 1 })?;
        Ok((a, spd))
    }

    /// Diffusion quasi-likelihood `L_1,n(alpha | lambda_hat)`.
    pub fn l1(&self, alpha: &DVector<f64>) -> Result<f64> {
        let w = 1.5 / self.scheme.delta_n();
        let mut acc = 0.0;
        for j in 0..self.num_summands() {
            let (_a, spd) = self.factor_c_n_tau(j, alpha)?;
            acc += w * spd.quad(&self.increments[j]) + spd.log_det();
        }
        let value = -0.5 * acc;
        if !value.is_finite() {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("l1 at alpha {alpha:?}"),
            });
        }
        Ok(value)
    }

    /// Gradient of `l1`; analytic when the model carries diffusion
    /// derivatives, otherwise central finite differences.
    pub fn grad_l1(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.l1_with_grad(alpha)?.1)
    }

    pub fn l1_with_grad(&self, alpha: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let Some(derivs) = self.model.diffusion_derivs_alpha().cloned() else {
            let value = self.l1(alpha)?;
            let grad = grad_fd(&|th| self.l1(th), alpha)?;
            return Ok((value, grad));
        };
        let m1 = self.model.m1();
        let w = 1.5 / self.scheme.delta_n();
        let mut acc = 0.0;
        let mut grad = DVector::<f64>::zeros(m1);
        for j in 0..self.num_summands() {
            let (a, spd) = self.factor_c_n_tau(j, alpha)?;
            let v = &self.increments[j];
            acc += w * spd.quad(v) + spd.log_det();
            // With dc_i = da_i a^T + a da_i^T:
            //   v^T A^-1 dc_i A^-1 v  = 2 (da_i^T A^-1 v) . (a^T A^-1 v)
            //   tr(A^-1 dc_i)         = 2 <A^-1 a, da_i>
            let sv = spd.solve(v);
            let u = a.transpose() * &sv;
            let g = spd.solve_mat(&a);
            let das = derivs(&self.eval_points[j], alpha);
            debug_assert_eq!(das.len(), m1);
            for (i, da) in das.iter().enumerate() {
                let quad_d = 2.0 * (da.transpose() * &sv).dot(&u);
                let trace_d = 2.0 * g.iter().zip(da.iter()).map(|(x, y)| x * y).sum::<f64>();
                grad[i] += -0.5 * (-w * quad_d + trace_d);
            }
        }
        let value = -0.5 * acc;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("l1 gradient at alpha {alpha:?}"),
            });
        }
        Ok((value, grad))
    }

    /// Hessian of `l1` by central differences of the gradient, symmetrized.
    pub fn hess_l1(&self, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        hess_fd(&|th| self.grad_l1(th), alpha)
    }

    /// Drift quasi-likelihood `L_2,n(beta | lambda_hat, alpha_plugin)`.
    pub fn l2(&self, beta: &DVector<f64>, alpha_plugin: &DVector<f64>) -> Result<f64> {
        self.l2_profile(alpha_plugin)?.value(beta)
    }

    pub fn grad_l2(&self, beta: &DVector<f64>, alpha_plugin: &DVector<f64>) -> Result<DVector<f64>> {
        self.l2_profile(alpha_plugin)?.grad(beta)
    }

    /// Hessian of `l2` in `beta`, by central differences of the gradient.
    pub fn hess_l2(&self, beta: &DVector<f64>, alpha_plugin: &DVector<f64>) -> Result<DMatrix<f64>> {
        let profile = self.l2_profile(alpha_plugin)?;
        hess_fd(&|th| profile.grad(th), beta)
    }

    /// Factor the weight matrices once for a fixed diffusion plug-in; the
    /// drift optimizer then evaluates `l2` many times against them.
    pub fn l2_profile(&self, alpha_plugin: &DVector<f64>) -> Result<L2Profile<'_>> {
        let mut factors = Vec::with_capacity(self.num_summands());
        for j in 0..self.num_summands() {
            let (_a, spd) = self.factor_c_n_tau(j, alpha_plugin)?;
            factors.push(spd);
        }
        Ok(L2Profile { ctx: self, factors })
    }
}

/// `l2` with the diffusion plug-in frozen and its block factorizations cached.
pub struct L2Profile<'a> {
    ctx: &'a QuasiLikContext,
    factors: Vec<Spd>,
}

impl L2Profile<'_> {
    pub fn value(&self, beta: &DVector<f64>) -> Result<f64> {
        let delta = self.ctx.scheme.delta_n();
        let mut acc = 0.0;
        for (j, spd) in self.factors.iter().enumerate() {
            let b = self.ctx.model.drift(&self.ctx.eval_points[j], beta);
            let u = &self.ctx.increments[j] - b * delta;
            acc += spd.quad(&u) / delta;
        }
        let value = -0.5 * acc;
        if !value.is_finite() {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("l2 at beta {beta:?}"),
            });
        }
        Ok(value)
    }

    pub fn grad(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_and_grad(beta)?.1)
    }

    pub fn value_and_grad(&self, beta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let Some(jac) = self.ctx.model.drift_jacobian_beta().cloned() else {
            let value = self.value(beta)?;
            let grad = grad_fd(&|th| self.value(th), beta)?;
            return Ok((value, grad));
        };
        let delta = self.ctx.scheme.delta_n();
        let m2 = self.ctx.model.m2();
        let mut acc = 0.0;
        let mut grad = DVector::zeros(m2);
        for (j, spd) in self.factors.iter().enumerate() {
            let x = &self.ctx.eval_points[j];
            let b = self.ctx.model.drift(x, beta);
            let u = &self.ctx.increments[j] - b * delta;
            acc += spd.quad(&u) / delta;
            // d/d beta of -(1/2) u^T (delta A)^-1 u with du/dbeta = -delta J
            // is J^T A^-1 u.
            let su = spd.solve(&u);
            let j_mat = jac(x, beta);
            grad += j_mat.transpose() * &su;
        }
        let value = -0.5 * acc;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("l2 gradient at beta {beta:?}"),
            });
        }
        Ok((value, grad))
    }
}

/// Central finite-difference gradient with one-sided fallback when a shifted
/// evaluation fails.
pub(crate) fn grad_fd(
    f: &dyn Fn(&DVector<f64>) -> Result<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = theta.len();
    let mut grad = DVector::zeros(m);
    let mut center: Option<f64> = None;
    for i in 0..m {
        let step = fd::GRAD_STEP * (1.0 + theta[i].abs());
        let mut plus = theta.clone();
        plus[i] += step;
        let mut minus = theta.clone();
        minus[i] -= step;
        grad[i] = match (f(&plus), f(&minus)) {
            (Ok(fp), Ok(fm)) => (fp - fm) / (2.0 * step),
            (Ok(fp), Err(_)) => {
                let f0 = match center {
                    Some(v) => v,
                    None => {
                        let v = f(theta)?;
                        center = Some(v);
                        v
                    }
                };
                (fp - f0) / step
            }
            (Err(_), Ok(fm)) => {
                let f0 = match center {
                    Some(v) => v,
                    None => {
                        let v = f(theta)?;
                        center = Some(v);
                        v
                    }
                };
                (f0 - fm) / step
            }
            (Err(e), Err(_)) => return Err(e),
        };
    }
    Ok(grad)
}

/// Central finite-difference Hessian from a gradient routine, symmetrized as
/// `(H + H^T) / 2`.
pub(crate) fn hess_fd(
    grad: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let m = theta.len();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        let step = fd::HESS_STEP * (1.0 + theta[i].abs());
        let mut plus = theta.clone();
        plus[i] += step;
        let mut minus = theta.clone();
        minus[i] -= step;
        let col = match (grad(&plus), grad(&minus)) {
            (Ok(gp), Ok(gm)) => (gp - gm) / (2.0 * step),
            (Ok(gp), Err(_)) => (gp - grad(theta)?) / step,
            (Err(_), Ok(gm)) => (grad(theta)? - gm) / step,
            (Err(e), Err(_)) => return Err(e),
        };
        h.column_mut(i).copy_from(&col);
    }
    Ok(0.5 * (&h + h.transpose()))
}
