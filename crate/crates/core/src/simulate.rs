//! Path generation for the latent diffusion and additive observation noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QltError, Result};
use crate::model::{ModelSpec, SamplingScheme};

/// One reproducible random stream, addressed as (master seed, stream index).
///
/// Streams with the same master seed and different indices are independent,
/// so Monte Carlo workers can draw concurrently without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Streams used for replicate `index`: one for the latent path, one for the
/// observation noise. Replicate 0 matches a single `simulate` invocation.
pub fn replicate_streams(master: u64, index: usize) -> (RngStream, RngStream) {
    let base = 2 * index as u64;
    (RngStream::new(master, base), RngStream::new(master, base + 1))
}

/// Additive observation-noise law `Lambda^(1/2) eps` with standard Gaussian
/// `eps`. The tag enum leaves room for other symmetric laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseDistribution {
    GaussianStandard,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    lambda: DMatrix<f64>,
    sqrt_lambda: DMatrix<f64>,
    pub distribution: NoiseDistribution,
}

impl NoiseSpec {
    /// Gaussian noise with covariance `lambda` (symmetric PSD within
    /// tolerance; tiny negative eigenvalues are clamped to 0).
    pub fn gaussian(lambda: DMatrix<f64>) -> Result<Self> {
        if lambda.nrows() != lambda.ncols() {
            return Err(QltError::InvalidInput("lambda must be square".into()));
        }
        let asym = (&lambda - lambda.transpose()).abs().max();
        if !(asym <= 1e-12) {
            return Err(QltError::InvalidInput(format!(
                "lambda must be symmetric (asymmetry {asym:.3e})"
            )));
        }
        let sym = 0.5 * (&lambda + lambda.transpose());
        let eig = nalgebra::SymmetricEigen::new(sym);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(QltError::InvalidInput(format!(
                "lambda must be positive semi-definite (min eigenvalue {:.3e})",
                eig.eigenvalues.min()
            )));
        }
        let d = lambda.nrows();
        let sqrt_vals = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
        let sqrt_lambda = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        Ok(Self {
            lambda,
            sqrt_lambda,
            distribution: NoiseDistribution::GaussianStandard,
        })
    }

    /// Isotropic noise `scale * I_d`.
    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        Self::gaussian(DMatrix::identity(dim, dim) * scale)
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }
}

/// Latent diffusion path on the observation grid, rows `X_{i h_n}`.
#[derive(Debug, Clone)]
pub struct LatentPath {
    pub values: DMatrix<f64>,
    pub scheme: SamplingScheme,
}

/// Noisy observation record `Y_{i h_n}`, `i = 0..=n`.
#[derive(Debug, Clone)]
pub struct ObservationSeries {
    values: DMatrix<f64>,
    scheme: SamplingScheme,
    latent: Option<DMatrix<f64>>,
}

impl ObservationSeries {
    pub fn new(values: DMatrix<f64>, scheme: SamplingScheme) -> Result<Self> {
        if values.nrows() != scheme.n() + 1 {
            return Err(QltError::InvalidInput(format!(
                "observation series has {} rows, scheme expects n + 1 = {}",
                values.nrows(),
                scheme.n() + 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QltError::NonFiniteModelOutput {
                context: "observation series contains non-finite entries".into(),
            });
        }
        Ok(Self {
            values,
            scheme,
            latent: None,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    /// Latent path, retained by simulation for diagnostics only.
    pub fn latent(&self) -> Option<&DMatrix<f64>> {
        self.latent.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn without_latent(mut self) -> Self {
        self.latent = None;
        self
    }
}

/// Euler scheme for `dX = b dt + a dW` recorded every `h_n`, with
/// `substeps` internal Euler steps per recorded point.
///
/// Identical seeds give bitwise-identical paths.
pub fn euler_maruyama(
    model: &ModelSpec,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    x0: &DVector<f64>,
    scheme: &SamplingScheme,
    substeps: usize,
    seed: RngStream,
) -> Result<LatentPath> {
    if substeps == 0 {
        return Err(QltError::InvalidInput("substeps must be at least 1".into()));
    }
    if x0.len() != model.state_dim() {
        return Err(QltError::InvalidInput(format!(
            "x0 has dimension {}, model expects {}",
            x0.len(),
            model.state_dim()
        )));
    }
    check_in_box(alpha, model.alpha_box(), "alpha")?;
    check_in_box(beta, model.beta_box(), "beta")?;

    let d = model.state_dim();
    let r = model.noise_dim();
    let n = scheme.n();
    let dt = scheme.h() / substeps as f64;
    let sqrt_dt = dt.sqrt();

    let mut rng = seed.rng();
    let mut values = DMatrix::zeros(n + 1, d);
    let mut x = x0.clone();
    let mut dw = DVector::zeros(r);
    values.row_mut(0).copy_from(&x0.transpose());
    for i in 1..=n {
        for _ in 0..substeps {
            let b = model.drift(&x, beta);
            let a = model.diffusion(&x, alpha);
            for w in dw.iter_mut() {
                *w = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            }
            x.axpy(dt, &b, 1.0);
            x.gemv(1.0, &a, &dw, 1.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QltError::NonFiniteModelOutput {
                context: format!("path diverged at step {i}"),
            });
        }
        values.row_mut(i).copy_from(&x.transpose());
    }
    Ok(LatentPath {
        values,
        scheme: *scheme,
    })
}

/// Contaminate a latent path with additive noise: `Y_i = X_i + Lambda^(1/2) eps_i`.
pub fn contaminate(path: &LatentPath, noise: &NoiseSpec, seed: RngStream) -> Result<ObservationSeries> {
    let d = path.values.ncols();
    if noise.dim() != d {
        return Err(QltError::InvalidInput(format!(
            "noise dimension {} does not match state dimension {d}",
            noise.dim()
        )));
    }
    let mut rng = seed.rng();
    let mut values = path.values.clone();
    let mut eps = DVector::zeros(d);
    for i in 0..values.nrows() {
        for e in eps.iter_mut() {
            *e = rng.sample::<f64, _>(StandardNormal);
        }
        let shift = &noise.sqrt_lambda * &eps;
        for j in 0..d {
            values[(i, j)] += shift[j];
        }
    }
    Ok(ObservationSeries {
        values,
        scheme: path.scheme,
        latent: Some(path.values.clone()),
    })
}

fn check_in_box(theta: &DVector<f64>, boxes: &[crate::model::Interval], name: &str) -> Result<()> {
    if theta.len() != boxes.len() {
        return Err(QltError::InvalidInput(format!(
            "{name} has dimension {}, box has {}",
            theta.len(),
            boxes.len()
        )));
    }
    for (i, (&t, iv)) in theta.iter().zip(boxes).enumerate() {
        if !iv.contains(t) {
            return Err(QltError::InvalidInput(format!(
                "{name} component {} = {t} outside its box [{}, {}]",
                i + 1,
                iv.lo,
                iv.hi
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Interval};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn zero_model() -> ModelSpec {
        let drift: Arc<crate::model::DriftFn> = Arc::new(|_x, _b| DVector::zeros(1));
        let diffusion: Arc<crate::model::DiffusionFn> = Arc::new(|_x, _a| DMatrix::zeros(1, 1));
        ModelSpec::new(
            "zero",
            1,
            1,
            drift,
            diffusion,
            vec![Interval::new(-1.0, 1.0).unwrap()],
            vec![Interval::new(-1.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    fn decay_model() -> ModelSpec {
        let drift: Arc<crate::model::DriftFn> = Arc::new(|x, _b| -x.clone());
        let diffusion: Arc<crate::model::DiffusionFn> = Arc::new(|_x, _a| DMatrix::zeros(1, 1));
        ModelSpec::new(
            "decay",
            1,
            1,
            drift,
            diffusion,
            vec![Interval::new(-1.0, 1.0).unwrap()],
            vec![Interval::new(-1.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    fn ou_model() -> ModelSpec {
        let drift: Arc<crate::model::DriftFn> = Arc::new(|x, _b| -x.clone());
        let diffusion: Arc<crate::model::DiffusionFn> =
            Arc::new(|_x, _a| DMatrix::from_element(1, 1, 1.0));
        ModelSpec::new(
            "ou",
            1,
            1,
            drift,
            diffusion,
            vec![Interval::new(-1.0, 1.0).unwrap()],
            vec![Interval::new(-1.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    fn theta0() -> DVector<f64> {
        DVector::from_element(1, 0.0)
    }

    #[test]
    fn zero_dynamics_give_constant_path() {
        let scheme = SamplingScheme::with_block_length(50, 0.1, 1.5, 5).unwrap();
        let path = euler_maruyama(
            &zero_model(),
            &theta0(),
            &theta0(),
            &DVector::from_element(1, 5.0),
            &scheme,
            1,
            RngStream::new(1, 0),
        )
        .unwrap();
        assert!(path.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn deterministic_euler_recursion() {
        let scheme = SamplingScheme::with_block_length(10, 0.1, 1.5, 2).unwrap();
        let path = euler_maruyama(
            &decay_model(),
            &theta0(),
            &theta0(),
            &DVector::from_element(1, 1.0),
            &scheme,
            1,
            RngStream::new(1, 0),
        )
        .unwrap();
        assert_relative_eq!(path.values[(1, 0)], 0.9, max_relative = 1e-15);
        assert_relative_eq!(path.values[(2, 0)], 0.81, max_relative = 1e-15);
    }

    #[test]
    fn ou_terminal_variance_matches_exact_sampler() {
        // T = 10, h = 0.01; stationary variance of the unit OU process is 1/2.
        let scheme = SamplingScheme::with_block_length(1000, 0.01, 1.5, 10).unwrap();
        let model = ou_model();
        let n_paths = 10_000;
        let mut terminal = Vec::with_capacity(n_paths);
        for rep in 0..n_paths {
            let path = euler_maruyama(
                &model,
                &theta0(),
                &theta0(),
                &DVector::zeros(1),
                &scheme,
                1,
                RngStream::new(99, rep as u64),
            )
            .unwrap();
            terminal.push(path.values[(scheme.n(), 0)]);
        }
        let mean = terminal.iter().sum::<f64>() / n_paths as f64;
        let var = terminal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_paths - 1) as f64;

        // Independent oracle: exact OU transition X_{t+h} = X_t e^-h + sd * xi.
        let decay = (-0.01f64).exp();
        let sd = ((1.0 - (-0.02f64).exp()) / 2.0).sqrt();
        let mut oracle_terminal = Vec::with_capacity(n_paths);
        for rep in 0..n_paths {
            let mut rng = RngStream::new(7, rep as u64).rng();
            let mut x = 0.0f64;
            for _ in 0..1000 {
                let xi: f64 = rng.sample(StandardNormal);
                x = x * decay + sd * xi;
            }
            oracle_terminal.push(x);
        }
        let omean = oracle_terminal.iter().sum::<f64>() / n_paths as f64;
        let ovar = oracle_terminal.iter().map(|v| (v - omean) * (v - omean)).sum::<f64>()
            / (n_paths - 1) as f64;

        // 3 standard errors of a variance estimate at N = 10^4.
        let band = 3.0 * 0.5 * (2.0 / (n_paths as f64 - 1.0)).sqrt();
        assert!((var - 0.5).abs() < band, "euler variance {var} outside band {band}");
        assert!((ovar - 0.5).abs() < band, "oracle variance {ovar} outside band {band}");
    }

    #[test]
    fn contaminate_zero_noise_is_identity() {
        let scheme = SamplingScheme::with_block_length(20, 0.1, 1.5, 4).unwrap();
        let path = euler_maruyama(
            &decay_model(),
            &theta0(),
            &theta0(),
            &DVector::from_element(1, 1.0),
            &scheme,
            1,
            RngStream::new(3, 0),
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(1, 0.0).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(3, 1)).unwrap();
        assert_eq!(obs.values(), &path.values);
    }

    #[test]
    fn contaminate_variance_matches_lambda() {
        let n = 1_000_000;
        let scheme = SamplingScheme::with_block_length(n, 1e-3, 1.5, 100).unwrap();
        let path = LatentPath {
            values: DMatrix::zeros(n + 1, 2),
            scheme,
        };
        let noise = NoiseSpec::isotropic(2, 1e-3).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(11, 1)).unwrap();
        for j in 0..2 {
            let col = obs.values().column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() - 1) as f64;
            assert!(
                (0.00097..=0.00103).contains(&var),
                "component {j} variance {var} outside [0.00097, 0.00103]"
            );
        }
    }

    #[test]
    fn contaminate_mean_within_clt_band() {
        let n = 50_000;
        let scheme = SamplingScheme::with_block_length(n, 1e-3, 1.5, 100).unwrap();
        let path = LatentPath {
            values: DMatrix::zeros(n + 1, 1),
            scheme,
        };
        let noise = NoiseSpec::gaussian(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(12, 1)).unwrap();
        let mean = obs.values().column(0).iter().sum::<f64>() / (n + 1) as f64;
        let band = 3.0 * 2.0 / ((n + 1) as f64).sqrt();
        assert!(mean.abs() < band, "noise mean {mean} outside CLT band {band}");
    }

    #[test]
    fn noise_sign_symmetry() {
        let n = 100_000;
        let scheme = SamplingScheme::with_block_length(n, 1e-3, 1.5, 100).unwrap();
        let path = LatentPath {
            values: DMatrix::zeros(n + 1, 1),
            scheme,
        };
        let noise = NoiseSpec::isotropic(1, 1.0).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(5, 9)).unwrap();
        let mean_sign = obs
            .values()
            .column(0)
            .iter()
            .map(|v| v.signum())
            .sum::<f64>()
            / (n + 1) as f64;
        assert!(mean_sign.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let scheme = SamplingScheme::with_block_length(500, 0.01, 1.9, 10).unwrap();
        let model = presets::paper_1d();
        let alpha = DVector::from_column_slice(&[1.0, 0.0]);
        let beta = DVector::from_column_slice(&[-1.0, 1.0]);
        let x0 = DVector::zeros(1);
        let noise = NoiseSpec::isotropic(1, 1e-3).unwrap();
        let run = || {
            let path =
                euler_maruyama(&model, &alpha, &beta, &x0, &scheme, 2, RngStream::new(42, 0)).unwrap();
            contaminate(&path, &noise, RngStream::new(42, 1)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.latent(), b.latent());
    }

    #[test]
    fn rejects_theta_outside_box() {
        let scheme = SamplingScheme::with_block_length(10, 0.1, 1.5, 2).unwrap();
        let model = presets::paper_1d();
        let alpha = DVector::from_column_slice(&[999.0, 0.0]);
        let beta = DVector::from_column_slice(&[-1.0, 1.0]);
        let err = euler_maruyama(
            &model,
            &alpha,
            &beta,
            &DVector::zeros(1),
            &scheme,
            1,
            RngStream::new(1, 0),
        );
        assert!(matches!(err, Err(QltError::InvalidInput(_))));
    }
}
