//! Local means of the noisy record, tuning-parameter derivation, and the
//! noise-variance estimator.

use nalgebra::DMatrix;

use crate::error::{QltError, Result};
use crate::model::SamplingScheme;
use crate::simulate::ObservationSeries;

/// Disjoint consecutive block means of the observations, row `j` holding the
/// mean of observations `j p_n .. (j+1) p_n - 1`. Trailing observations that
/// do not fill a block are dropped.
#[derive(Debug, Clone)]
pub struct LocalMeanSeries {
    means: DMatrix<f64>,
    scheme: SamplingScheme,
}

impl LocalMeanSeries {
    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    pub fn k_n(&self) -> usize {
        self.means.nrows()
    }
}

/// Noise-variance estimate `(1/2n) sum (Y_{i+1} - Y_i)^(x2)`; symmetric PSD
/// by construction.
#[derive(Debug, Clone)]
pub struct NoiseVarianceEstimate {
    lambda_hat: DMatrix<f64>,
}

impl NoiseVarianceEstimate {
    pub fn lambda_hat(&self) -> &DMatrix<f64> {
        &self.lambda_hat
    }

    /// Wrap an externally supplied matrix (tests and custom pipelines).
    pub fn from_matrix(lambda_hat: DMatrix<f64>) -> Self {
        Self { lambda_hat }
    }
}

/// Derive the pre-averaging tuning from `(n, h_n, tau)`:
/// `p_n = floor(h_n^(-1/tau))`, `k_n = floor(n / p_n)`.
pub fn derive_tuning(n: usize, h: f64, tau: f64) -> Result<SamplingScheme> {
    SamplingScheme::derive(n, h, tau)
}

/// Block means of the observations under the scheme's `p_n`.
pub fn local_means(obs: &ObservationSeries) -> Result<LocalMeanSeries> {
    let scheme = *obs.scheme();
    let p = scheme.p_n();
    let k = scheme.k_n();
    if k < 3 {
        return Err(QltError::InsufficientBlocks { k_n: k, min: 3 });
    }
    let d = obs.state_dim();
    let values = obs.values();
    let mut means = DMatrix::zeros(k, d);
    let inv_p = 1.0 / p as f64;
    for j in 0..k {
        let start = j * p;
        for col in 0..d {
            let mut acc = 0.0;
            for i in start..start + p {
                acc += values[(i, col)];
            }
            means[(j, col)] = acc * inv_p;
        }
    }
    Ok(LocalMeanSeries { means, scheme })
}

/// Noise-variance estimator over all raw increments, before any blocking.
pub fn estimate_noise_variance(obs: &ObservationSeries) -> NoiseVarianceEstimate {
    let values = obs.values();
    let n = values.nrows() - 1;
    let d = values.ncols();
    let mut acc = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = values[(i + 1, a)] - values[(i, a)];
            for b in a..d {
                let db = values[(i + 1, b)] - values[(i, b)];
                acc[(a, b)] += da * db;
            }
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    for a in 0..d {
        for b in a..d {
            let v = acc[(a, b)] * scale;
            acc[(a, b)] = v;
            acc[(b, a)] = v;
        }
    }
    NoiseVarianceEstimate { lambda_hat: acc }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::simulate::{contaminate, euler_maruyama, LatentPath, NoiseSpec, RngStream};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn series_1d(values: &[f64], p: usize) -> ObservationSeries {
        let n = values.len() - 1;
        let scheme = SamplingScheme::with_block_length(n.max(3 * p), 0.1, 1.5, p).unwrap();
        // Pad so the scheme length matches when the caller passes short data.
        let mut padded = values.to_vec();
        padded.resize(scheme.n() + 1, *values.last().unwrap());
        ObservationSeries::new(DMatrix::from_column_slice(padded.len(), 1, &padded), scheme).unwrap()
    }

    #[test]
    fn constant_series_means_are_constant() {
        let obs = series_1d(&vec![2.5; 13], 3);
        let means = local_means(&obs).unwrap();
        assert!(means.means().iter().all(|&m| (m - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pairwise_means() {
        // Five observations (n = 4), p = 2: blocks (0, 2) and (4, 6), row 8 dropped.
        let scheme = SamplingScheme::with_block_length(6, 0.1, 1.5, 2).unwrap();
        let data = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
        let obs =
            ObservationSeries::new(DMatrix::from_column_slice(7, 1, &data), scheme).unwrap();
        let means = local_means(&obs).unwrap();
        assert_eq!(means.k_n(), 3);
        assert_eq!(means.means()[(0, 0)], 1.0);
        assert_eq!(means.means()[(1, 0)], 5.0);
        assert_eq!(means.means()[(2, 0)], 9.0);
    }

    #[test]
    fn linear_series_mean_increments_equal_delta() {
        let h = 0.05;
        let p = 4;
        let n = 40;
        let scheme = SamplingScheme::with_block_length(n, h, 1.5, p).unwrap();
        let data: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let obs =
            ObservationSeries::new(DMatrix::from_column_slice(n + 1, 1, &data), scheme).unwrap();
        let means = local_means(&obs).unwrap();
        for j in 1..means.k_n() {
            let diff = means.means()[(j, 0)] - means.means()[(j - 1, 0)];
            assert_relative_eq!(diff, scheme.delta_n(), max_relative = 1e-12);
        }
    }

    #[test]
    fn noise_variance_constant_series_is_zero() {
        let obs = series_1d(&vec![7.0; 20], 2);
        let est = estimate_noise_variance(&obs);
        assert_eq!(est.lambda_hat()[(0, 0)], 0.0);
    }

    #[test]
    fn noise_variance_alternating_series() {
        let v = 0.3;
        let n = 100;
        let scheme = SamplingScheme::with_block_length(n, 0.1, 1.5, 10).unwrap();
        let data: Vec<f64> = (0..=n).map(|i| if i % 2 == 0 { 0.0 } else { v }).collect();
        let obs =
            ObservationSeries::new(DMatrix::from_column_slice(n + 1, 1, &data), scheme).unwrap();
        let est = estimate_noise_variance(&obs);
        assert_relative_eq!(est.lambda_hat()[(0, 0)], v * v / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn noise_variance_recovers_simulated_lambda() {
        // Latent diffusion plus Gaussian noise at the 1-d study settings
        // (scaled-down path length); h c(x) is negligible next to Lambda.
        let n = 200_000;
        let scheme = SamplingScheme::derive(n, 6.31e-5, 1.9).unwrap();
        let model = presets::paper_1d();
        let alpha = DVector::from_column_slice(&[1.0, 0.0]);
        let beta = DVector::from_column_slice(&[-1.0, 1.0]);
        let path = euler_maruyama(
            &model,
            &alpha,
            &beta,
            &DVector::zeros(1),
            &scheme,
            1,
            RngStream::new(21, 0),
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(1, 1e-3).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(21, 1)).unwrap();
        let est = estimate_noise_variance(&obs);
        let lh = est.lambda_hat()[(0, 0)];
        assert!(
            (0.9e-3..=1.1e-3).contains(&lh),
            "lambda_hat {lh} outside [0.9e-3, 1.1e-3]"
        );
    }

    #[test]
    fn noise_variance_invariant_under_time_reversal() {
        let n = 500;
        let scheme = SamplingScheme::with_block_length(n, 0.01, 1.5, 10).unwrap();
        let path = LatentPath {
            values: DMatrix::zeros(n + 1, 1),
            scheme,
        };
        let noise = NoiseSpec::isotropic(1, 0.5).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(8, 0)).unwrap();
        let est = estimate_noise_variance(&obs);

        let mut reversed = obs.values().clone();
        for i in 0..=n {
            reversed.row_mut(i).copy_from(&obs.values().row(n - i));
        }
        let obs_rev = ObservationSeries::new(reversed, scheme).unwrap();
        let est_rev = estimate_noise_variance(&obs_rev);
        assert_relative_eq!(
            est.lambda_hat()[(0, 0)],
            est_rev.lambda_hat()[(0, 0)],
            max_relative = 1e-12
        );
    }

    #[test]
    fn pure_noise_block_variance_tracks_lambda_over_p() {
        let p = 20;
        let k_target = 2000;
        let n = p * k_target;
        let scheme = SamplingScheme::with_block_length(n, 0.01, 1.5, p).unwrap();
        let lambda = 0.8;
        let path = LatentPath {
            values: DMatrix::zeros(n + 1, 1),
            scheme,
        };
        let noise = NoiseSpec::isotropic(1, lambda).unwrap();
        let obs = contaminate(&path, &noise, RngStream::new(33, 0)).unwrap();
        let means = local_means(&obs).unwrap();
        let col = means.means().column(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() - 1) as f64;
        let expect = lambda / p as f64;
        assert!(
            (var - expect).abs() / expect < 0.2,
            "block variance {var} deviates more than 20% from {expect}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn local_means_is_linear(
            ya in proptest::collection::vec(-1e3f64..1e3, 25),
            yb in proptest::collection::vec(-1e3f64..1e3, 25),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let scheme = SamplingScheme::with_block_length(24, 0.1, 1.5, 4).unwrap();
            let make = |data: &[f64]| {
                ObservationSeries::new(DMatrix::from_column_slice(25, 1, data), scheme).unwrap()
            };
            let combo: Vec<f64> = ya.iter().zip(&yb).map(|(&u, &v)| a * u + b * v).collect();
            let m_combo = local_means(&make(&combo)).unwrap();
            let m_a = local_means(&make(&ya)).unwrap();
            let m_b = local_means(&make(&yb)).unwrap();
            for j in 0..m_combo.k_n() {
                let lhs = m_combo.means()[(j, 0)];
                let rhs = a * m_a.means()[(j, 0)] + b * m_b.means()[(j, 0)];
                let scale = 1.0f64.max(lhs.abs()).max(rhs.abs());
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
