use crate::{CoreError, Result};

/// Log-variance clamp bounds shared by every Gaussian head in the crate.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 2.0;

/// Diagonal Gaussian over a real vector. `log_var` is clamped at
/// construction to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(CoreError::Shape {
                expected: mean.len(),
                got: log_var.len(),
                context: "DiagGaussian::new",
            });
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `mean + exp(0.5 * log_var) .* noise`. With the noise held fixed this is
/// differentiable in both the mean (identity) and the log-variance.
pub fn reparam_sample(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(CoreError::Shape {
            expected: g.dim(),
            got: noise.len(),
            context: "reparam_sample noise",
        });
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_noise_returns_mean() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -0.7]).unwrap();
        let s = reparam_sample(&g, &[0.0, 0.0]).unwrap();
        assert_eq!(s, vec![1.0, -2.0]);
    }

    #[test]
    fn unit_variance_basis_noise() {
        let g = DiagGaussian::new(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let s = reparam_sample(&g, &[1.0, 0.0]).unwrap();
        assert_eq!(s, vec![1.5, 0.5]);
    }

    #[test]
    fn log_var_is_clamped() {
        let g = DiagGaussian::new(vec![0.0], vec![50.0]).unwrap();
        assert_eq!(g.log_var[0], LOG_VAR_MAX);
        let g = DiagGaussian::new(vec![0.0], vec![-50.0]).unwrap();
        assert_eq!(g.log_var[0], LOG_VAR_MIN);
    }

    #[test]
    fn empirical_moments_match_parameters() {
        // Monte-Carlo moment oracle at 1e5 samples, 3 standard errors.
        let g = DiagGaussian::new(vec![1.2], vec![-0.4]).unwrap();
        let var = (-0.4f64).exp();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = reparam_sample(&g, &[z]).unwrap()[0];
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let emp_var = sumsq / n as f64 - mean * mean;
        let se_mean = (var / n as f64).sqrt();
        let se_var = var * (2.0 / n as f64).sqrt();
        assert!((mean - 1.2).abs() < 3.0 * se_mean);
        assert!((emp_var - var).abs() < 3.0 * se_var);
    }
}
