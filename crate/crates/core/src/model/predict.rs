//! Predictive distributions and their log-densities.

use crate::autodiff::NEG_HALF_LN_2PI;
use crate::error::{Result, TnpError};
use crate::linalg;

/// Independent Gaussians, laid out `[batch][target][dim_y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalPrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub batch_size: usize,
    pub n_target: usize,
    pub dim_y: usize,
}

impl DiagonalPrediction {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, batch_size: usize, n_target: usize, dim_y: usize) -> Result<Self> {
        if mu.len() != sigma.len() || mu.len() != batch_size * n_target * dim_y {
            return Err(TnpError::Dimension("prediction sizes".into()));
        }
        Ok(Self {
            mu,
            sigma,
            batch_size,
            n_target,
            dim_y,
        })
    }

    /// A single task's predictions with one label dimension.
    pub fn univariate(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        Self::new(mu, sigma, 1, n, 1)
    }

    pub fn task(&self, b: usize) -> DiagonalPrediction {
        let w = self.n_target * self.dim_y;
        DiagonalPrediction {
            mu: self.mu[b * w..(b + 1) * w].to_vec(),
            sigma: self.sigma[b * w..(b + 1) * w].to_vec(),
            batch_size: 1,
            ..*self
        }
    }

    /// Largest elementwise difference in either `mu` or `sigma`.
    pub fn max_abs_diff(&self, other: &DiagonalPrediction) -> f64 {
        self.mu
            .iter()
            .zip(&other.mu)
            .chain(self.sigma.iter().zip(&other.sigma))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mean log-density of `y` over all entries.
pub fn log_likelihood_diag(pred: &DiagonalPrediction, y: &[f64]) -> Result<f64> {
    if y.len() != pred.mu.len() {
        return Err(TnpError::Dimension(format!(
            "{} labels for {} predictions",
            y.len(),
            pred.mu.len()
        )));
    }
    if y.is_empty() {
        return Err(TnpError::Dimension("no targets".into()));
    }
    let mut total = 0.0;
    for ((&yi, &mu), &s) in y.iter().zip(&pred.mu).zip(&pred.sigma) {
        if !(s > 0.0) {
            return Err(TnpError::Domain(format!("sigma {s} must be positive")));
        }
        let z = (yi - mu) / s;
        total += -s.ln() + NEG_HALF_LN_2PI - 0.5 * z * z;
    }
    Ok(total / y.len() as f64)
}

/// Joint Gaussian over `n` targets with `Sigma = L L^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGaussianPrediction {
    pub mu: Vec<f64>,
    /// Row-major `n x n` lower-triangular factor.
    pub l: Vec<f64>,
}

impl JointGaussianPrediction {
    pub fn new(mu: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        if l.len() != n * n {
            return Err(TnpError::Dimension("factor size".into()));
        }
        for i in 0..n {
            if (i + 1..n).any(|j| l[i * n + j] != 0.0) {
                return Err(TnpError::Domain("factor is not lower triangular".into()));
            }
        }
        Ok(Self { mu, l })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn covariance(&self) -> Vec<f64> {
        linalg::lower_product(&self.l, self.dim())
    }

    /// Marginal standard deviations `sqrt(diag(Sigma))`.
    pub fn marginal_sigma(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[i * n + k].powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn to_diagonal(&self) -> DiagonalPrediction {
        DiagonalPrediction {
            mu: self.mu.clone(),
            sigma: self.marginal_sigma(),
            batch_size: 1,
            n_target: self.dim(),
            dim_y: 1,
        }
    }
}

/// `log N(y | mu, L L^T)` divided by the number of targets.
pub fn log_likelihood_joint(pred: &JointGaussianPrediction, y: &[f64]) -> Result<f64> {
    let n = pred.dim();
    if y.len() != n || n == 0 {
        return Err(TnpError::Dimension(format!("{} labels for {n} targets", y.len())));
    }
    let mut logdet = 0.0;
    for i in 0..n {
        let d = pred.l[i * n + i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(TnpError::Factorization(format!("singular factor (L[{i}][{i}] = {d})")));
        }
        logdet += d.ln();
    }
    let r: Vec<f64> = y.iter().zip(&pred.mu).map(|(a, b)| a - b).collect();
    let z = linalg::solve_lower(&pred.l, n, &r);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok((n as f64 * NEG_HALF_LN_2PI - logdet - 0.5 * quad) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mean() {
        let p = DiagonalPrediction::univariate(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let ll = log_likelihood_diag(&p, &[0.0, 1.0]).unwrap();
        assert!((ll + 0.91894).abs() < 1e-5);
        let bad = DiagonalPrediction::univariate(vec![0.0], vec![0.0]).unwrap();
        assert!(log_likelihood_diag(&bad, &[0.0]).is_err());
    }

    #[test]
    fn joint_identity_cases() {
        let one = JointGaussianPrediction::new(vec![0.0], vec![1.0]).unwrap();
        assert!((log_likelihood_joint(&one, &[0.0]).unwrap() + 0.91894).abs() < 1e-5);
        let two = JointGaussianPrediction::new(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ll = log_likelihood_joint(&two, &[0.0, 0.0]).unwrap();
        assert!((2.0 * ll + 1.83788).abs() < 1e-5);
        assert!((ll + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn diagonal_factor_matches_diag_ll() {
        let mu = vec![0.3, -1.0, 2.0];
        let s = [0.5, 1.5, 0.2];
        let mut l = vec![0.0; 9];
        for i in 0..3 {
            l[i * 3 + i] = s[i];
        }
        let y = [0.1, -0.4, 2.3];
        let j = log_likelihood_joint(&JointGaussianPrediction::new(mu.clone(), l).unwrap(), &y).unwrap();
        let d = log_likelihood_diag(&DiagonalPrediction::univariate(mu, s.to_vec()).unwrap(), &y).unwrap();
        assert!((j - d).abs() < 1e-10);
    }

    #[test]
    fn singular_and_upper_rejected() {
        let p = JointGaussianPrediction::new(vec![0.0; 2], vec![1.0, 0.0, 0.5, 0.0]).unwrap();
        assert!(matches!(log_likelihood_joint(&p, &[0.0, 0.0]), Err(TnpError::Factorization(_))));
        assert!(JointGaussianPrediction::new(vec![0.0; 2], vec![1.0, 0.1, 0.0, 1.0]).is_err());
    }
}
