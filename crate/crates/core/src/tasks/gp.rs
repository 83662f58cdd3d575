//! Gaussian-process function draws for meta-regression.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TnpError};
use crate::linalg;
use crate::tasks::TaskBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Rbf,
    Matern52,
    Periodic,
}

impl FromStr for KernelFamily {
    type Err = TnpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(Self::Rbf),
            "matern52" | "matern" => Ok(Self::Matern52),
            "periodic" => Ok(Self::Periodic),
            other => Err(TnpError::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rbf => "rbf",
            Self::Matern52 => "matern52",
            Self::Periodic => "periodic",
        }
    }
}

/// Stationary kernel of Euclidean distance `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub scale: f64,
    pub period: f64,
    pub jitter: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, scale: f64) -> Self {
        Self {
            family,
            lengthscale,
            scale,
            period: 1.0,
            jitter: 1e-6,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.scale > 0.0 && self.jitter >= 0.0 && self.period > 0.0)
        {
            return Err(TnpError::Config(format!("invalid kernel {self:?}")));
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        let (l, s2) = (self.lengthscale, self.scale * self.scale);
        match self.family {
            KernelFamily::Rbf => s2 * (-0.5 * r * r / (l * l)).exp(),
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * r / l;
                s2 * (1.0 + a + 5.0 * r * r / (3.0 * l * l)) * (-a).exp()
            }
            KernelFamily::Periodic => {
                let s = (PI * r / self.period).sin();
                s2 * (-2.0 * s * s / (l * l)).exp()
            }
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Gram matrix (without jitter) of the `n = xs.len() / dim` points in `xs`.
pub fn kernel_matrix(spec: &KernelSpec, xs: &[f64], dim: usize) -> Result<Vec<f64>> {
    spec.check()?;
    if dim == 0 || xs.len() % dim != 0 {
        return Err(TnpError::Dimension("points not a multiple of dim".into()));
    }
    if !xs.iter().all(|v| v.is_finite()) {
        return Err(TnpError::NonFinite("kernel input".into()));
    }
    let n = xs.len() / dim;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(distance(&xs[i * dim..(i + 1) * dim], &xs[j * dim..(j + 1) * dim]));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Draws one function's values at `xs` from `N(0, K + jitter I)`, escalating the jitter
/// x10 (at most twice) if the factorization fails.
pub fn sample_gp_values(
    rng: &mut impl Rng,
    spec: &KernelSpec,
    xs: &[f64],
    dim: usize,
) -> Result<Vec<f64>> {
    let n = xs.len() / dim.max(1);
    let k = kernel_matrix(spec, xs, dim)?;
    let (l, _) = linalg::cholesky_jittered(&k, n, spec.jitter, spec.jitter * 100.0)
        .ok_or_else(|| TnpError::Factorization("GP gram matrix".into()))?;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok((0..n)
        .map(|i| (0..=i).map(|j| l[i * n + j] * z[j]).sum())
        .collect())
}

/// How the context size `m` is drawn given `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextRule {
    pub min: usize,
    pub max: Option<usize>,
    pub target_margin: usize,
}

impl ContextRule {
    /// `m ~ U[3, N - 3]`.
    pub const ONE_D: Self = Self {
        min: 3,
        max: None,
        target_margin: 3,
    };
}

/// Draws `m` uniformly over `[min, min(max, N - margin)]`.
pub fn split_context_target(rng: &mut impl Rng, n_points: usize, rule: ContextRule) -> Result<usize> {
    let lo = rule.min.max(1);
    if n_points < lo + rule.target_margin.max(1) {
        return Err(TnpError::InvalidTask(format!(
            "N={n_points} too small for context rule {rule:?}"
        )));
    }
    let mut hi = n_points - rule.target_margin.max(1);
    if let Some(cap) = rule.max {
        hi = hi.min(cap.max(lo));
    }
    Ok(rng.random_range(lo..=hi))
}

/// Distribution of meta-regression tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct GpTaskConfig {
    pub family: KernelFamily,
    pub batch_size: usize,
    /// `N ~ U[lo, hi)`.
    pub n_points: (usize, usize),
    pub context: ContextRule,
    pub lengthscale: (f64, f64),
    pub scale: (f64, f64),
    pub dim_x: usize,
    pub x_range: (f64, f64),
    /// Standard deviation of i.i.d. observation noise added to each draw.
    pub noise_std: f64,
}

impl GpTaskConfig {
    /// 1-D regression: `B = 16`, `N ~ U[6, 50)`, `l ~ U[0.6, 1)`, `sigma_f ~ U[0.1, 1)`.
    pub fn one_d(family: KernelFamily) -> Self {
        Self {
            family,
            batch_size: 16,
            n_points: (6, 50),
            context: ContextRule::ONE_D,
            lengthscale: (0.6, 1.0),
            scale: (0.1, 1.0),
            dim_x: 1,
            x_range: (-2.0, 2.0),
            noise_std: 0.02,
        }
    }

    /// Multi-dimensional training ranges on the unit box.
    pub fn multi_d(dim_x: usize) -> Result<Self> {
        let (n_points, context) = match dim_x {
            2 => (
                (60, 128),
                ContextRule {
                    min: 30,
                    max: Some(97),
                    target_margin: 3,
                },
            ),
            3 => (
                (128, 256),
                ContextRule {
                    min: 64,
                    max: Some(191),
                    target_margin: 3,
                },
            ),
            d => return Err(TnpError::Config(format!("no multi-d profile for dim {d}"))),
        };
        Ok(Self {
            family: KernelFamily::Rbf,
            batch_size: 16,
            n_points,
            context,
            lengthscale: (0.6, 1.0),
            scale: (0.1, 1.0),
            dim_x,
            x_range: (0.0, 1.0),
            noise_std: 0.02,
        })
    }

    fn check(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.n_points.0 < self.n_points.1
            && self.lengthscale.0 > 0.0
            && self.lengthscale.0 <= self.lengthscale.1
            && self.scale.0 > 0.0
            && self.scale.0 <= self.scale.1
            && self.dim_x > 0
            && self.x_range.0 < self.x_range.1
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TnpError::Config(format!("invalid task config {self:?}")))
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a batch of functions; all functions share `N` and `m`.
pub fn sample_gp_batch(rng: &mut impl Rng, cfg: &GpTaskConfig) -> Result<TaskBatch> {
    cfg.check()?;
    let n = rng.random_range(cfg.n_points.0..cfg.n_points.1);
    let m = split_context_target(rng, n, cfg.context)?;
    let dx = cfg.dim_x;
    let mut xs = Vec::with_capacity(cfg.batch_size * n * dx);
    let mut ys = Vec::with_capacity(cfg.batch_size * n);
    for _ in 0..cfg.batch_size {
        let spec = KernelSpec::new(cfg.family, uniform(rng, cfg.lengthscale), uniform(rng, cfg.scale));
        let x: Vec<f64> = (0..n * dx).map(|_| uniform(rng, cfg.x_range)).collect();
        let mut y = sample_gp_values(rng, &spec, &x, dx)?;
        if cfg.noise_std > 0.0 {
            for v in &mut y {
                *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        xs.extend(x);
        ys.extend(y);
    }
    TaskBatch::new(xs, ys, cfg.batch_size, n, m, dx, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn kernel_values() {
        for family in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Periodic] {
            let k = KernelSpec::new(family, 0.7, 0.5);
            assert!((k.eval(0.0) - 0.25).abs() < 1e-15);
        }
        let rbf = KernelSpec::new(KernelFamily::Rbf, 1.0, 1.0);
        assert!((rbf.eval(1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((rbf.eval(1.0) - 0.60653).abs() < 1e-5);
        let per = KernelSpec::new(KernelFamily::Periodic, 0.8, 0.9);
        assert!((per.eval(per.period) - 0.81).abs() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric() {
        let mut r = rng::stream(3, 0);
        let xs: Vec<f64> = (0..40).map(|_| r.random_range(-2.0..2.0)).collect();
        for family in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Periodic] {
            let k = kernel_matrix(&KernelSpec::new(family, 0.6, 1.0), &xs, 2).unwrap();
            for i in 0..20 {
                for j in 0..20 {
                    assert!((k[i * 20 + j] - k[j * 20 + i]).abs() <= 1e-12);
                }
            }
        }
        assert!(kernel_matrix(&KernelSpec::new(KernelFamily::Rbf, 1.0, 1.0), &[f64::NAN], 1).is_err());
    }

    #[test]
    fn context_rule_bounds() {
        let mut r = rng::stream(1, 0);
        for _ in 0..100 {
            assert_eq!(split_context_target(&mut r, 6, ContextRule::ONE_D).unwrap(), 3);
            let m = split_context_target(&mut r, 20, ContextRule::ONE_D).unwrap();
            assert!((3..=17).contains(&m));
        }
        assert!(split_context_target(&mut r, 5, ContextRule::ONE_D).is_err());
    }

    #[test]
    fn batch_defaults_and_determinism() {
        let cfg = GpTaskConfig::one_d(KernelFamily::Rbf);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.n_points, (6, 50));
        let a = sample_gp_batch(&mut rng::stream(9, 4), &cfg).unwrap();
        let b = sample_gp_batch(&mut rng::stream(9, 4), &cfg).unwrap();
        assert_eq!(a, b);
        assert!((6..50).contains(&a.n_points));
        assert!(a.x.iter().all(|x| (-2.0..2.0).contains(x)));
    }
}
