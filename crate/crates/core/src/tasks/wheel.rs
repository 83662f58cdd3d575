//! The wheel contextual bandit: five arms, a low-reward disk of radius `delta` and four
//! high-reward quadrants outside it.
//!
//! Arms are 0-based here: index 0 is the "safe" arm, indices 1..=4 are the quadrant arms for
//! `(+,+)`, `(-,+)`, `(-,-)`, `(+,-)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TnpError};
use crate::tasks::TaskBatch;

pub const N_ARMS: usize = 5;
pub const SAFE_MEAN: f64 = 1.2;
pub const DEFAULT_MEAN: f64 = 1.0;
pub const HIGH_MEAN: f64 = 50.0;
pub const REWARD_STD: f64 = 0.012;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WheelProblem {
    delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WheelOutcome {
    pub rewards: [f64; N_ARMS],
    pub means: [f64; N_ARMS],
    pub optimal_arm: usize,
}

impl WheelProblem {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(TnpError::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Quadrant arm for a point outside the low-reward disk.
    fn quadrant_arm(x: [f64; 2]) -> usize {
        match (x[0] >= 0.0, x[1] >= 0.0) {
            (true, true) => 1,
            (false, true) => 2,
            (false, false) => 3,
            (true, false) => 4,
        }
    }

    /// Expected rewards and the optimal arm at `x`.
    pub fn means(&self, x: [f64; 2]) -> Result<([f64; N_ARMS], usize)> {
        let norm = x[0].hypot(x[1]);
        if !norm.is_finite() || norm > 1.0 + 1e-12 {
            return Err(TnpError::Domain(format!("|X| = {norm} outside the unit disk")));
        }
        let mut means = [DEFAULT_MEAN; N_ARMS];
        means[0] = SAFE_MEAN;
        if norm <= self.delta {
            return Ok((means, 0));
        }
        let arm = Self::quadrant_arm(x);
        means[arm] = HIGH_MEAN;
        Ok((means, arm))
    }

    pub fn rewards(&self, x: [f64; 2], rng: &mut impl Rng) -> Result<WheelOutcome> {
        let (means, optimal_arm) = self.means(x)?;
        let mut rewards = means;
        for r in &mut rewards {
            *r += REWARD_STD * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(WheelOutcome {
            rewards,
            means,
            optimal_arm,
        })
    }
}

/// Uniform point on the unit disk.
pub fn sample_disk(rng: &mut impl Rng) -> [f64; 2] {
    let r = rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Training distribution for the reward-regression model.
#[derive(Clone, Debug, PartialEq)]
pub struct WheelTaskConfig {
    pub batch_size: usize,
    /// Context size drawn uniformly from this inclusive range, shared across the batch.
    pub n_context: (usize, usize),
    pub n_targets: usize,
}

impl Default for WheelTaskConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            n_context: (512, 512),
            n_targets: 50,
        }
    }
}

/// `B` wheel problems with `delta ~ U(0, 1)`; each point carries all five arm rewards.
pub fn sample_wheel_batch(rng: &mut impl Rng, cfg: &WheelTaskConfig) -> Result<TaskBatch> {
    let (lo, hi) = cfg.n_context;
    if lo == 0 || lo > hi || cfg.n_targets == 0 {
        return Err(TnpError::Config(format!("invalid wheel task config {cfg:?}")));
    }
    let m = rng.random_range(lo..=hi);
    let (b, n) = (cfg.batch_size, m + cfg.n_targets);
    let mut xs = Vec::with_capacity(b * n * 2);
    let mut ys = Vec::with_capacity(b * n * N_ARMS);
    for _ in 0..b {
        let delta = loop {
            let d: f64 = rng.random();
            if d > 0.0 {
                break d;
            }
        };
        let problem = WheelProblem::new(delta)?;
        for _ in 0..n {
            let x = sample_disk(rng);
            let out = problem.rewards(x, rng)?;
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&out.rewards);
        }
    }
    TaskBatch::new(xs, ys, b, n, m, 2, N_ARMS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn centre_prefers_safe_arm() {
        for delta in [0.01, 0.5, 0.99] {
            let (means, arm) = WheelProblem::new(delta).unwrap().means([0.0, 0.0]).unwrap();
            assert_eq!(arm, 0);
            assert_eq!(means, [1.2, 1.0, 1.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn outside_pays_fifty_by_quadrant() {
        let p = WheelProblem::new(0.5).unwrap();
        let cases = [([0.6, 0.6], 1), ([-0.6, 0.6], 2), ([-0.6, -0.6], 3), ([0.6, -0.6], 4)];
        for (x, want) in cases {
            let (means, arm) = p.means(x).unwrap();
            assert_eq!(arm, want);
            assert_eq!(means[arm], 50.0);
            assert_eq!(means[0], 1.2);
            assert_eq!(means.iter().filter(|&&m| m == 1.0).count(), 3);
        }
    }

    #[test]
    fn errors_and_limits() {
        assert!(WheelProblem::new(0.5).unwrap().means([1.0, 1.0]).is_err());
        assert!(WheelProblem::new(1.0).is_err());
        let p = WheelProblem::new(0.999_999).unwrap();
        let mut r = rng::stream(0, 0);
        for _ in 0..1000 {
            let x = sample_disk(&mut r);
            if x[0].hypot(x[1]) <= 0.999_999 {
                assert_eq!(p.means(x).unwrap().1, 0);
            }
        }
    }

    #[test]
    fn reward_noise_is_small() {
        let p = WheelProblem::new(0.3).unwrap();
        let mut r = rng::stream(1, 0);
        let out = p.rewards([0.0, 0.9], &mut r).unwrap();
        for (rw, m) in out.rewards.iter().zip(out.means) {
            assert!((rw - m).abs() < 0.1);
        }
    }
}
