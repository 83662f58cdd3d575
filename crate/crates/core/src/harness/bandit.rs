//! UCB contextual bandit on the wheel problem.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TnpError};
use crate::model::Tnp;
use crate::rng::{self, purpose};
use crate::tasks::wheel::{sample_disk, WheelProblem, N_ARMS};
use crate::tasks::TaskBatch;

/// Most recent interactions kept as context.
pub const CONTEXT_WINDOW: usize = 512;
/// Trailing steps averaged for simple regret.
pub const SIMPLE_REGRET_WINDOW: usize = 500;

/// `argmax_k mu_k + kappa sigma_k`, lowest index on ties.
pub fn ucb_select_arm(mu: &[f64], sigma: &[f64], kappa: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, (m, s)) in mu.iter().zip(sigma).enumerate() {
        let v = m + kappa * s;
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

/// How arms are chosen.
#[derive(Clone, Copy, Debug)]
pub enum BanditPolicy<'a> {
    /// UCB on a reward-regression model conditioned on past interactions.
    Model(&'a Tnp),
    /// UCB on the true means (always optimal).
    Oracle,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditState {
    pub delta: f64,
    pub contexts: Vec<[f64; 2]>,
    pub arms: Vec<usize>,
    pub rewards: Vec<f64>,
    pub optimal_means: Vec<f64>,
    pub instant_regret: Vec<f64>,
    pub cumulative_regret: f64,
}

impl BanditState {
    fn new(delta: f64) -> Self {
        Self {
            delta,
            contexts: Vec::new(),
            arms: Vec::new(),
            rewards: Vec::new(),
            optimal_means: Vec::new(),
            instant_regret: Vec::new(),
            cumulative_regret: 0.0,
        }
    }

    pub fn steps(&self) -> usize {
        self.arms.len()
    }

    /// The last `window` interactions as a context set plus one target at `x`: every context
    /// point carries only the chosen arm's reward, the other arms are unobserved.
    pub fn query_task(&self, x: [f64; 2], window: usize) -> Result<TaskBatch> {
        let start = self.steps().saturating_sub(window);
        let m = self.steps() - start;
        let mut xs = Vec::with_capacity((m + 1) * 2);
        let mut ys = vec![0.0; (m + 1) * N_ARMS];
        let mut hidden = vec![true; m * N_ARMS];
        for (i, t) in (start..self.steps()).enumerate() {
            xs.extend_from_slice(&self.contexts[t]);
            ys[i * N_ARMS + self.arms[t]] = self.rewards[t];
            hidden[i * N_ARMS + self.arms[t]] = false;
        }
        xs.extend_from_slice(&x);
        let mut task = TaskBatch::new(xs, ys, 1, m + 1, m, 2, N_ARMS)?;
        task.hidden = Some(hidden);
        Ok(task)
    }
}

/// Runs `steps` rounds at radius `delta`. Contexts and reward noise come from `seed` alone, so
/// different policies with the same seed face the same sequence of problems.
pub fn run_bandit_episode(
    policy: BanditPolicy,
    delta: f64,
    steps: usize,
    kappa: f64,
    seed: u64,
) -> Result<BanditState> {
    let problem = WheelProblem::new(delta)?;
    let mut world = rng::stream(seed, purpose::BANDIT);
    let mut choice: ChaCha8Rng = rng::stream(seed, purpose::BANDIT + 1);
    let mut state = BanditState::new(delta);
    for _ in 0..steps {
        let x = sample_disk(&mut world);
        let outcome = problem.rewards(x, &mut world)?;
        let arm = match policy {
            BanditPolicy::Uniform => choice.random_range(0..N_ARMS),
            BanditPolicy::Oracle => ucb_select_arm(&outcome.means, &[0.0; N_ARMS], kappa),
            BanditPolicy::Model(model) => {
                if state.steps() == 0 {
                    choice.random_range(0..N_ARMS)
                } else {
                    let pred = model.predict_diagonal(&state.query_task(x, CONTEXT_WINDOW)?)?;
                    ucb_select_arm(&pred.mu, &pred.sigma, kappa)
                }
            }
        };
        let best = outcome.means[outcome.optimal_arm];
        let regret = best - outcome.means[arm];
        state.contexts.push(x);
        state.arms.push(arm);
        state.rewards.push(outcome.rewards[arm]);
        state.optimal_means.push(best);
        state.instant_regret.push(regret);
        state.cumulative_regret += regret;
    }
    Ok(state)
}

/// Mean cumulative and simple regret over a set of runs, raw and normalized so the paired
/// uniform policy scores 100.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretSummary {
    pub cumulative: f64,
    pub simple: f64,
    pub normalized_cumulative: f64,
    pub normalized_simple: f64,
}

fn simple_regret(s: &BanditState) -> f64 {
    let w = SIMPLE_REGRET_WINDOW.min(s.steps()).max(1);
    s.instant_regret[s.steps() - w.min(s.steps())..].iter().sum::<f64>() / w as f64
}

pub fn regret_metrics(states: &[BanditState], uniform: &[BanditState]) -> Result<RegretSummary> {
    if states.is_empty() || states.len() != uniform.len() {
        return Err(TnpError::Config("regret needs paired, non-empty run sets".into()));
    }
    for (a, b) in states.iter().zip(uniform) {
        if a.delta != b.delta || a.steps() != b.steps() {
            return Err(TnpError::Config("runs differ in delta or length".into()));
        }
    }
    let n = states.len() as f64;
    let cum = states.iter().map(|s| s.cumulative_regret).sum::<f64>() / n;
    let simple = states.iter().map(simple_regret).sum::<f64>() / n;
    let ucum = uniform.iter().map(|s| s.cumulative_regret).sum::<f64>() / n;
    let usimple = uniform.iter().map(simple_regret).sum::<f64>() / n;
    Ok(RegretSummary {
        cumulative: cum,
        simple,
        normalized_cumulative: 100.0 * cum / ucum,
        normalized_simple: 100.0 * simple / usimple,
    })
}

/// Model, uniform and oracle runs over `runs` paired seeds `seed, seed + 1, ...`.
#[derive(Clone, Debug)]
pub struct BanditStudy {
    pub model: Vec<BanditState>,
    pub uniform: Vec<BanditState>,
    pub oracle: Vec<BanditState>,
}

impl BanditStudy {
    pub fn run(policy: BanditPolicy, delta: f64, steps: usize, kappa: f64, runs: usize, seed: u64) -> Result<Self> {
        let mut out = Self {
            model: Vec::new(),
            uniform: Vec::new(),
            oracle: Vec::new(),
        };
        for r in 0..runs as u64 {
            let s = seed.wrapping_add(r);
            out.model.push(run_bandit_episode(policy, delta, steps, kappa, s)?);
            out.uniform.push(run_bandit_episode(BanditPolicy::Uniform, delta, steps, kappa, s)?);
            out.oracle.push(run_bandit_episode(BanditPolicy::Oracle, delta, steps, kappa, s)?);
        }
        Ok(out)
    }

    pub fn summary(&self) -> Result<RegretSummary> {
        regret_metrics(&self.model, &self.uniform)
    }

    pub fn oracle_summary(&self) -> Result<RegretSummary> {
        regret_metrics(&self.oracle, &self.uniform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ucb_choices() {
        assert_eq!(ucb_select_arm(&[1.0, 2.0, 0.0, 0.0, 0.0], &[0.0; 5], 1.0), 1);
        assert_eq!(ucb_select_arm(&[1.0; 5], &[0.0, 1.0, 0.0, 0.0, 0.0], 1.0), 1);
        assert_eq!(ucb_select_arm(&[1.0, 0.5, 0.0, 0.0, 0.0], &[0.0, 9.0, 0.0, 0.0, 0.0], 0.0), 0);
        assert_eq!(ucb_select_arm(&[1.0; 5], &[0.0; 5], 1.0), 0);
    }

    #[test]
    fn oracle_and_uniform() {
        let oracle = run_bandit_episode(BanditPolicy::Oracle, 0.7, 300, 1.0, 3).unwrap();
        assert_eq!(oracle.cumulative_regret, 0.0);
        let u1 = run_bandit_episode(BanditPolicy::Uniform, 0.7, 300, 1.0, 3).unwrap();
        let u2 = run_bandit_episode(BanditPolicy::Uniform, 0.7, 300, 1.0, 3).unwrap();
        assert_eq!(u1, u2);
        assert_eq!(oracle.contexts, u1.contexts);
        let s = regret_metrics(&[u1.clone()], &[u1.clone()]).unwrap();
        assert_eq!(s.normalized_cumulative, 100.0);
        let o = regret_metrics(&[oracle], &[u1]).unwrap();
        assert_eq!(o.normalized_cumulative, 0.0);
    }

    #[test]
    fn regret_is_linear() {
        let mut s = run_bandit_episode(BanditPolicy::Uniform, 0.5, 100, 1.0, 1).unwrap();
        let before = s.cumulative_regret;
        s.instant_regret.iter_mut().for_each(|r| *r *= 2.0);
        s.cumulative_regret = s.instant_regret.iter().sum();
        assert!((s.cumulative_regret - 2.0 * before).abs() < 1e-9);
    }

    #[test]
    fn query_task_marks_unchosen_arms() {
        let mut s = BanditState::new(0.5);
        s.contexts.push([0.1, 0.2]);
        s.arms.push(3);
        s.rewards.push(50.0);
        let t = s.query_task([0.0, 0.0], CONTEXT_WINDOW).unwrap();
        assert_eq!(t.n_context, 1);
        assert_eq!(t.y_of(0, 0), &[0.0, 0.0, 0.0, 50.0, 0.0]);
        assert_eq!(t.hidden.unwrap(), vec![true, true, true, false, true]);
    }
}
