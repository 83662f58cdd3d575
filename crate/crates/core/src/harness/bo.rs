//! UCB Bayesian optimization (minimization) with a model surrogate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TnpError};
use crate::model::Tnp;
use crate::rng::{self, purpose};
use crate::tasks::{sample_gp_values, BenchmarkFunction, KernelSpec, TaskBatch};

pub const GRID_POINTS_1D: usize = 1000;
pub const CANDIDATES_MULTI_D: usize = 4096;
pub const DEFAULT_INIT_COUNT: usize = 5;

/// A 1-D function drawn from a GP prior on a dense grid, linearly interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn sample(rng: &mut impl Rng, kernel: &KernelSpec, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(TnpError::Config("grid needs two points and lo < hi".into()));
        }
        let values = sample_gp_values(rng, kernel, &linspace(lo, hi, n), 1)?;
        Ok(Self { lo, hi, values })
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.values.len())
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(TnpError::Domain(format!("{x} outside [{}, {}]", self.lo, self.hi)));
        }
        let n = self.values.len();
        let t = (x - self.lo) / (self.hi - self.lo) * (n - 1) as f64;
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        Ok((1.0 - w) * self.values[i] + w * self.values[i + 1])
    }

    /// Minimum of the interpolant, attained at a grid node.
    pub fn optimum(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    Benchmark(BenchmarkFunction),
    Grid(GridFunction),
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Self::Benchmark(f) => f.dim(),
            Self::Grid(_) => 1,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Self::Benchmark(f) => f.domain(),
            Self::Grid(g) => (g.lo, g.hi),
        }
    }

    pub fn optimum(&self) -> f64 {
        match self {
            Self::Benchmark(f) => f.optimum(),
            Self::Grid(g) => g.optimum(),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            Self::Benchmark(f) => f.value(x)?,
            Self::Grid(g) => {
                if x.len() != 1 {
                    return Err(TnpError::Dimension(format!("expected 1-D input, got {}", x.len())));
                }
                g.value(x[0])?
            }
        };
        if !v.is_finite() {
            return Err(TnpError::NonFinite(format!("objective value {v} at {x:?}")));
        }
        Ok(v)
    }
}

/// Halton sequence in bases 2, 3, 5, ... with a random Cranley-Patterson shift.
pub fn halton_points(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(dim <= PRIMES.len(), "Halton dimension above {}", PRIMES.len());
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(n * dim);
    for i in 1..=n as u64 {
        for (d, &base) in PRIMES[..dim].iter().enumerate() {
            let (mut f, mut r, mut k) = (1.0, 0.0, i);
            while k > 0 {
                f /= base as f64;
                r += f * (k % base) as f64;
                k /= base;
            }
            out.push((r + shift[d]).fract());
        }
    }
    out
}

/// Candidate points, row-major with `dim` columns.
pub fn candidates(objective: &Objective, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = objective.domain();
    match objective {
        Objective::Grid(g) => g.grid(),
        _ if objective.dim() == 1 => linspace(lo, hi, GRID_POINTS_1D),
        _ => halton_points(CANDIDATES_MULTI_D, objective.dim(), rng)
            .into_iter()
            .map(|u| lo + (hi - lo) * u)
            .collect(),
    }
}

/// Predictive mean and standard deviation at candidate points given the archive.
pub trait Surrogate {
    fn predict(&self, objective: &Objective, xs: &[f64], ys: &[f64], cand: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// The true objective with zero uncertainty.
pub struct OracleSurrogate;

impl Surrogate for OracleSurrogate {
    fn predict(&self, objective: &Objective, _: &[f64], _: &[f64], cand: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = objective.dim();
        let mu = cand.chunks(d).map(|x| objective.value(x)).collect::<Result<Vec<_>>>()?;
        let n = mu.len();
        Ok((mu, vec![0.0; n]))
    }
}

/// Same prediction everywhere; with random tie-breaking this is random search over candidates.
pub struct ConstantSurrogate;

impl Surrogate for ConstantSurrogate {
    fn predict(&self, objective: &Objective, _: &[f64], _: &[f64], cand: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = cand.len() / objective.dim();
        Ok((vec![0.0; n], vec![1.0; n]))
    }
}

/// A diagonal-output model. Inputs are rescaled from the objective's box to `input_box`, and
/// with `standardize` the archive values are z-scored before conditioning.
pub struct ModelSurrogate<'a> {
    pub model: &'a Tnp,
    pub input_box: (f64, f64),
    pub standardize: bool,
}

impl Surrogate for ModelSurrogate<'_> {
    fn predict(&self, objective: &Objective, xs: &[f64], ys: &[f64], cand: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = objective.dim();
        let (lo, hi) = objective.domain();
        let (a, b) = self.input_box;
        let map = |v: &f64| a + (b - a) * (v - lo) / (hi - lo);
        let (shift, scale) = if self.standardize && ys.len() > 1 {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let cx: Vec<f64> = xs.iter().map(map).collect();
        let cy: Vec<f64> = ys.iter().map(|y| (y - shift) / scale).collect();
        let tx: Vec<f64> = cand.iter().map(map).collect();
        let task = TaskBatch::from_sets(&cx, &cy, &tx, None, d, 1)?;
        let pred = self.model.predict_diagonal(&task)?;
        let mu = pred.mu.iter().map(|m| m * scale + shift).collect();
        let sigma = pred.sigma.iter().map(|s| s * scale).collect();
        Ok((mu, sigma))
    }
}

/// `argmax -mu + kappa sigma` over candidates; ties are broken uniformly at random.
pub fn ucb_acquisition_select(mu: &[f64], sigma: &[f64], kappa: f64, rng: &mut impl Rng) -> Result<usize> {
    if mu.is_empty() || mu.len() != sigma.len() {
        return Err(TnpError::Config("acquisition needs at least one candidate".into()));
    }
    let scores: Vec<f64> = mu.iter().zip(sigma).map(|(m, s)| -m + kappa * s).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
    if ties.is_empty() {
        return Err(TnpError::NonFinite("acquisition scores".into()));
    }
    Ok(ties[rng.random_range(0..ties.len())])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoState {
    pub objective: Objective,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub best: f64,
    /// Simple regret after initialization and after each iteration.
    pub regret_trace: Vec<f64>,
    pub iterations: usize,
}

impl BoState {
    fn record(&mut self, x: &[f64]) -> Result<()> {
        let y = self.objective.value(x)?;
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        self.best = self.best.min(y);
        Ok(())
    }

    pub fn simple_regret(&self) -> f64 {
        (self.best - self.objective.optimum()).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoConfig {
    pub iterations: usize,
    pub init_count: usize,
    pub kappa: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            init_count: DEFAULT_INIT_COUNT,
            kappa: 1.0,
        }
    }
}

fn init_state(objective: &Objective, init_count: usize, rng: &mut ChaCha8Rng) -> Result<BoState> {
    let mut state = BoState {
        objective: objective.clone(),
        xs: Vec::new(),
        ys: Vec::new(),
        best: f64::INFINITY,
        regret_trace: Vec::new(),
        iterations: 0,
    };
    let (lo, hi) = objective.domain();
    for _ in 0..init_count.max(1) {
        let x: Vec<f64> = (0..objective.dim()).map(|_| rng.random_range(lo..=hi)).collect();
        state.record(&x)?;
    }
    state.regret_trace.push(state.simple_regret());
    Ok(state)
}

/// UCB optimization of `objective`. Initial points and candidate sets depend only on `seed`, so
/// surrogates compared at the same seed start from the same archive.
pub fn run_bo(surrogate: &dyn Surrogate, objective: &Objective, cfg: &BoConfig, seed: u64) -> Result<BoState> {
    let mut init = rng::stream(seed, purpose::BO);
    let mut state = init_state(objective, cfg.init_count, &mut init)?;
    let mut choice = rng::stream(seed, purpose::BO + 1);
    let d = objective.dim();
    for _ in 0..cfg.iterations {
        let cand = candidates(objective, &mut init);
        let (mu, sigma) = surrogate.predict(objective, &state.xs, &state.ys, &cand)?;
        let i = ucb_acquisition_select(&mu, &sigma, cfg.kappa, &mut choice)?;
        state.record(&cand[i * d..(i + 1) * d])?;
        state.iterations += 1;
        state.regret_trace.push(state.simple_regret());
    }
    Ok(state)
}

/// Uniform random evaluations over the box, sharing the initial archive of [`run_bo`].
pub fn run_random_search(objective: &Objective, cfg: &BoConfig, seed: u64) -> Result<BoState> {
    let mut init = rng::stream(seed, purpose::BO);
    let mut state = init_state(objective, cfg.init_count, &mut init)?;
    let mut choice = rng::stream(seed, purpose::BO + 2);
    let (lo, hi) = objective.domain();
    for _ in 0..cfg.iterations {
        let x: Vec<f64> = (0..objective.dim()).map(|_| choice.random_range(lo..=hi)).collect();
        state.record(&x)?;
        state.iterations += 1;
        state.regret_trace.push(state.simple_regret());
    }
    Ok(state)
}

/// Paired surrogate and random-search runs on a list of objectives; run `i` uses seed
/// `seed + i` for both.
#[derive(Clone, Debug)]
pub struct BoStudy {
    pub surrogate: Vec<BoState>,
    pub random: Vec<BoState>,
}

impl BoStudy {
    pub fn run(surrogate: &dyn Surrogate, objectives: &[Objective], cfg: &BoConfig, seed: u64) -> Result<Self> {
        let mut out = Self {
            surrogate: Vec::new(),
            random: Vec::new(),
        };
        for (i, obj) in objectives.iter().enumerate() {
            let s = seed.wrapping_add(i as u64);
            out.surrogate.push(run_bo(surrogate, obj, cfg, s)?);
            out.random.push(run_random_search(obj, cfg, s)?);
        }
        Ok(out)
    }

    pub fn mean_final_regret(runs: &[BoState]) -> f64 {
        runs.iter().map(BoState::simple_regret).sum::<f64>() / runs.len().max(1) as f64
    }
}

/// `count` GP-prior objectives on [-2, 2] with hyperparameters drawn from the given ranges.
pub fn gp_objectives(
    family: crate::tasks::KernelFamily,
    lengthscale: (f64, f64),
    scale: (f64, f64),
    count: usize,
    seed: u64,
) -> Result<Vec<Objective>> {
    (0..count as u64)
        .map(|i| {
            let mut r = rng::stream(seed, purpose::BO + 16 + i);
            let l = r.random_range(lengthscale.0..=lengthscale.1);
            let s = r.random_range(scale.0..=scale.1);
            let k = KernelSpec::new(family, l, s);
            Ok(Objective::Grid(GridFunction::sample(&mut r, &k, -2.0, 2.0, GRID_POINTS_1D)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::KernelFamily;

    fn grid_objective(seed: u64) -> Objective {
        let k = KernelSpec::new(KernelFamily::Rbf, 0.5, 1.0);
        let mut r = rng::stream(seed, 0);
        Objective::Grid(GridFunction::sample(&mut r, &k, -2.0, 2.0, 200).unwrap())
    }

    #[test]
    fn acquisition_rules() {
        let mut r = rng::stream(0, 0);
        assert_eq!(ucb_acquisition_select(&[3.0, 1.0, 2.0], &[0.0; 3], 1.0, &mut r).unwrap(), 1);
        assert_eq!(ucb_acquisition_select(&[0.0; 3], &[0.1, 0.5, 0.2], 1.0, &mut r).unwrap(), 1);
        assert!(ucb_acquisition_select(&[], &[], 1.0, &mut r).is_err());
    }

    #[test]
    fn interpolation() {
        let g = GridFunction { lo: 0.0, hi: 1.0, values: vec![0.0, 2.0, -1.0] };
        assert_eq!(g.value(0.25).unwrap(), 1.0);
        assert_eq!(g.value(1.0).unwrap(), -1.0);
        assert_eq!(g.optimum(), -1.0);
        assert!(g.value(1.5).is_err());
    }

    #[test]
    fn oracle_finds_grid_optimum() {
        let obj = grid_objective(1);
        let s = run_bo(&OracleSurrogate, &obj, &BoConfig { iterations: 1, ..Default::default() }, 4).unwrap();
        assert_eq!(*s.regret_trace.last().unwrap(), 0.0);
        let f = Objective::Benchmark(BenchmarkFunction::Ackley2);
        let s = run_bo(&OracleSurrogate, &f, &BoConfig { iterations: 3, ..Default::default() }, 4).unwrap();
        assert!(s.regret_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn reproducible_and_monotone() {
        let obj = grid_objective(2);
        let cfg = BoConfig { iterations: 20, ..Default::default() };
        let a = run_bo(&ConstantSurrogate, &obj, &cfg, 9).unwrap();
        assert_eq!(a, run_bo(&ConstantSurrogate, &obj, &cfg, 9).unwrap());
        let r = run_random_search(&obj, &cfg, 9).unwrap();
        assert_eq!(a.ys[..5], r.ys[..5]);
        for s in [&a, &r] {
            assert_eq!(s.regret_trace.len(), 21);
            assert!(s.regret_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.regret_trace.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn halton_fills_unit_box() {
        let mut r = rng::stream(0, 0);
        let p = halton_points(4096, 3, &mut r);
        assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        for d in 0..3 {
            let below = p.chunks(3).filter(|c| c[d] < 0.5).count();
            assert!((below as i64 - 2048).abs() < 20);
        }
    }

    #[test]
    fn non_finite_objective_aborts() {
        let g = GridFunction { lo: 0.0, hi: 1.0, values: vec![0.0, f64::NAN] };
        let err = run_random_search(&Objective::Grid(g), &BoConfig::default(), 0).unwrap_err();
        assert!(matches!(err, TnpError::NonFinite(_)));
    }
}
