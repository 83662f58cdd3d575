//! Synthetic optimization benchmarks (minimization convention).

use std::f64::consts::{E, PI};
use std::str::FromStr;

use crate::error::{Result, TnpError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchmarkFunction {
    Ackley2,
    Ackley3,
    Dropwave2,
    Michalewicz2,
    Cosine3,
    Rastrigin3,
}

impl FromStr for BenchmarkFunction {
    type Err = TnpError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ackley2" => Self::Ackley2,
            "ackley3" => Self::Ackley3,
            "dropwave2" => Self::Dropwave2,
            "michalewicz2" => Self::Michalewicz2,
            "cosine3" => Self::Cosine3,
            "rastrigin3" => Self::Rastrigin3,
            other => return Err(TnpError::Config(format!("unknown benchmark '{other}'"))),
        })
    }
}

impl BenchmarkFunction {
    pub const ALL: [Self; 6] = [
        Self::Ackley2,
        Self::Ackley3,
        Self::Dropwave2,
        Self::Michalewicz2,
        Self::Cosine3,
        Self::Rastrigin3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ackley2 => "ackley2",
            Self::Ackley3 => "ackley3",
            Self::Dropwave2 => "dropwave2",
            Self::Michalewicz2 => "michalewicz2",
            Self::Cosine3 => "cosine3",
            Self::Rastrigin3 => "rastrigin3",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Ackley2 | Self::Dropwave2 | Self::Michalewicz2 => 2,
            Self::Ackley3 | Self::Cosine3 | Self::Rastrigin3 => 3,
        }
    }

    /// Per-coordinate bounds.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Self::Ackley2 | Self::Ackley3 => (-32.768, 32.768),
            Self::Dropwave2 | Self::Rastrigin3 => (-5.12, 5.12),
            Self::Michalewicz2 => (0.0, PI),
            Self::Cosine3 => (-1.0, 1.0),
        }
    }

    /// Known global minimum value.
    pub fn optimum(self) -> f64 {
        match self {
            Self::Ackley2 | Self::Ackley3 | Self::Rastrigin3 => 0.0,
            Self::Dropwave2 => -1.0,
            Self::Michalewicz2 => -1.801_303_410_098_554,
            Self::Cosine3 => -0.3,
        }
    }

    /// A documented minimizer.
    pub fn minimizer(self) -> Vec<f64> {
        match self {
            Self::Michalewicz2 => vec![2.202_905_513_296_628, PI / 2.0],
            other => vec![0.0; other.dim()],
        }
    }

    pub fn value(self, x: &[f64]) -> Result<f64> {
        let (lo, hi) = self.domain();
        if x.len() != self.dim() || x.iter().any(|v| !(*v >= lo && *v <= hi)) {
            return Err(TnpError::Domain(format!("{x:?} outside {} domain", self.name())));
        }
        let d = x.len() as f64;
        Ok(match self {
            Self::Ackley2 | Self::Ackley3 => {
                let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
                let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
            }
            Self::Dropwave2 => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                -(1.0 + (12.0 * r2.sqrt()).cos()) / (0.5 * r2 + 2.0)
            }
            Self::Michalewicz2 => -x
                .iter()
                .enumerate()
                .map(|(i, v)| v.sin() * ((i + 1) as f64 * v * v / PI).sin().powi(20))
                .sum::<f64>(),
            Self::Cosine3 => x
                .iter()
                .map(|v| v * v - 0.1 * (5.0 * PI * v).cos())
                .sum(),
            Self::Rastrigin3 => {
                10.0 * d
                    + x.iter()
                        .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                        .sum::<f64>()
            }
        })
    }
}
