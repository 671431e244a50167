use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::condkl::DEFAULT_PIVOT_TOLERANCE;
use crate::error::{Error, Result};
use crate::forward::BoundaryConditions;
use crate::gpc::RuleKind;
use crate::grid::Grid;
use crate::inference::{SamplerConfig, DEFAULT_NOISE};
use crate::randfield::{CovarianceKernel, Truncation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d-smooth")]
    TwoDSmooth,
    #[serde(rename = "2d-rough")]
    TwoDRough,
    Custom,
}

/// Where the conductivity is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KappaSampling {
    Random {
        count: usize,
    },
    Uniform {
        count: usize,
    },
    /// Extrema (and 2D saddle points) of the reference log-conductivity,
    /// strongest first, then 1D inflection points, then random points. Any
    /// shortfall of critical points is made up with random ones.
    Critical {
        critical: usize,
        #[serde(default)]
        inflections: usize,
        random: usize,
    },
}

impl KappaSampling {
    pub fn count(&self) -> usize {
        match *self {
            KappaSampling::Random { count } | KappaSampling::Uniform { count } => count,
            KappaSampling::Critical {
                critical,
                inflections,
                random,
            } => critical + inflections + random,
        }
    }
}

/// Where the state is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Variance,
    Uniform,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Variance, Strategy::Uniform, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Variance => "variance",
            Strategy::Uniform => "uniform",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown strategy `{s}` (variance, uniform, random)"
                ))
            })
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn noise() -> f64 {
    DEFAULT_NOISE
}

fn pivot() -> f64 {
    DEFAULT_PIVOT_TOLERANCE
}

/// One experiment, serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: Problem,
    /// Interval per axis.
    pub extents: Vec<(f64, f64)>,
    /// Nodes per axis in 1D, cells per axis in 2D.
    pub counts: Vec<usize>,
    pub boundary: BoundaryConditions,
    pub kernel: CovarianceKernel,
    /// Mean and standard deviation of the conductivity.
    pub mu_k: f64,
    pub sigma_k: f64,
    pub truncation: Truncation,
    pub kappa_sampling: KappaSampling,
    pub strategy: Strategy,
    /// Number of state measurements.
    pub n_k: usize,
    #[serde(default)]
    pub min_separation: f64,
    pub degree: usize,
    /// Quadrature rule; tensor with `degree + 1` points per axis by default.
    #[serde(default)]
    pub rule: Option<RuleKind>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "noise")]
    pub sigma_delta: f64,
    #[serde(default = "one")]
    pub theta: f64,
    /// Add `N(0, sigma_delta^2)` noise to the state measurements.
    #[serde(default)]
    pub noisy: bool,
    #[serde(default = "yes")]
    pub polish: bool,
    #[serde(default = "pivot")]
    pub pivot_tolerance: f64,
    #[serde(default = "yes")]
    pub write_chains: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::build(self.extents.len(), &self.extents, &self.counts)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.kernel.validate(grid.dimension())?;
        self.boundary.validate(grid.dimension())?;
        if self.n_k == 0 || self.n_k > grid.len() {
            return Err(Error::arg(format!("n_k = {} is out of range", self.n_k)));
        }
        if self.kappa_sampling.count() > grid.len() {
            return Err(Error::arg(
                "more conductivity measurements than grid points",
            ));
        }
        if !(self.sigma_delta > 0.0 && self.theta > 0.0) {
            return Err(Error::arg("sigma_delta and theta must be positive"));
        }
        if !(self.mu_k > 0.0 && self.sigma_k >= 0.0) {
            return Err(Error::arg("need mu_k > 0 and sigma_k >= 0"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn one_d(name: &str, kappa_sampling: KappaSampling) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        problem: Problem::OneD,
        extents: vec![(0.0, 1.0)],
        counts: vec![257],
        boundary: BoundaryConditions::left_right(0.0, 2.0),
        kernel: CovarianceKernel::squared_exponential(0.05),
        mu_k: 5.0,
        sigma_k: 2.5,
        truncation: Truncation::Modes(25),
        kappa_sampling,
        strategy: Strategy::Variance,
        n_k: 6,
        min_separation: 0.0,
        degree: 3,
        rule: Some(RuleKind::Tensor { points: 4 }),
        sampler: SamplerConfig::default(),
        sigma_delta: DEFAULT_NOISE,
        theta: 1.0,
        noisy: false,
        polish: true,
        pivot_tolerance: DEFAULT_PIVOT_TOLERANCE,
        write_chains: true,
        seed: 7,
    }
}

fn smooth(name: &str, kappa_sampling: KappaSampling) -> ExperimentConfig {
    ExperimentConfig {
        problem: Problem::TwoDSmooth,
        extents: vec![(0.0, 240.0), (0.0, 60.0)],
        counts: vec![80, 20],
        boundary: BoundaryConditions::left_right(50.0, 25.0),
        kernel: CovarianceKernel::separable_exponential(240.0, 100.0),
        n_k: 10,
        ..one_d(name, kappa_sampling)
    }
}

fn rough(name: &str, kappa_sampling: KappaSampling) -> ExperimentConfig {
    ExperimentConfig {
        problem: Problem::TwoDRough,
        extents: vec![(0.0, 2.0), (0.0, 1.0)],
        counts: vec![128, 64],
        boundary: BoundaryConditions::left_right(2.0, 0.0),
        kernel: CovarianceKernel::squared_exponential(0.1),
        truncation: Truncation::Modes(210),
        n_k: 10,
        ..one_d(name, kappa_sampling)
    }
}

/// The full-size experiments plus a small smoke configuration. Every
/// preset uses master seed 7.
pub fn presets() -> Vec<ExperimentConfig> {
    vec![
        one_d("1d-case1", KappaSampling::Random { count: 20 }),
        one_d("1d-case2", KappaSampling::Uniform { count: 20 }),
        one_d(
            "1d-case3",
            KappaSampling::Critical {
                critical: 14,
                inflections: 1,
                random: 5,
            },
        ),
        smooth("2d-smooth-case1", KappaSampling::Random { count: 20 }),
        smooth(
            "2d-smooth-case2",
            KappaSampling::Critical {
                critical: 9,
                inflections: 0,
                random: 11,
            },
        ),
        rough("2d-rough-case1", KappaSampling::Random { count: 205 }),
        rough(
            "2d-rough-case2",
            KappaSampling::Critical {
                critical: 50,
                inflections: 0,
                random: 155,
            },
        ),
        ExperimentConfig {
            counts: vec![65],
            kernel: CovarianceKernel::squared_exponential(0.2),
            truncation: Truncation::Modes(7),
            n_k: 4,
            degree: 2,
            rule: None,
            sampler: SamplerConfig {
                iterations: 2000,
                burn_in: 1000,
                ..SamplerConfig::default()
            },
            ..one_d("1d-smoke", KappaSampling::Uniform { count: 4 })
        },
    ]
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    presets().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameters() {
        let all = presets();
        assert_eq!(all.len(), 8);
        for p in &all {
            p.validate().unwrap();
        }
        let c2 = preset("1d-case2").unwrap();
        assert_eq!(c2.kernel.lengths(), &[0.05]);
        assert_eq!(c2.counts, vec![257]);
        assert_eq!(c2.kappa_sampling, KappaSampling::Uniform { count: 20 });
        assert_eq!(c2.n_k, 6);
        let s1 = preset("2d-smooth-case1").unwrap();
        assert_eq!(s1.extents, vec![(0.0, 240.0), (0.0, 60.0)]);
        assert_eq!(s1.counts, vec![80, 20]);
        assert_eq!(s1.truncation, Truncation::Modes(25));
        assert_eq!(s1.kappa_sampling.count(), 20);
        assert_eq!(s1.n_k, 10);
        let r2 = preset("2d-rough-case2").unwrap();
        assert_eq!(
            r2.kappa_sampling,
            KappaSampling::Critical {
                critical: 50,
                inflections: 0,
                random: 155
            }
        );
        assert_eq!(r2.counts, vec![128, 64]);
        let c3 = preset("1d-case3").unwrap();
        assert_eq!(c3.kappa_sampling.count(), 20);
    }

    #[test]
    fn json_round_trip_and_defaults() {
        for p in presets() {
            let back: ExperimentConfig = serde_json::from_str(&p.to_json()).unwrap();
            assert_eq!(back, p);
        }
        let mut v: serde_json::Value = serde_json::from_str(&presets()[0].to_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        for k in [
            "sampler",
            "sigma_delta",
            "theta",
            "noisy",
            "polish",
            "rule",
            "min_separation",
        ] {
            obj.remove(k);
        }
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.sigma_delta, 1e-3);
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert!(cfg.polish);
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = preset("1d-smoke").unwrap();
        c.n_k = 0;
        assert!(c.validate().is_err());
        let mut c = preset("1d-smoke").unwrap();
        c.counts = vec![1];
        assert!(c.validate().is_err());
    }
}
