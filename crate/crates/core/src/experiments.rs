//! Numerical-stability experiments: the Example 1 likelihood/score sweep, the
//! Example 3 roundoff table, and performance profiles over the δ family.
//!
//! Independent problems run on the rayon pool; results keep input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Method;
use crate::linalg::{condition_number, Vector};
use crate::model::{evaluate, example1_spec, example3_spec, simulate, Trajectory};
use crate::oracle::{error_report, ErrorReport};

pub const TABLE1_DELTAS: [f64; 6] = [1e-2, 1e-4, 1e-6, 1e-8, 1e-9, 1e-10];
pub const PROFILE_DELTAS: [f64; 7] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1SweepConfig {
    pub delta_t: f64,
    pub n_steps: usize,
    pub tau_true: f64,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
}

impl Default for Example1SweepConfig {
    fn default() -> Self {
        Self {
            delta_t: 0.1,
            n_steps: 100,
            tau_true: 5.0,
            seed: 42,
            tau_grid: linear_grid(2.0, 10.0, 20),
        }
    }
}

/// Likelihood and score curves over a τ grid, one entry per method.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub tau: Vec<f64>,
    pub methods: Vec<Method>,
    /// `loglik[a][j]`: method `a` at grid point `j` (NaN on failure).
    pub loglik: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
}

impl SweepCurve {
    /// Grid index of the smallest log-likelihood for method `a`.
    pub fn argmin(&self, a: usize) -> Option<usize> {
        self.loglik[a]
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(j, _)| j)
    }
}

pub fn run_example1_sweep(config: &Example1SweepConfig, methods: &[Method]) -> Result<SweepCurve> {
    if config.n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if let Some(t) = config
        .tau_grid
        .iter()
        .find(|t| !(**t > 0.0 && t.is_finite()))
    {
        return Err(Error::Domain(format!(
            "tau grid value {t} must be positive"
        )));
    }
    let spec = example1_spec(config.delta_t)?;
    let data = simulate(&spec, &[config.tau_true], config.n_steps, config.seed)?;

    let per_point: Vec<Vec<(f64, f64)>> = config
        .tau_grid
        .par_iter()
        .map(|&tau| {
            methods
                .iter()
                .map(|m| match m.score(&spec, &[tau], &data) {
                    Ok(r) => Ok((r.loglik, r.gradient[0])),
                    Err(e) if e.class() == "numerical" => Ok((f64::NAN, f64::NAN)),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let pick = |f: fn(&(f64, f64)) -> f64| -> Vec<Vec<f64>> {
        (0..methods.len())
            .map(|a| per_point.iter().map(|row| f(&row[a])).collect())
            .collect()
    };
    Ok(SweepCurve {
        tau: config.tau_grid.clone(),
        methods: methods.to_vec(),
        loglik: pick(|v| v.0),
        gradient: pick(|v| v.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub deltas: Vec<f64>,
    pub theta: f64,
    /// The single measurement processed.
    pub z1: Vec<f64>,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            deltas: TABLE1_DELTAS.to_vec(),
            theta: 2.0,
            z1: vec![1.0, 1.0],
        }
    }
}

fn failed_report() -> ErrorReport {
    ErrorReport {
        dp1: f64::NAN,
        dp1_prime: f64::NAN,
        dloglf: f64::NAN,
        dloglg: f64::NAN,
        failed: true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub delta: f64,
    /// Singular-value condition number of the first innovation covariance as
    /// formed in binary64; infinite when it is exactly singular.
    pub cond_re1: f64,
    pub conventional: ErrorReport,
    pub square_root: ErrorReport,
    /// Set when the reference itself could not be computed.
    pub oracle_failure: Option<String>,
}

fn example3_problem(
    delta: f64,
    theta: f64,
    z1: &[f64],
) -> Result<(crate::model::Example3, Trajectory)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta {delta} must be positive")));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta {theta} must be positive")));
    }
    if z1.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "z1 must have 2 entries, got {}",
            z1.len()
        )));
    }
    let spec = example3_spec(delta)?;
    let data = Trajectory::new(vec![Vector::from_vec(z1.to_vec())])?;
    Ok((spec, data))
}

/// `cond(H·Π₀·Hᵀ + R)` at the first step, formed in working precision.
pub fn first_innovation_condition(
    spec: &dyn crate::model::ModelSpec,
    theta: &[f64],
) -> Result<f64> {
    let m = evaluate(spec, theta, 1)?;
    Ok(condition_number(
        &(&m.h * &m.pi0 * m.h.transpose() + &m.r_cov),
    ))
}

pub fn run_table1(config: &Table1Config) -> Result<Vec<Table1Row>> {
    let problems = config
        .deltas
        .iter()
        .map(|&d| example3_problem(d, config.theta, &config.z1))
        .collect::<Result<Vec<_>>>()?;
    let theta = [config.theta];
    problems
        .par_iter()
        .zip(config.deltas.par_iter())
        .map(|((spec, data), &delta)| {
            let cond_re1 = first_innovation_condition(spec, &theta)?;
            let (conventional, square_root, oracle_failure) = match error_report(
                spec,
                &theta,
                data,
                &[Method::Conventional, Method::SquareRoot],
            ) {
                Ok(r) => (r[0], r[1], None),
                Err(Error::OracleFailure(msg)) => (failed_report(), failed_report(), Some(msg)),
                Err(e) => return Err(e),
            };
            Ok(Table1Row {
                delta,
                cond_re1,
                conventional,
                square_root,
                oracle_failure,
            })
        })
        .collect()
}

/// Dolan–Moré performance profile over a fixed problem set.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceProfile {
    pub algorithms: Vec<String>,
    pub problems: Vec<String>,
    /// `measures[p][a]`; NaN marks a failure.
    pub measures: Vec<Vec<f64>>,
    /// `ratios[p][a] = t / min_a t ≥ 1`, `+∞` for failures.
    pub ratios: Vec<Vec<f64>>,
    pub mu_max: f64,
}

impl PerformanceProfile {
    pub fn from_measures(
        algorithms: Vec<String>,
        problems: Vec<String>,
        measures: Vec<Vec<f64>>,
        mu_max: f64,
    ) -> Result<Self> {
        if measures.len() != problems.len()
            || measures.iter().any(|row| row.len() != algorithms.len())
        {
            return Err(Error::InvalidArgument(
                "measure table does not match problems × algorithms".into(),
            ));
        }
        if !(mu_max >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mu_max {mu_max} must be at least 1"
            )));
        }
        if measures.iter().flatten().any(|&t| t < 0.0) {
            return Err(Error::InvalidArgument(
                "performance measures must be nonnegative".into(),
            ));
        }
        let ratios = measures
            .iter()
            .map(|row| {
                let best = row
                    .iter()
                    .copied()
                    .filter(|t| t.is_finite())
                    .fold(f64::INFINITY, f64::min);
                row.iter()
                    .map(|&t| {
                        if !t.is_finite() || !best.is_finite() {
                            f64::INFINITY
                        } else if t == best {
                            1.0
                        } else if best == 0.0 {
                            f64::INFINITY
                        } else {
                            (t / best).max(1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            algorithms,
            problems,
            measures,
            ratios,
            mu_max,
        })
    }

    /// Fraction of problems on which algorithm `a` is within `mu` of the best.
    pub fn phi(&self, a: usize, mu: f64) -> f64 {
        if self.ratios.is_empty() {
            return 0.0;
        }
        let hits = self.ratios.iter().filter(|row| row[a] <= mu).count();
        hits as f64 / self.ratios.len() as f64
    }

    /// Smallest μ at which `φ_a(μ) = 1`, if any finite one exists.
    pub fn mu_full(&self, a: usize) -> Option<f64> {
        let worst = self.ratios.iter().map(|row| row[a]).fold(1.0, f64::max);
        worst.is_finite().then_some(worst)
    }

    /// Step-function breakpoints `(μ, φ(μ))` on `[1, mu_max]`.
    pub fn points(&self, a: usize) -> Vec<(f64, f64)> {
        let mut mus: Vec<f64> = self
            .ratios
            .iter()
            .map(|row| row[a])
            .filter(|&r| r <= self.mu_max)
            .chain([1.0, self.mu_max])
            .collect();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        mus.into_iter().map(|mu| (mu, self.phi(a, mu))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub deltas: Vec<f64>,
    pub theta: f64,
    pub z1: Vec<f64>,
    pub mu_max: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            deltas: PROFILE_DELTAS.to_vec(),
            theta: 2.0,
            z1: vec![1.0, 1.0],
            mu_max: 4.0,
        }
    }
}

/// Performance measure: max-absolute error of the score against the
/// reference, per Example 3 problem.
pub fn run_performance_profile(
    config: &ProfileConfig,
    methods: &[Method],
) -> Result<PerformanceProfile> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one method is required".into(),
        ));
    }
    let problems = config
        .deltas
        .iter()
        .map(|&d| example3_problem(d, config.theta, &config.z1))
        .collect::<Result<Vec<_>>>()?;
    let theta = [config.theta];
    let measures = problems
        .par_iter()
        .map(
            |(spec, data)| match error_report(spec, &theta, data, methods) {
                Ok(reports) => Ok(reports
                    .iter()
                    .map(|r| if r.failed { f64::NAN } else { r.dloglg })
                    .collect()),
                Err(Error::OracleFailure(_)) => Ok(vec![f64::NAN; methods.len()]),
                Err(e) => Err(e),
            },
        )
        .collect::<Result<Vec<Vec<f64>>>>()?;
    PerformanceProfile::from_measures(
        methods.iter().map(|m| m.name().to_string()).collect(),
        config
            .deltas
            .iter()
            .map(|d| format!("delta={d:e}"))
            .collect(),
        measures,
        config.mu_max,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(measures: Vec<Vec<f64>>) -> PerformanceProfile {
        let algs = (0..measures[0].len()).map(|a| format!("a{a}")).collect();
        let probs = (0..measures.len()).map(|p| format!("p{p}")).collect();
        PerformanceProfile::from_measures(algs, probs, measures, 4.0).unwrap()
    }

    #[test]
    fn single_algorithm_profile_is_one() {
        let p = profile(vec![vec![3.0], vec![1e-9]]);
        for mu in [1.0, 1.5, 4.0] {
            assert_eq!(p.phi(0, mu), 1.0);
        }
    }

    #[test]
    fn two_algorithm_definition() {
        let p = profile(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        for a in 0..2 {
            assert_eq!(p.phi(a, 1.0), 0.5);
            assert_eq!(p.phi(a, 2.0), 1.0);
        }
    }

    #[test]
    fn failures_never_count() {
        let p = profile(vec![vec![1.0, f64::NAN], vec![2.0, 1.0]]);
        assert_eq!(p.ratios[0][1], f64::INFINITY);
        assert_eq!(p.mu_full(1), None);
        assert_eq!(p.mu_full(0), Some(2.0));
        assert_eq!(p.phi(1, 1e300), 0.5);
        let pts = p.points(1);
        assert!(pts.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn grid_shape() {
        let g = linear_grid(2.0, 10.0, 20);
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (2.0, 10.0));
    }

    #[test]
    fn two_point_sweep() {
        let cfg = Example1SweepConfig {
            tau_grid: vec![3.0, 6.0],
            n_steps: 20,
            ..Default::default()
        };
        let c = run_example1_sweep(&cfg, &Method::ALL).unwrap();
        assert_eq!(c.tau.len(), 2);
        assert_eq!(c.loglik.len(), 2);
        for j in 0..2 {
            assert!((c.loglik[0][j] - c.loglik[1][j]).abs() <= 1e-10 * c.loglik[0][j].abs());
        }
    }
}
