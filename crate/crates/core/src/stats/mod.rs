//! Hypothesis families, KL divergence and the network objective.

mod distribution;
pub mod quadrature;

use rand::Rng;
use thiserror::Error;

pub use distribution::{Categorical, Distribution, TruncatedNormal};

use crate::scalar::Real;

/// Absolute tolerance for continuous KL quadrature.
pub const KL_ABS_TOL: f64 = 1e-8;
/// Default density floor.
pub const DEFAULT_FLOOR: f64 = 1e-8;
/// Default truncation interval for normal families.
pub const DEFAULT_SUPPORT: (f64, f64) = (-10.0, 20.0);
/// Hypotheses within this much of the minimum objective are optimal.
pub const OPTIMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid hypothesis model: {0}")]
    InvalidModel(String),
    #[error("observation {x} for agent {agent} lies outside every hypothesis support")]
    OutOfSupport { agent: usize, x: f64 },
    #[error("distributions have incompatible supports")]
    SupportMismatch,
    #[error("KL quadrature did not reach tolerance (estimated error {abs_error:e})")]
    QuadratureFailure { abs_error: f64 },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

/// `D_KL(p || q)` in nats.
///
/// Categorical pairs must share the same support; the sum is exact.
/// Truncated normals are integrated over the support of `p`.
pub fn kl_divergence<T: Real>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T, StatsError> {
    match (p, q) {
        (Distribution::Categorical(a), Distribution::Categorical(b)) => {
            if a.support() != b.support() {
                return Err(StatsError::SupportMismatch);
            }
            let mut total = T::zero();
            for (&pa, &qb) in a.probs().iter().zip(b.probs()) {
                if pa > T::zero() {
                    if !(qb > T::zero()) {
                        return Err(StatsError::SupportMismatch);
                    }
                    total += pa * (pa.ln() - qb.ln());
                }
            }
            Ok(total.max(T::zero()))
        }
        (Distribution::TruncatedNormal(a), Distribution::TruncatedNormal(b)) => {
            if a == b {
                return Ok(T::zero());
            }
            if !q.covers(p) {
                return Err(StatsError::SupportMismatch);
            }
            let (lo, hi) = a.interval();
            let integrand = |x: T| {
                let lp = a.log_density(x);
                lp.exp() * (lp - b.log_density(x))
            };
            match quadrature::integrate(integrand, lo, hi, T::lit(KL_ABS_TOL)) {
                Ok(r) => Ok(r.value.max(T::zero())),
                Err(r) => Err(StatsError::QuadratureFailure {
                    abs_error: r.abs_error.as_f64(),
                }),
            }
        }
        _ => Err(StatsError::SupportMismatch),
    }
}

/// Objective values over the hypothesis set and the optimal set.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<T> {
    /// `F(theta)` for each hypothesis.
    pub values: Vec<T>,
    /// Per-agent terms `D_KL(P^i || P^i_theta)`, indexed `[agent][theta]`.
    pub local: Vec<Vec<T>>,
    /// Indices attaining the minimum (within [`OPTIMALITY_TOL`]).
    pub optimal: Vec<usize>,
    /// `min_{theta not optimal} F(theta) - min F`, `None` when every hypothesis is optimal.
    pub gap: Option<T>,
}

impl<T: Real> Objective<T> {
    pub fn min_value(&self) -> T {
        self.values[self.optimal[0]]
    }

    pub fn is_optimal(&self, theta: usize) -> bool {
        self.optimal.contains(&theta)
    }
}

/// Per-agent likelihood families and true observation laws.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisModel<T> {
    truths: Vec<Distribution<T>>,
    likelihoods: Vec<Vec<Distribution<T>>>,
    floor: T,
    log_floor: T,
}

impl<T: Real> HypothesisModel<T> {
    /// `likelihoods[i][theta]` is agent `i`'s likelihood under hypothesis `theta`.
    pub fn new(
        truths: Vec<Distribution<T>>,
        likelihoods: Vec<Vec<Distribution<T>>>,
        floor: T,
    ) -> Result<Self, StatsError> {
        if truths.is_empty() || truths.len() != likelihoods.len() {
            return Err(StatsError::InvalidModel(format!(
                "{} true distributions but {} likelihood families",
                truths.len(),
                likelihoods.len()
            )));
        }
        let m = likelihoods[0].len();
        if m == 0 {
            return Err(StatsError::InvalidModel("hypothesis set is empty".into()));
        }
        if let Some(i) = likelihoods.iter().position(|l| l.len() != m) {
            return Err(StatsError::InvalidModel(format!(
                "agent {i} has {} hypotheses, agent 0 has {m}",
                likelihoods[i].len()
            )));
        }
        if !(floor > T::zero()) || !floor.is_finite() {
            return Err(StatsError::InvalidModel(format!(
                "density floor must be positive, got {floor}"
            )));
        }
        for (i, (truth, family)) in truths.iter().zip(&likelihoods).enumerate() {
            if let Some(theta) = family.iter().position(|l| !l.covers(truth)) {
                return Err(StatsError::InvalidModel(format!(
                    "agent {i}: hypothesis {theta} does not cover the support of the true distribution"
                )));
            }
        }
        Ok(Self {
            truths,
            likelihoods,
            floor,
            log_floor: floor.ln(),
        })
    }

    /// Unit-variance normals truncated to a common interval.
    pub fn truncated_normals(
        truth_means: &[T],
        hypothesis_means: &[Vec<T>],
        support: (T, T),
        floor: T,
    ) -> Result<Self, StatsError> {
        let tn = |mu: T| Distribution::truncated_normal(mu, T::one(), support.0, support.1);
        let truths = truth_means
            .iter()
            .map(|&mu| tn(mu))
            .collect::<Result<Vec<_>, _>>()?;
        let likelihoods = hypothesis_means
            .iter()
            .map(|row| row.iter().map(|&mu| tn(mu)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(truths, likelihoods, floor)
    }

    pub fn agent_count(&self) -> usize {
        self.truths.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.likelihoods[0].len()
    }

    pub fn floor(&self) -> T {
        self.floor
    }

    pub fn truth(&self, agent: usize) -> &Distribution<T> {
        &self.truths[agent]
    }

    pub fn likelihood(&self, agent: usize, theta: usize) -> &Distribution<T> {
        &self.likelihoods[agent][theta]
    }

    fn check_agent(&self, agent: usize) -> Result<(), StatsError> {
        if agent >= self.agent_count() {
            return Err(StatsError::IndexOutOfRange(format!(
                "agent {agent} of {}",
                self.agent_count()
            )));
        }
        Ok(())
    }

    /// `log(max(P^i_theta(x), floor))`.
    pub fn log_likelihood(&self, agent: usize, theta: usize, x: T) -> Result<T, StatsError> {
        self.check_agent(agent)?;
        if theta >= self.hypothesis_count() {
            return Err(StatsError::IndexOutOfRange(format!(
                "hypothesis {theta} of {}",
                self.hypothesis_count()
            )));
        }
        let family = &self.likelihoods[agent];
        if !family.iter().any(|d| d.contains(x)) {
            return Err(StatsError::OutOfSupport {
                agent,
                x: x.as_f64(),
            });
        }
        Ok(family[theta].log_density(x).max(self.log_floor))
    }

    /// Floored log-likelihoods of `x` under every hypothesis.
    pub fn log_likelihoods(&self, agent: usize, x: T) -> Result<Vec<T>, StatsError> {
        (0..self.hypothesis_count())
            .map(|theta| self.log_likelihood(agent, theta, x))
            .collect()
    }

    /// Whether the floor would replace the density of `x`.
    pub fn floor_active(&self, agent: usize, theta: usize, x: T) -> bool {
        self.likelihoods[agent][theta].log_density(x) < self.log_floor
    }

    pub fn sample<R: Rng + ?Sized>(&self, agent: usize, rng: &mut R) -> T {
        self.truths[agent].sample(rng)
    }

    pub fn objective(&self) -> Result<Objective<T>, StatsError> {
        let local = self
            .truths
            .iter()
            .zip(&self.likelihoods)
            .map(|(truth, family)| {
                family
                    .iter()
                    .map(|l| kl_divergence(truth, l))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let m = self.hypothesis_count();
        let values: Vec<T> = (0..m)
            .map(|theta| local.iter().fold(T::zero(), |acc, row| acc + row[theta]))
            .collect();
        let min = values.iter().copied().fold(T::infinity(), T::min);
        let tol = T::lit(OPTIMALITY_TOL);
        let optimal: Vec<usize> = (0..m).filter(|&t| values[t] <= min + tol).collect();
        let gap = (0..m)
            .filter(|t| !optimal.contains(t))
            .map(|t| values[t] - min)
            .fold(None, |acc: Option<T>, g| Some(acc.map_or(g, |a| a.min(g))));
        Ok(Objective {
            values,
            local,
            optimal,
            gap,
        })
    }

    /// Reorders hypotheses so that new index `k` is old index `perm[k]`.
    pub fn permute_hypotheses(&self, perm: &[usize]) -> Result<Self, StatsError> {
        if perm.len() != self.hypothesis_count() {
            return Err(StatsError::InvalidModel(
                "permutation length mismatch".into(),
            ));
        }
        let likelihoods = self
            .likelihoods
            .iter()
            .map(|row| perm.iter().map(|&p| row[p].clone()).collect())
            .collect();
        Self::new(self.truths.clone(), likelihoods, self.floor)
    }

    /// Smallest likelihood density over a uniform grid spanning `mean ± sigmas·sd`
    /// of each agent's true law (clipped to its support). Returns `(agent, theta, x, density)`.
    pub fn min_density_near_truth(&self, sigmas: T, points: usize) -> (usize, usize, T, T) {
        let mut worst = (0, 0, T::zero(), T::infinity());
        for (agent, truth) in self.truths.iter().enumerate() {
            let (lo, hi) = match truth {
                Distribution::TruncatedNormal(t) => {
                    let (a, b) = t.interval();
                    let sd = t.variance().sqrt();
                    let c = t.truncated_mean();
                    ((c - sigmas * sd).max(a), (c + sigmas * sd).min(b))
                }
                Distribution::Categorical(c) => {
                    for &x in c.support() {
                        for theta in 0..self.hypothesis_count() {
                            let d = self.likelihoods[agent][theta].density(x);
                            if d < worst.3 {
                                worst = (agent, theta, x, d);
                            }
                        }
                    }
                    continue;
                }
            };
            let steps = points.max(2) - 1;
            for k in 0..=steps {
                let x = lo + (hi - lo) * T::from_count(k) / T::from_count(steps);
                for theta in 0..self.hypothesis_count() {
                    let d = self.likelihoods[agent][theta].density(x);
                    if d < worst.3 {
                        worst = (agent, theta, x, d);
                    }
                }
            }
        }
        worst
    }
}
