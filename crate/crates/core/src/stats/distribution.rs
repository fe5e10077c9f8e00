//! Observation distributions: finite categorical and truncated normal.

use rand::Rng;

use super::StatsError;
use crate::scalar::Real;

/// Standard normal CDF.
fn std_normal_cdf<T: Real>(z: T) -> T {
    T::lit(0.5) * (-z / T::SQRT_2()).erfc()
}

/// Standard normal quantile.
fn std_normal_quantile<T: Real>(p: T) -> T {
    -T::SQRT_2() * (T::lit(2.0) * p).erfc_inv()
}

fn std_normal_log_pdf<T: Real>(z: T) -> T {
    T::lit(-0.5) * z * z - T::lit(0.5) * (T::lit(2.0) * T::PI()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical<T> {
    support: Vec<T>,
    probs: Vec<T>,
}

impl<T: Real> Categorical<T> {
    pub fn new(support: Vec<T>, probs: Vec<T>) -> Result<Self, StatsError> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(StatsError::InvalidDistribution(
                "categorical support and probabilities must be nonempty and of equal length".into(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(StatsError::InvalidDistribution(
                "categorical probabilities must be finite and nonnegative".into(),
            ));
        }
        let total = probs.iter().fold(T::zero(), |a, &p| a + p);
        let tol = if T::epsilon() < T::lit(1e-10) {
            T::lit(1e-12)
        } else {
            T::lit(1e-5)
        };
        if (total - T::one()).abs() > tol {
            return Err(StatsError::InvalidDistribution(format!(
                "categorical probabilities sum to {total}, not 1"
            )));
        }
        for (i, a) in support.iter().enumerate() {
            if support[..i].contains(a) {
                return Err(StatsError::InvalidDistribution(format!(
                    "categorical support value {a} repeated"
                )));
            }
        }
        Ok(Self { support, probs })
    }

    /// Two-point distribution on `{0, 1}` with `P(1) = p`.
    pub fn bernoulli(p: T) -> Result<Self, StatsError> {
        Self::new(vec![T::zero(), T::one()], vec![T::one() - p, p])
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    fn index_of(&self, x: T) -> Option<usize> {
        self.support.iter().position(|&s| s == x)
    }

    pub fn prob(&self, x: T) -> T {
        self.index_of(x).map_or(T::zero(), |i| self.probs[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u = T::lit(rng.gen::<f64>());
        let mut acc = T::zero();
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > T::zero() {
                last_positive = i;
            }
            acc += p;
            if u < acc && p > T::zero() {
                return self.support[i];
            }
        }
        self.support[last_positive]
    }
}

/// Normal distribution conditioned on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedNormal<T> {
    mean: T,
    std_dev: T,
    lower: T,
    upper: T,
    /// log of the probability mass the untruncated normal puts on `[lower, upper]`
    log_mass: T,
}

impl<T: Real> TruncatedNormal<T> {
    pub fn new(mean: T, variance: T, lower: T, upper: T) -> Result<Self, StatsError> {
        if !(variance > T::zero()) || !variance.is_finite() || !mean.is_finite() {
            return Err(StatsError::InvalidDistribution(format!(
                "truncated normal needs finite mean and positive variance, got mean {mean}, variance {variance}"
            )));
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(StatsError::InvalidDistribution(format!(
                "truncated normal needs a finite interval with lower < upper, got [{lower}, {upper}]"
            )));
        }
        let std_dev = variance.sqrt();
        let a = (lower - mean) / std_dev;
        let b = (upper - mean) / std_dev;
        // difference of tails on the side away from the mean keeps precision
        let mass = if a > T::zero() {
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        };
        if !(mass > T::zero()) {
            return Err(StatsError::InvalidDistribution(format!(
                "interval [{lower}, {upper}] carries no mass under N({mean}, {variance})"
            )));
        }
        Ok(Self {
            mean,
            std_dev,
            lower,
            upper,
            log_mass: mass.ln(),
        })
    }

    pub fn location(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.std_dev * self.std_dev
    }

    pub fn interval(&self) -> (T, T) {
        (self.lower, self.upper)
    }

    pub fn log_normalizer(&self) -> T {
        self.log_mass
    }

    pub fn log_density(&self, x: T) -> T {
        if x < self.lower || x > self.upper {
            return T::neg_infinity();
        }
        let z = (x - self.mean) / self.std_dev;
        std_normal_log_pdf(z) - self.std_dev.ln() - self.log_mass
    }

    /// Mean of the truncated law, in closed form.
    pub fn truncated_mean(&self) -> T {
        let a = (self.lower - self.mean) / self.std_dev;
        let b = (self.upper - self.mean) / self.std_dev;
        let pa = (std_normal_log_pdf(a) - self.log_mass).exp();
        let pb = (std_normal_log_pdf(b) - self.log_mass).exp();
        self.mean + self.std_dev * (pa - pb)
    }

    /// Inverse-CDF sampling on the truncated interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u = T::lit(rng.gen::<f64>());
        let a = (self.lower - self.mean) / self.std_dev;
        let b = (self.upper - self.mean) / self.std_dev;
        let z = if a > T::zero() {
            // sample the mirrored interval so CDF values stay away from 1
            let lo = std_normal_cdf(-b);
            let hi = std_normal_cdf(-a);
            -std_normal_quantile(lo + u * (hi - lo))
        } else {
            let lo = std_normal_cdf(a);
            let hi = std_normal_cdf(b);
            std_normal_quantile(lo + u * (hi - lo))
        };
        (self.mean + self.std_dev * z)
            .max(self.lower)
            .min(self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution<T> {
    Categorical(Categorical<T>),
    TruncatedNormal(TruncatedNormal<T>),
}

impl<T: Real> Distribution<T> {
    pub fn categorical(support: Vec<T>, probs: Vec<T>) -> Result<Self, StatsError> {
        Categorical::new(support, probs).map(Self::Categorical)
    }

    pub fn bernoulli(p: T) -> Result<Self, StatsError> {
        Categorical::bernoulli(p).map(Self::Categorical)
    }

    pub fn truncated_normal(mean: T, variance: T, lower: T, upper: T) -> Result<Self, StatsError> {
        TruncatedNormal::new(mean, variance, lower, upper).map(Self::TruncatedNormal)
    }

    /// Natural log of the density (or mass), `-inf` outside the support.
    pub fn log_density(&self, x: T) -> T {
        match self {
            Distribution::Categorical(c) => c.prob(x).ln(),
            Distribution::TruncatedNormal(t) => t.log_density(x),
        }
    }

    pub fn density(&self, x: T) -> T {
        self.log_density(x).exp()
    }

    /// Whether `x` lies in the support.
    pub fn contains(&self, x: T) -> bool {
        match self {
            Distribution::Categorical(c) => c.prob(x) > T::zero(),
            Distribution::TruncatedNormal(t) => x >= t.lower && x <= t.upper,
        }
    }

    /// Whether this distribution's support contains all of `other`'s.
    pub fn covers(&self, other: &Self) -> bool {
        match (self, other) {
            (Distribution::Categorical(a), Distribution::Categorical(b)) => b
                .support
                .iter()
                .zip(&b.probs)
                .filter(|(_, &p)| p > T::zero())
                .all(|(&x, _)| a.prob(x) > T::zero()),
            (Distribution::TruncatedNormal(a), Distribution::TruncatedNormal(b)) => {
                a.lower <= b.lower && a.upper >= b.upper
            }
            _ => false,
        }
    }

    /// Largest value the density attains.
    pub fn max_density(&self) -> T {
        match self {
            Distribution::Categorical(c) => c.probs.iter().copied().fold(T::zero(), T::max),
            Distribution::TruncatedNormal(t) => {
                let mode = t.mean.max(t.lower).min(t.upper);
                t.log_density(mode).exp()
            }
        }
    }

    pub fn mean(&self) -> T {
        match self {
            Distribution::Categorical(c) => c
                .support
                .iter()
                .zip(&c.probs)
                .fold(T::zero(), |acc, (&x, &p)| acc + x * p),
            Distribution::TruncatedNormal(t) => t.truncated_mean(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self {
            Distribution::Categorical(c) => c.sample(rng),
            Distribution::TruncatedNormal(t) => t.sample(rng),
        }
    }
}
