use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of an agent's initial type on `[0, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TypeDistribution {
    /// Uniform on `[0, upper]`.
    Uniform { upper: f64 },
    /// Rising triangular density `2θ / upper²`.
    Triangular { upper: f64 },
    /// Exponential with the mass beyond `upper` placed on `upper` itself.
    /// Its inverse hazard is the constant `1 / rate` below the cap.
    Exponential { rate: f64, upper: f64 },
    /// Histogram density: equal-width bins on `[0, upper]` with the given
    /// (unnormalised, positive) weights.
    PiecewiseUniform { upper: f64, weights: Vec<f64> },
}

impl TypeDistribution {
    pub fn uniform(upper: f64) -> Self {
        TypeDistribution::Uniform { upper }
    }

    pub fn check(&self) -> Result<()> {
        let upper = self.upper();
        if !(upper.is_finite() && upper > 0.0) {
            return Err(Error::invalid(
                "upper",
                format!("support bound must be positive, got {upper}"),
            ));
        }
        match self {
            TypeDistribution::Exponential { rate, .. } if !(rate.is_finite() && *rate > 0.0) => {
                Err(Error::invalid(
                    "rate",
                    format!("must be positive, got {rate}"),
                ))
            }
            TypeDistribution::PiecewiseUniform { weights, .. } => {
                if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    Err(Error::invalid(
                        "weights",
                        "need at least one positive finite weight",
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Upper end of the support.
    pub fn upper(&self) -> f64 {
        match self {
            TypeDistribution::Uniform { upper }
            | TypeDistribution::Triangular { upper }
            | TypeDistribution::Exponential { upper, .. }
            | TypeDistribution::PiecewiseUniform { upper, .. } => *upper,
        }
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        let upper = self.upper();
        if theta <= 0.0 {
            return 0.0;
        }
        if theta >= upper {
            return 1.0;
        }
        match self {
            TypeDistribution::Uniform { .. } => theta / upper,
            TypeDistribution::Triangular { .. } => (theta / upper).powi(2),
            TypeDistribution::Exponential { rate, .. } => -(-rate * theta).exp_m1(),
            TypeDistribution::PiecewiseUniform { weights, .. } => {
                let total: f64 = weights.iter().sum();
                let width = upper / weights.len() as f64;
                let bin = ((theta / width) as usize).min(weights.len() - 1);
                let below: f64 = weights[..bin].iter().sum();
                (below + weights[bin] * (theta - bin as f64 * width) / width) / total
            }
        }
    }

    pub fn density(&self, theta: f64) -> f64 {
        let upper = self.upper();
        if !(0.0..=upper).contains(&theta) {
            return 0.0;
        }
        match self {
            TypeDistribution::Uniform { .. } => 1.0 / upper,
            TypeDistribution::Triangular { .. } => 2.0 * theta / (upper * upper),
            TypeDistribution::Exponential { rate, .. } => rate * (-rate * theta).exp(),
            TypeDistribution::PiecewiseUniform { weights, .. } => {
                let total: f64 = weights.iter().sum();
                let width = upper / weights.len() as f64;
                let bin = ((theta / width) as usize).min(weights.len() - 1);
                weights[bin] / (total * width)
            }
        }
    }

    /// `(1 - F(θ)) / f(θ)`. Zero once `F(θ) = 1`; a vanishing density
    /// below the top of the support is a domain error.
    pub fn inverse_hazard(&self, theta: f64) -> Result<f64> {
        let upper = self.upper();
        if !(0.0..=upper).contains(&theta) || theta.is_nan() {
            return Err(Error::domain(format!("type {theta} outside [0, {upper}]")));
        }
        let survival = 1.0 - self.cdf(theta);
        if survival <= 0.0 {
            return Ok(0.0);
        }
        if let TypeDistribution::Exponential { rate, .. } = self {
            // memoryless: avoid the rounding of survival / density
            return Ok(1.0 / rate);
        }
        let f = self.density(theta);
        if f <= 0.0 {
            return Err(Error::domain(format!(
                "density vanishes at interior type {theta}"
            )));
        }
        Ok(survival / f)
    }

    /// Inverse-CDF sample from a uniform draw `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let upper = self.upper();
        let u = u.clamp(0.0, 1.0);
        match self {
            TypeDistribution::Uniform { .. } => u * upper,
            TypeDistribution::Triangular { .. } => upper * u.sqrt(),
            TypeDistribution::Exponential { rate, .. } => (-(-u).ln_1p() / rate).min(upper),
            TypeDistribution::PiecewiseUniform { weights, .. } => {
                let total: f64 = weights.iter().sum();
                let width = upper / weights.len() as f64;
                let target = u * total;
                let mut acc = 0.0;
                for (k, &w) in weights.iter().enumerate() {
                    if target <= acc + w || k + 1 == weights.len() {
                        return (k as f64 * width + width * (target - acc) / w).min(upper);
                    }
                    acc += w;
                }
                upper
            }
        }
    }

    /// Points where the density may jump; quadrature panels split there.
    pub fn breakpoints(&self) -> Vec<f64> {
        let upper = self.upper();
        match self {
            TypeDistribution::PiecewiseUniform { weights, .. } => {
                let width = upper / weights.len() as f64;
                (0..=weights.len()).map(|k| k as f64 * width).collect()
            }
            _ => vec![0.0, upper],
        }
    }
}
