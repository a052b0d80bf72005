use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar function of the type, with its analytic derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaFn {
    /// `slope · θ`
    Linear { slope: f64 },
    /// `slope · θ + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `coef · θ^exponent`
    Power { coef: f64, exponent: f64 },
    /// `coef · ln(1 + θ)`
    Log1p { coef: f64 },
    /// `coef · exp(rate · θ²)`; log-convex for positive rate.
    ExpSquare { coef: f64, rate: f64 },
}

impl ThetaFn {
    pub fn identity() -> Self {
        ThetaFn::Linear { slope: 1.0 }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            ThetaFn::Linear { slope } => slope * theta,
            ThetaFn::Affine { slope, intercept } => slope * theta + intercept,
            ThetaFn::Power { coef, exponent } => coef * theta.powf(exponent),
            ThetaFn::Log1p { coef } => coef * theta.ln_1p(),
            ThetaFn::ExpSquare { coef, rate } => coef * (rate * theta * theta).exp(),
        }
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        match *self {
            ThetaFn::Linear { slope } => slope,
            ThetaFn::Affine { slope, .. } => slope,
            ThetaFn::Power { coef, exponent } => {
                if exponent == 0.0 {
                    0.0
                } else {
                    coef * exponent * theta.powf(exponent - 1.0)
                }
            }
            ThetaFn::Log1p { coef } => coef / (1.0 + theta),
            ThetaFn::ExpSquare { coef, rate } => {
                2.0 * rate * theta * coef * (rate * theta * theta).exp()
            }
        }
    }
}

/// Separable value function of one agent.
///
/// Tables are indexed by state number: `b[e][rho]`, `c[rho]`, `scale[rho]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeparableValue {
    /// `v = scale[ρ] · a(θ) + b[e][ρ]`
    Additive {
        a: ThetaFn,
        scale: Vec<f64>,
        b: Vec<Vec<f64>>,
    },
    /// `v = a(θ) · b[e][ρ] - c[ρ]`
    Multiplicative {
        a: ThetaFn,
        b: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
}

impl SeparableValue {
    pub(crate) fn check_shape(&self, private_states: usize, public_states: usize) -> Result<()> {
        let (b, per_rho) = match self {
            SeparableValue::Additive { scale, b, .. } => (b, scale),
            SeparableValue::Multiplicative { b, c, .. } => (b, c),
        };
        if b.len() != private_states || b.iter().any(|row| row.len() != public_states) {
            return Err(Error::invalid(
                "value.b",
                format!("expected a {private_states} x {public_states} table"),
            ));
        }
        if per_rho.len() != public_states {
            return Err(Error::invalid(
                "value",
                format!(
                    "per-public-state table needs {public_states} entries, got {}",
                    per_rho.len()
                ),
            ));
        }
        let finite = b
            .iter()
            .flatten()
            .chain(per_rho.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("value", "tables must be finite"));
        }
        Ok(())
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(self, SeparableValue::Multiplicative { .. })
    }

    pub fn theta_fn(&self) -> &ThetaFn {
        match self {
            SeparableValue::Additive { a, .. } | SeparableValue::Multiplicative { a, .. } => a,
        }
    }

    pub fn eval(&self, theta: f64, e: usize, rho: usize) -> f64 {
        match self {
            SeparableValue::Additive { a, scale, b } => scale[rho] * a.eval(theta) + b[e][rho],
            SeparableValue::Multiplicative { a, b, c } => a.eval(theta) * b[e][rho] - c[rho],
        }
    }

    pub fn theta_derivative(&self, theta: f64, e: usize, rho: usize) -> f64 {
        match self {
            SeparableValue::Additive { a, scale, .. } => scale[rho] * a.derivative(theta),
            SeparableValue::Multiplicative { a, b, .. } => a.derivative(theta) * b[e][rho],
        }
    }

    /// Largest `|v|` over the type grid and every state.
    pub(crate) fn abs_bound(&self, upper: f64) -> f64 {
        let (b, per_rho) = match self {
            SeparableValue::Additive { scale, b, .. } => (b, scale),
            SeparableValue::Multiplicative { b, c, .. } => (b, c),
        };
        let mut best: f64 = 0.0;
        for k in 0..=256 {
            let theta = upper * k as f64 / 256.0;
            for e in 0..b.len() {
                for rho in 0..per_rho.len() {
                    best = best.max(self.eval(theta, e, rho).abs());
                }
            }
        }
        best
    }
}
