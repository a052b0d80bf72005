//! Myerson virtual values and their affine form in the value, pegged to a
//! period-0 report.

use serde::Serialize;

use crate::environments::{ArmState, Environment, SeparableValue, TypeDistribution};
use crate::error::{Error, Result};

/// `(1 - F(θ)) / f(θ)`; zero at the top of the support.
pub fn inverse_hazard(dist: &TypeDistribution, theta: f64) -> Result<f64> {
    dist.inverse_hazard(theta)
}

/// `ψ = v - (1 - F)/f · ∂v/∂θ` at the state's own type.
pub fn virtual_value(env: &Environment, agent: usize, state: &ArmState) -> Result<f64> {
    let a = env.agent(agent)?;
    let v = env.value(agent, state)?;
    let dv = env.value_theta_derivative(agent, state)?;
    let h = inverse_hazard(a.types(), state.theta)?;
    Ok(v - h * dv)
}

/// `ξ = alpha · v + beta[ρ]`, with coefficients evaluated at `report`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VirtualTransform {
    pub report: f64,
    pub alpha: f64,
    /// Indexed by public state number.
    pub beta: Vec<f64>,
}

impl VirtualTransform {
    /// `alpha = 1`, `beta = 0`: plain values.
    pub fn identity(public_states: usize) -> Self {
        Self {
            report: f64::NAN,
            alpha: 1.0,
            beta: vec![0.0; public_states],
        }
    }

    pub fn apply(&self, value: f64, rho: usize) -> f64 {
        self.alpha * value + self.beta[rho]
    }
}

/// Affine coefficients of the virtual value at `report`.
///
/// Additive values give `alpha = 1`, `beta = -h · ∂A/∂θ`; multiplicative
/// values give `alpha = 1 - h · A'/A`, `beta = (alpha - 1) · C`.
pub fn affine_coefficients(
    env: &Environment,
    agent: usize,
    report: f64,
) -> Result<VirtualTransform> {
    let a = env.agent(agent)?;
    let upper = a.theta_max();
    if !(0.0..=upper).contains(&report) {
        return Err(Error::domain(format!(
            "report {report} outside [0, {upper}]"
        )));
    }
    let np = a.public().len();
    match a.value() {
        SeparableValue::Additive { a: f, scale, .. } => {
            let h = inverse_hazard(a.types(), report)?;
            let slope = f.derivative(report);
            Ok(VirtualTransform {
                report,
                alpha: 1.0,
                beta: (0..np).map(|rho| -h * scale[rho] * slope).collect(),
            })
        }
        SeparableValue::Multiplicative { a: f, c, .. } => {
            let level = f.eval(report);
            if !(level > 0.0) {
                return Err(Error::domain(format!(
                    "type term vanishes at report {report}"
                )));
            }
            let h = inverse_hazard(a.types(), report)?;
            let alpha = 1.0 - h * f.derivative(report) / level;
            Ok(VirtualTransform {
                report,
                alpha,
                beta: c.iter().map(|c| (alpha - 1.0) * c).collect(),
            })
        }
    }
}

/// Coefficients for an agent that may be allocated, or `None` for a dormant
/// agent: `alpha <= 0`, or a multiplicative type term that vanishes at the
/// report. Dormant agents never win and never pay per round.
pub fn pegged_transform(
    env: &Environment,
    agent: usize,
    report: f64,
) -> Result<Option<VirtualTransform>> {
    let a = env.agent(agent)?;
    if let SeparableValue::Multiplicative { a: f, .. } = a.value() {
        if (0.0..=a.theta_max()).contains(&report) && !(f.eval(report) > 0.0) {
            return Ok(None);
        }
    }
    let t = affine_coefficients(env, agent, report)?;
    Ok((t.alpha > 0.0).then_some(t))
}

/// Report in `(0, upper)` at which the agent stops being dormant, if any.
/// Bisection assumes dormancy is monotone in the report, which a decreasing
/// inverse hazard guarantees.
pub fn activation_report(env: &Environment, agent: usize, upper: f64) -> Result<Option<f64>> {
    let live = |z: f64| pegged_transform(env, agent, z).map(|t| t.is_some());
    if live(0.0)? || !live(upper)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if live(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

pub fn xi(
    transform: &VirtualTransform,
    env: &Environment,
    agent: usize,
    state: &ArmState,
) -> Result<f64> {
    let v = env.value(agent, state)?;
    transform
        .beta
        .get(state.rho)
        .map(|b| transform.alpha * v + b)
        .ok_or_else(|| Error::domain("public state outside the transform"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{Agent, PrivateKernel, PublicKernel, ThetaFn};

    fn env(types: TypeDistribution, value: SeparableValue) -> Environment {
        let np = match &value {
            SeparableValue::Additive { scale, .. } => scale.len(),
            SeparableValue::Multiplicative { c, .. } => c.len(),
        };
        let labels: Vec<String> = (0..np).map(|k| format!("r{k}")).collect();
        let table: Vec<Vec<f64>> = (0..np)
            .map(|k| (0..np).map(|j| (j == k) as u8 as f64).collect())
            .collect();
        let agent = Agent::new(
            types,
            PublicKernel::new(labels, &table).unwrap(),
            PrivateKernel::identity("empty", np),
            value,
            0,
            0,
        )
        .unwrap();
        Environment::new(vec![agent], 0.5).unwrap()
    }

    fn at(theta: f64) -> ArmState {
        ArmState {
            theta,
            e: 0,
            rho: 0,
        }
    }

    #[test]
    fn inverse_hazard_examples() {
        let u = TypeDistribution::uniform(1.0);
        assert_eq!(inverse_hazard(&u, 0.25).unwrap(), 0.75);
        assert_eq!(inverse_hazard(&u, 1.0).unwrap(), 0.0);
        let t = TypeDistribution::Triangular { upper: 1.0 };
        assert!((inverse_hazard(&t, 0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!(inverse_hazard(&t, 0.0).is_err());
    }

    #[test]
    fn virtual_value_examples() {
        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        };
        let e = env(TypeDistribution::uniform(1.0), m.clone());
        assert!((virtual_value(&e, 0, &at(0.75)).unwrap() - 0.5).abs() < 1e-15);

        let b = 0.35;
        let add = SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0],
            b: vec![vec![b]],
        };
        let e = env(TypeDistribution::uniform(1.0), add);
        assert!((virtual_value(&e, 0, &at(0.6)).unwrap() - (0.2 + b)).abs() < 1e-15);

        let e = env(TypeDistribution::Triangular { upper: 1.0 }, m);
        assert!((virtual_value(&e, 0, &at(0.5)).unwrap() + 0.25).abs() < 1e-15);
    }

    #[test]
    fn coefficient_examples() {
        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        };
        let e = env(TypeDistribution::uniform(1.0), m);
        let t = affine_coefficients(&e, 0, 0.75).unwrap();
        // 1 - 0.25 / 0.75; ξ at θ = r must reproduce ψ = 2 · 0.75 - 1
        assert!((t.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.beta, vec![0.0]);
        assert!((xi(&t, &e, 0, &at(0.75)).unwrap() - 0.5).abs() < 1e-15);

        let add = SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0, 1.0],
            b: vec![vec![0.0, 0.0]],
        };
        let t = affine_coefficients(&env(TypeDistribution::uniform(1.0), add), 0, 0.4).unwrap();
        assert_eq!(t.alpha, 1.0);
        for b in &t.beta {
            assert!((b + 0.6).abs() < 1e-15);
        }

        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.3],
        };
        let t = affine_coefficients(&env(TypeDistribution::uniform(1.0), m), 0, 0.5).unwrap();
        assert_eq!(t.alpha, 0.0);
        assert!((t.beta[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn vanishing_type_term_is_an_error() {
        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        };
        let e = env(TypeDistribution::uniform(1.0), m);
        assert!(matches!(
            affine_coefficients(&e, 0, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(affine_coefficients(&e, 0, 1.5).is_err());
    }

    #[test]
    fn dormant_reports() {
        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        };
        let e = env(TypeDistribution::uniform(1.0), m);
        assert!(pegged_transform(&e, 0, 0.0).unwrap().is_none());
        assert!(pegged_transform(&e, 0, 0.5).unwrap().is_none());
        assert!(pegged_transform(&e, 0, 0.4).unwrap().is_none());
        assert!(pegged_transform(&e, 0, 0.6).unwrap().is_some());
        assert!(pegged_transform(&e, 0, 2.0).is_err());
    }

    #[test]
    fn xi_examples() {
        let m = SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        };
        let e = env(TypeDistribution::uniform(1.0), m);
        let id = VirtualTransform::identity(1);
        assert_eq!(xi(&id, &e, 0, &at(0.75)).unwrap(), 0.75);
        let third = VirtualTransform {
            report: 0.75,
            alpha: 1.0 / 3.0,
            beta: vec![0.0],
        };
        assert!((xi(&third, &e, 0, &at(0.75)).unwrap() - 0.25).abs() < 1e-15);
        let flat = VirtualTransform {
            report: 0.5,
            alpha: 0.0,
            beta: vec![-0.3],
        };
        assert_eq!(xi(&flat, &e, 0, &at(0.9)).unwrap(), -0.3);
    }
}
