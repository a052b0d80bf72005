use serde::Serialize;

use super::{Environment, SeparableValue, TypeDistribution};
use crate::quadrature::{integrate_paths, AdaptiveRule};

pub const DEFAULT_GRID_POINTS: usize = 64;

const SHAPE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    /// Private kernel independent of the type, value separable.
    Separable,
    /// Concave (additive) or log-concave (multiplicative) values, with the
    /// sign and monotonicity conditions that go with them.
    ConcaveValues,
    /// Inverse hazard rate decreasing in the type.
    MonotoneHazard,
    /// Density integrates to one.
    Density,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub agent: usize,
    pub assumption: Assumption,
    pub passed: bool,
    /// Offending type on failure.
    pub theta: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidityReport {
    pub grid_points: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn holds(&self, assumption: Assumption) -> bool {
        self.checks
            .iter()
            .filter(|c| c.assumption == assumption)
            .all(|c| c.passed)
    }
}

fn grid(upper: f64, points: usize) -> Vec<f64> {
    let points = points.max(3);
    (0..points)
        .map(|k| upper * k as f64 / (points - 1) as f64)
        .collect()
}

fn outcome(
    agent: usize,
    assumption: Assumption,
    failure: Option<(f64, String)>,
    ok: &str,
) -> AssumptionCheck {
    match failure {
        None => AssumptionCheck {
            agent,
            assumption,
            passed: true,
            theta: None,
            detail: ok.to_string(),
        },
        Some((theta, detail)) => AssumptionCheck {
            agent,
            assumption,
            passed: false,
            theta: Some(theta),
            detail,
        },
    }
}

fn check_hazard(dist: &TypeDistribution, points: usize) -> Option<(f64, String)> {
    let mut prev: Option<(f64, f64)> = None;
    for theta in grid(dist.upper(), points) {
        if dist.density(theta) <= 0.0 && (theta == 0.0 || theta == dist.upper()) {
            continue;
        }
        let h = match dist.inverse_hazard(theta) {
            Ok(h) => h,
            Err(e) => return Some((theta, e.to_string())),
        };
        if let Some((t0, h0)) = prev {
            if h >= h0 - 1e-12 * h0.abs().max(1.0) {
                return Some((
                    theta,
                    format!("inverse hazard does not decrease: {h0} at {t0}, {h} at {theta}"),
                ));
            }
        }
        prev = Some((theta, h));
    }
    None
}

fn check_density(dist: &TypeDistribution) -> Option<(f64, String)> {
    let bp = dist.breakpoints();
    let rule = AdaptiveRule {
        tolerance: 1e-10,
        ..AdaptiveRule::default()
    };
    let total: f64 = bp
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            // panels stay strictly inside a smooth piece
            integrate_paths(a, b, 1, rule, |z| vec![dist.density(z.clamp(a, b))]).mean
        })
        .sum();
    if (total - 1.0).abs() > 1e-6 {
        Some((dist.upper(), format!("density integrates to {total}")))
    } else {
        None
    }
}

fn check_values(
    value: &SeparableValue,
    public_states: usize,
    upper: f64,
    points: usize,
) -> Option<(f64, String)> {
    let g = grid(upper, points);
    let step = g[1] - g[0];
    match value {
        SeparableValue::Additive { a, scale, b } => {
            if let Some(x) = b.iter().flatten().find(|x| **x < 0.0) {
                return Some((0.0, format!("additive experience term {x} is negative")));
            }
            for rho in 0..public_states {
                let f = |t: f64| scale[rho] * a.eval(t);
                for w in g.windows(3) {
                    let (x0, x1, x2) = (f(w[0]), f(w[1]), f(w[2]));
                    if x1 < x0 - SHAPE_TOL || x2 < x1 - SHAPE_TOL {
                        return Some((w[1], format!("type term decreases at public state {rho}")));
                    }
                    if (x2 - 2.0 * x1 + x0) / (step * step)
                        > SHAPE_TOL * x1.abs().max(1.0) / (step * step)
                    {
                        return Some((
                            w[1],
                            format!("type term is not concave at public state {rho}"),
                        ));
                    }
                }
            }
            None
        }
        SeparableValue::Multiplicative { a, b, c } => {
            if let Some(x) = b.iter().flatten().chain(c.iter()).find(|x| **x < 0.0) {
                return Some((0.0, format!("experience term {x} is negative")));
            }
            let positive: Vec<f64> = g.iter().copied().filter(|t| *t > 0.0).collect();
            for &t in &positive {
                if !(a.eval(t) > 0.0) {
                    return Some((t, format!("type term {} is not positive", a.eval(t))));
                }
            }
            for w in g.windows(2) {
                if a.eval(w[1]) < a.eval(w[0]) - SHAPE_TOL {
                    return Some((w[1], "type term decreases".to_string()));
                }
            }
            for w in positive.windows(3) {
                let (l0, l1, l2) = (a.eval(w[0]).ln(), a.eval(w[1]).ln(), a.eval(w[2]).ln());
                if l2 - 2.0 * l1 + l0 > SHAPE_TOL * l1.abs().max(1.0) {
                    return Some((w[1], "type term is not log-concave".to_string()));
                }
            }
            None
        }
    }
}

/// Grid checks of the separability, concavity and hazard-rate assumptions.
/// Failures are report entries carrying the offending type.
pub fn validate_assumptions(env: &Environment, grid_points: usize) -> ValidityReport {
    let mut checks = Vec::new();
    for (i, agent) in env.agents().iter().enumerate() {
        checks.push(outcome(
            i,
            Assumption::Separable,
            None,
            "private kernel is tabulated without the type; value is separable",
        ));
        checks.push(outcome(
            i,
            Assumption::ConcaveValues,
            check_values(
                agent.value(),
                agent.public().len(),
                agent.theta_max(),
                grid_points,
            ),
            "value shape conditions hold on the grid",
        ));
        checks.push(outcome(
            i,
            Assumption::MonotoneHazard,
            check_hazard(agent.types(), grid_points),
            "inverse hazard strictly decreases on the grid",
        ));
        checks.push(outcome(
            i,
            Assumption::Density,
            check_density(agent.types()),
            "density integrates to one",
        ));
    }
    ValidityReport {
        grid_points,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{Agent, PrivateKernel, PublicKernel, ThetaFn};

    fn env_with(types: TypeDistribution, value: SeparableValue) -> Environment {
        let agent = Agent::new(
            types,
            PublicKernel::identity("none"),
            PrivateKernel::identity("empty", 1),
            value,
            0,
            0,
        )
        .unwrap();
        Environment::new(vec![agent], 0.5).unwrap()
    }

    fn mult(a: ThetaFn) -> SeparableValue {
        SeparableValue::Multiplicative {
            a,
            b: vec![vec![1.0]],
            c: vec![0.0],
        }
    }

    #[test]
    fn uniform_passes_everything() {
        let r = validate_assumptions(
            &env_with(TypeDistribution::uniform(1.0), mult(ThetaFn::identity())),
            64,
        );
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.grid_points, 64);
    }

    #[test]
    fn exponential_fails_hazard() {
        let env = env_with(
            TypeDistribution::Exponential {
                rate: 2.0,
                upper: 1.0,
            },
            mult(ThetaFn::identity()),
        );
        let r = validate_assumptions(&env, DEFAULT_GRID_POINTS);
        assert!(!r.holds(Assumption::MonotoneHazard));
        let fail = r
            .failures()
            .find(|c| c.assumption == Assumption::MonotoneHazard)
            .unwrap();
        assert!(fail.theta.is_some());
    }

    #[test]
    fn square_is_log_concave() {
        let env = env_with(
            TypeDistribution::uniform(1.0),
            mult(ThetaFn::Power {
                coef: 1.0,
                exponent: 2.0,
            }),
        );
        assert!(validate_assumptions(&env, 64).holds(Assumption::ConcaveValues));
    }

    #[test]
    fn log_convex_and_decreasing_terms_fail() {
        let env = env_with(
            TypeDistribution::uniform(1.0),
            mult(ThetaFn::ExpSquare {
                coef: 1.0,
                rate: 1.0,
            }),
        );
        assert!(!validate_assumptions(&env, 64).holds(Assumption::ConcaveValues));

        let dec = SeparableValue::Additive {
            a: ThetaFn::Affine {
                slope: -1.0,
                intercept: 1.0,
            },
            scale: vec![1.0],
            b: vec![vec![0.0]],
        };
        let env = env_with(TypeDistribution::uniform(1.0), dec);
        assert!(!validate_assumptions(&env, 64).holds(Assumption::ConcaveValues));
    }

    #[test]
    fn convex_additive_term_fails() {
        let v = SeparableValue::Additive {
            a: ThetaFn::Power {
                coef: 1.0,
                exponent: 2.0,
            },
            scale: vec![1.0],
            b: vec![vec![0.0]],
        };
        let env = env_with(TypeDistribution::uniform(1.0), v);
        assert!(!validate_assumptions(&env, 64).holds(Assumption::ConcaveValues));
    }

    #[test]
    fn triangular_and_piecewise_hazards() {
        let env = env_with(
            TypeDistribution::Triangular { upper: 1.0 },
            mult(ThetaFn::identity()),
        );
        assert!(validate_assumptions(&env, 64).passed());
        let rising = TypeDistribution::PiecewiseUniform {
            upper: 1.0,
            weights: vec![0.9, 0.1],
        };
        let env = env_with(rising, mult(ThetaFn::identity()));
        let r = validate_assumptions(&env, 64);
        assert!(!r.holds(Assumption::MonotoneHazard));
        assert!(r.holds(Assumption::Density));
    }
}
