//! Agents, their Markov experience kernels and separable value functions.

mod builtins;
mod distribution;
mod kernel;
mod validate;
mod value;

pub use builtins::{
    ar1, beta_bernoulli, finite_chain, sponsored_search, Ar1Params, BetaBernoulliParams, BetaPrior,
    FiniteChainAgent, SponsoredSearchParams,
};
pub use distribution::TypeDistribution;
pub use kernel::{ArmChain, PrivateKernel, PublicKernel, Row, ROW_TOLERANCE};
pub use validate::{
    validate_assumptions, Assumption, AssumptionCheck, ValidityReport, DEFAULT_GRID_POINTS,
};
pub use value::{SeparableValue, ThetaFn};

use rand::Rng;

use crate::error::{Error, Result};

/// One agent's primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    types: TypeDistribution,
    public: PublicKernel,
    private: PrivateKernel,
    value: SeparableValue,
    initial_e: usize,
    initial_rho: usize,
    chain: ArmChain,
}

impl Agent {
    pub fn new(
        types: TypeDistribution,
        public: PublicKernel,
        private: PrivateKernel,
        value: SeparableValue,
        initial_e: usize,
        initial_rho: usize,
    ) -> Result<Self> {
        types.check()?;
        if private.public_states() != public.len() {
            return Err(Error::invalid(
                "private kernel",
                format!(
                    "conditioned on {} public states, kernel has {}",
                    private.public_states(),
                    public.len()
                ),
            ));
        }
        value.check_shape(private.len(), public.len())?;
        if initial_e >= private.len() || initial_rho >= public.len() {
            return Err(Error::invalid("initial state", "label index out of range"));
        }
        let chain = ArmChain::from_kernels(&public, &private);
        Ok(Self {
            types,
            public,
            private,
            value,
            initial_e,
            initial_rho,
            chain,
        })
    }

    pub fn types(&self) -> &TypeDistribution {
        &self.types
    }

    pub fn public(&self) -> &PublicKernel {
        &self.public
    }

    pub fn private(&self) -> &PrivateKernel {
        &self.private
    }

    pub fn value(&self) -> &SeparableValue {
        &self.value
    }

    /// Flattened `(e, ρ)` chain used by the index and welfare solvers.
    pub fn chain(&self) -> &ArmChain {
        &self.chain
    }

    pub fn theta_max(&self) -> f64 {
        self.types.upper()
    }

    /// State at the first round: the empty experience and the initial public
    /// state, with the given type.
    pub fn initial_state(&self, theta: f64) -> ArmState {
        ArmState {
            theta,
            e: self.initial_e,
            rho: self.initial_rho,
        }
    }

    pub fn e_label(&self, e: usize) -> &str {
        &self.private.labels()[e]
    }

    pub fn rho_label(&self, rho: usize) -> &str {
        &self.public.labels()[rho]
    }

    pub fn e_index(&self, label: &str) -> Result<usize> {
        self.private
            .labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::domain(format!("unknown private state label {label:?}")))
    }

    pub fn rho_index(&self, label: &str) -> Result<usize> {
        self.public
            .labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::domain(format!("unknown public state label {label:?}")))
    }

    /// Flattened arm-state number of `(e, ρ)`.
    pub fn arm_state(&self, e: usize, rho: usize) -> usize {
        self.chain.encode(e, rho)
    }

    fn check_state(&self, state: &ArmState) -> Result<()> {
        if state.e >= self.private.len() || state.rho >= self.public.len() {
            return Err(Error::domain(format!(
                "state ({}, {}) outside the agent's spaces",
                state.e, state.rho
            )));
        }
        if !state.theta.is_finite() {
            return Err(Error::domain("type must be finite"));
        }
        Ok(())
    }
}

/// `(θ, e, ρ)` of one agent; `e` and `ρ` are state numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmState {
    pub theta: f64,
    pub e: usize,
    pub rho: usize,
}

/// A separable environment: agents plus the common discount factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    agents: Vec<Agent>,
    discount: f64,
    value_cap: f64,
}

impl Environment {
    pub fn new(agents: Vec<Agent>, discount: f64) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::invalid("agents", "need at least one agent"));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::invalid(
                "delta",
                format!("discount must lie in (0, 1), got {discount}"),
            ));
        }
        let value_cap = agents
            .iter()
            .map(|a| a.value.abs_bound(a.theta_max()))
            .fold(0.0, f64::max);
        if !value_cap.is_finite() {
            return Err(Error::invalid("value", "value bound is not finite"));
        }
        Ok(Self {
            agents,
            discount,
            value_cap,
        })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> Result<&Agent> {
        self.agents
            .get(id)
            .ok_or_else(|| Error::domain(format!("no agent {id}")))
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Bound on `|v|` over all agents, types and states.
    pub fn value_cap(&self) -> f64 {
        self.value_cap
    }

    /// Smallest horizon `T` with `δ^T · k · V_max / (1 - δ) < eps`.
    pub fn horizon_for(&self, eps: f64) -> usize {
        let mut t = 1usize;
        while self.tail_bound(t) >= eps && t < 100_000 {
            t += 1;
        }
        t
    }

    /// `δ^T · k · V_max / (1 - δ)`.
    pub fn tail_bound(&self, horizon: usize) -> f64 {
        self.discount.powi(horizon as i32) * self.len() as f64 * self.value_cap
            / (1.0 - self.discount)
    }

    pub fn value(&self, agent: usize, state: &ArmState) -> Result<f64> {
        let a = self.agent(agent)?;
        a.check_state(state)?;
        Ok(a.value.eval(state.theta, state.e, state.rho))
    }

    pub fn value_theta_derivative(&self, agent: usize, state: &ArmState) -> Result<f64> {
        let a = self.agent(agent)?;
        a.check_state(state)?;
        Ok(a.value.theta_derivative(state.theta, state.e, state.rho))
    }

    /// Central finite difference of the value in θ, for cross-checking the
    /// analytic derivative.
    pub fn value_theta_difference(&self, agent: usize, state: &ArmState, h: f64) -> Result<f64> {
        let up = ArmState {
            theta: state.theta + h,
            ..*state
        };
        let down = ArmState {
            theta: state.theta - h,
            ..*state
        };
        Ok((self.value(agent, &up)? - self.value(agent, &down)?) / (2.0 * h))
    }

    /// Advance the allocated agent's experience: `ρ' ~ G(·|ρ)` first, then
    /// `e' ~ H(·|e, ρ)` with the pre-transition `ρ`. Exactly two uniforms are
    /// drawn per call so that streams stay aligned across policies.
    pub fn step_experience<R: Rng + ?Sized>(
        &self,
        agent: usize,
        state: &ArmState,
        rng: &mut R,
    ) -> Result<ArmState> {
        let a = self.agent(agent)?;
        a.check_state(state)?;
        let u_public: f64 = rng.random();
        let u_private: f64 = rng.random();
        let rho = a.public.sample(state.rho, u_public);
        let e = a.private.sample(state.e, state.rho, u_private);
        Ok(ArmState {
            theta: state.theta,
            e,
            rho,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn single(value: SeparableValue) -> Environment {
        let agent = Agent::new(
            TypeDistribution::uniform(1.0),
            PublicKernel::identity("none"),
            PrivateKernel::identity("empty", 1),
            value,
            0,
            0,
        )
        .unwrap();
        Environment::new(vec![agent], 0.5).unwrap()
    }

    #[test]
    fn value_examples() {
        let env = single(SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![0.4]],
            c: vec![0.0],
        });
        let s = ArmState {
            theta: 0.5,
            e: 0,
            rho: 0,
        };
        assert!((env.value(0, &s).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(env.value_theta_derivative(0, &s).unwrap(), 0.4);

        let env = single(SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0],
            b: vec![vec![0.0]],
        });
        let s = ArmState {
            theta: 0.3,
            e: 0,
            rho: 0,
        };
        assert_eq!(env.value(0, &s).unwrap(), 0.3);
        assert_eq!(env.value_theta_derivative(0, &s).unwrap(), 1.0);
    }

    #[test]
    fn sqrt_derivative_agrees_with_difference() {
        let env = single(SeparableValue::Multiplicative {
            a: ThetaFn::Power {
                coef: 1.0,
                exponent: 0.5,
            },
            b: vec![vec![1.0]],
            c: vec![0.0],
        });
        let s = ArmState {
            theta: 0.25,
            e: 0,
            rho: 0,
        };
        let analytic = env.value_theta_derivative(0, &s).unwrap();
        let fd = env.value_theta_difference(0, &s, 1e-6).unwrap();
        assert!((analytic - 1.0).abs() < 1e-12);
        assert!((fd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unknown_state_is_domain_error() {
        let env = single(SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0],
            b: vec![vec![0.0]],
        });
        let bad = ArmState {
            theta: 0.3,
            e: 3,
            rho: 0,
        };
        assert!(matches!(env.value(0, &bad), Err(Error::Domain(_))));
        assert!(env.agent(0).unwrap().e_index("nope").is_err());
        assert!(env
            .value(
                5,
                &ArmState {
                    theta: 0.3,
                    e: 0,
                    rho: 0
                }
            )
            .is_err());
    }

    #[test]
    fn identity_kernels_keep_state() {
        let env = single(SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0],
            b: vec![vec![0.0]],
        });
        let mut rng = stream(1, Purpose::Experience, &[0]);
        let s = ArmState {
            theta: 0.7,
            e: 0,
            rho: 0,
        };
        for _ in 0..10 {
            assert_eq!(env.step_experience(0, &s, &mut rng).unwrap(), s);
        }
    }

    #[test]
    fn deterministic_kernels_reach_unique_successor() {
        let g = PublicKernel::new(
            vec!["a".into(), "b".into()],
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let h = PrivateKernel::new(
            vec!["x".into(), "y".into()],
            2,
            &[
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
        )
        .unwrap();
        let value = SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![1.0, 1.0],
            b: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let agent = Agent::new(TypeDistribution::uniform(1.0), g, h, value, 0, 0).unwrap();
        let env = Environment::new(vec![agent], 0.9).unwrap();
        let mut rng = stream(2, Purpose::Experience, &[0]);
        let s = ArmState {
            theta: 0.4,
            e: 0,
            rho: 0,
        };
        let next = env.step_experience(0, &s, &mut rng).unwrap();
        // public moves a -> b; private uses the pre-transition ρ = a: x -> y
        assert_eq!(
            next,
            ArmState {
                theta: 0.4,
                e: 1,
                rho: 1
            }
        );
    }

    #[test]
    fn discount_must_be_inside_unit_interval() {
        let agent = Agent::new(
            TypeDistribution::uniform(1.0),
            PublicKernel::identity("none"),
            PrivateKernel::identity("empty", 1),
            SeparableValue::Additive {
                a: ThetaFn::identity(),
                scale: vec![1.0],
                b: vec![vec![0.0]],
            },
            0,
            0,
        )
        .unwrap();
        for bad in [0.0, 1.0, 1.2, -0.3] {
            let err = Environment::new(vec![agent.clone()], bad).unwrap_err();
            assert!(matches!(err, Error::Invalid { ref field, .. } if field == "delta"));
        }
    }

    #[test]
    fn horizon_meets_tail_target() {
        let env = single(SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        });
        let t = env.horizon_for(1e-4);
        assert!(env.tail_bound(t) < 1e-4);
        assert!(env.tail_bound(t - 1) >= 1e-4);
    }
}
