#![allow(dead_code)]

use dynamech::environments::{
    ar1, beta_bernoulli, finite_chain, sponsored_search, Ar1Params, BetaBernoulliParams, BetaPrior,
    Environment, FiniteChainAgent, SeparableValue, SponsoredSearchParams, ThetaFn,
    TypeDistribution,
};

fn single_state(types: TypeDistribution, value: SeparableValue) -> FiniteChainAgent {
    FiniteChainAgent {
        types,
        public_labels: vec!["none".into()],
        g: vec![vec![1.0]],
        private_labels: vec!["empty".into()],
        h: vec![vec![vec![1.0]]],
        value,
        initial_e: None,
        initial_rho: None,
    }
}

/// Single agent, `v = θ`, uniform types on [0, 1].
pub fn posted_price_agent() -> FiniteChainAgent {
    single_state(
        TypeDistribution::uniform(1.0),
        SeparableValue::Multiplicative {
            a: ThetaFn::identity(),
            b: vec![vec![1.0]],
            c: vec![0.0],
        },
    )
}

pub fn posted_price(discount: f64) -> Environment {
    finite_chain(&[posted_price_agent()], discount).unwrap()
}

/// Agent whose value is the constant `x` whatever its type.
pub fn constant_agent(x: f64) -> FiniteChainAgent {
    single_state(
        TypeDistribution::uniform(1.0),
        SeparableValue::Additive {
            a: ThetaFn::identity(),
            scale: vec![0.0],
            b: vec![vec![x]],
        },
    )
}

pub fn constants(xs: &[f64], discount: f64) -> Environment {
    let agents: Vec<_> = xs.iter().map(|&x| constant_agent(x)).collect();
    finite_chain(&agents, discount).unwrap()
}

pub fn search(agents: usize, cap: usize, discount: f64) -> Environment {
    sponsored_search(
        &SponsoredSearchParams {
            agents,
            theta_max: 1.0,
            click_prior: BetaPrior::default(),
            purchase_prior: BetaPrior::default(),
            cap,
            types: None,
        },
        discount,
    )
    .unwrap()
}

/// `Σ_{t<T} δ^t`.
pub fn truncated_annuity(discount: f64, horizon: usize) -> f64 {
    (1.0 - discount.powi(horizon as i32)) / (1.0 - discount)
}

pub fn bernoulli(agents: usize, cap: usize, discount: f64) -> Environment {
    beta_bernoulli(
        &BetaBernoulliParams {
            agents,
            theta_max: 1.0,
            prior: BetaPrior::default(),
            cap,
            types: None,
        },
        discount,
    )
    .unwrap()
}

/// Two AR(1) agents with a two-state private shock chain.
pub fn ar1_pair(discount: f64) -> Environment {
    ar1(
        &Ar1Params {
            agents: 2,
            theta_max: 1.0,
            coefficient: 0.8,
            shocks: vec![vec![0.1, 0.0, 0.2], vec![0.0, 0.05, 0.0]],
            shock_kernel: Some(vec![vec![0.7, 0.3], vec![0.4, 0.6]]),
            grid_width: 0.05,
            level_max: 1.0,
            types: None,
        },
        discount,
    )
    .unwrap()
}

/// Every built-in family, small enough for exhaustive checks.
pub fn builtins(discount: f64) -> Vec<(&'static str, Environment)> {
    vec![
        ("sponsored_search", search(2, 3, discount)),
        ("beta_bernoulli", bernoulli(2, 3, discount)),
        ("ar1", ar1_pair(discount)),
    ]
}
