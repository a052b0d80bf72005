//! Each audit must be able to fail. These run the audits against mechanisms
//! or priors outside the assumptions and expect a failure.

mod common;

use std::path::PathBuf;

use common::*;
use dynamech::config::parse_config;
use dynamech::environments::{
    finite_chain, sponsored_search, BetaPrior, Environment, FiniteChainAgent, SeparableValue,
    SponsoredSearchParams, ThetaFn, TypeDistribution,
};
use dynamech::mechanism::{EntryFeeRule, FeeQuadrature, MechanismSettings};
use dynamech::verification::{run_suite, AuditResult, AuditSettings, Suite};

/// Prior whose inverse hazard jumps up at the bin edge.
fn lumpy_search() -> Environment {
    sponsored_search(
        &SponsoredSearchParams {
            agents: 2,
            theta_max: 1.0,
            click_prior: BetaPrior::default(),
            purchase_prior: BetaPrior::default(),
            cap: 3,
            types: Some(TypeDistribution::PiecewiseUniform {
                upper: 1.0,
                weights: vec![0.9, 0.1],
            }),
        },
        0.8,
    )
    .unwrap()
}

fn run(
    env: &Environment,
    settings: &MechanismSettings,
    audit: &AuditSettings,
    suite: Suite,
) -> AuditResult {
    run_suite(env, settings, audit, suite)
        .unwrap()
        .pop()
        .unwrap()
}

fn no_fee(mut s: MechanismSettings) -> MechanismSettings {
    s.fee.rule = EntryFeeRule::None;
    s
}

fn quick_audit() -> AuditSettings {
    AuditSettings {
        episodes: 100,
        revenue_episodes: 500,
        coupling_seeds: 100,
        ..AuditSettings::default()
    }
}

#[test]
fn no_fee_mechanism_fails_envelope_bound_and_ic() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/posted_price.toml");
    let c = parse_config(&path).unwrap();
    let env = c.environment().unwrap();
    let s = no_fee(c.mechanism.clone());
    for suite in [Suite::Envelope, Suite::Bound, Suite::Ic] {
        let r = run(&env, &s, &quick_audit(), suite);
        assert!(!r.passed, "{suite:?} passed without entry fees");
        assert!(r.repro.is_some());
    }
}

#[test]
fn no_fee_mechanism_fails_sponsored_search_ic() {
    let env = search(2, 3, 0.8);
    let r = run(
        &env,
        &no_fee(MechanismSettings::default()),
        &quick_audit(),
        Suite::Ic,
    );
    assert!(!r.passed);
}

#[test]
fn lumpy_prior_fails_monotone_and_ic() {
    let env = lumpy_search();
    let mut s = MechanismSettings::default();
    s.fee.paths = 200;
    s.fee.quadrature = FeeQuadrature::Stratified { strata: 16 };
    for suite in [Suite::Monotone, Suite::Ic] {
        let r = run(&env, &s, &quick_audit(), suite);
        assert!(!r.passed, "{suite:?} passed on a non-MHR prior");
    }
}

#[test]
fn type_blind_agent_without_fee_fails_ir() {
    // keeps its whole value at type 0
    let env = constants(&[0.5], 0.5);
    let r = run(
        &env,
        &no_fee(MechanismSettings::default()),
        &quick_audit(),
        Suite::Ir,
    );
    assert!(!r.passed);
    assert!(r.failures().any(|c| c.label == "|U(0)|"));
    let with_fee = run(
        &env,
        &MechanismSettings::default(),
        &quick_audit(),
        Suite::Ir,
    );
    assert!(with_fee.passed);
}

#[test]
fn value_falling_in_type_fails_coupling() {
    let mut falling = constant_agent(1.0);
    falling.value = SeparableValue::Additive {
        a: ThetaFn::identity(),
        scale: vec![-1.0],
        b: vec![vec![1.0]],
    };
    let env = finite_chain(&[falling, constant_agent(0.5)], 0.5).unwrap();
    let r = run(
        &env,
        &MechanismSettings::default(),
        &quick_audit(),
        Suite::Coupling,
    );
    assert!(!r.passed);
    assert_eq!(r.statistic, 0.0);
}

/// Pays nothing once, then a type-dependent amount forever; the scale varies
/// by state so its indices are solved directly at the mechanism tolerance.
fn ramp_agent() -> FiniteChainAgent {
    let mut a = constant_agent(0.0);
    a.public_labels = vec!["fresh".into(), "used".into()];
    a.g = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    a.h = vec![vec![vec![1.0], vec![1.0]]];
    a.value = SeparableValue::Additive {
        a: ThetaFn::identity(),
        scale: vec![1.0, 0.5],
        b: vec![vec![0.0, 0.9]],
    };
    a
}

#[test]
fn coarse_indices_fail_vcg() {
    let env = finite_chain(&[ramp_agent(), constant_agent(0.75)], 0.8).unwrap();
    let mut s = MechanismSettings::default();
    assert!(run(&env, &s, &quick_audit(), Suite::Vcg).passed);
    s.index_tol = 0.3;
    let r = run(&env, &s, &quick_audit(), Suite::Vcg);
    assert!(!r.passed, "{}", r.statistic);
}
