//! One test per acceptance criterion. Each prints a single
//! `[acceptance] N PASS|FAIL ...` line before asserting.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use dynamech::config::{parse_config, RunConfig};
use dynamech::environments::{
    validate_assumptions, ArmChain, Assumption, Environment, Row, DEFAULT_GRID_POINTS,
};
use dynamech::gittins::{
    brute_force_index, chain_index, mean_se, ArmProblem, JointDp, WelfareMethod,
};
use dynamech::mechanism::{FeeQuadrature, Mechanism, MechanismSettings, Monitoring, Strategy};
use dynamech::output::{json_document, transcripts_csv, Provenance};
use dynamech::verification::{
    audit_ic, audit_monotone_allocation, audit_vcg_identity, run_suite, theta_grid, AuditResult,
    AuditSettings, Suite,
};

fn verdict(n: u32, what: &str, ok: bool, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = ok && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    println!(
        "[acceptance] {n} {} {what}; {:.2?}{budget}",
        if pass { "PASS" } else { "FAIL" },
        elapsed
    );
    pass
}

fn config(name: &str) -> (RunConfig, Environment) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let c = parse_config(&path).unwrap();
    let env = c.environment().unwrap();
    (c, env)
}

fn suite(name: &str, s: Suite) -> AuditResult {
    let (c, env) = config(name);
    let mut r = run_suite(&env, &c.mechanism, &c.audit, s).unwrap();
    assert_eq!(r.len(), 1);
    r.pop().unwrap()
}

fn describe(r: &AuditResult) -> String {
    let failed: Vec<&str> = r.failures().take(3).map(|c| c.label.as_str()).collect();
    format!(
        "{} cells={} stat={:.3e} thr={:.3e} failed={failed:?}",
        r.name,
        r.cells.len(),
        r.statistic,
        r.threshold
    )
}

fn single_state() -> ArmChain {
    ArmChain::from_rows(1, vec![vec![(0, 1.0)]])
}

#[test]
fn criterion_01_constant_arm_index_is_its_reward() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let chain = single_state();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let xi: f64 = rng.random_range(-5.0..5.0);
        let delta: f64 = rng.random_range(0.05..0.95);
        let g = chain_index(&chain, &[xi], delta, 0, 1e-12).unwrap();
        worst = worst.max((g - xi).abs());
    }
    let ok = worst <= 1e-10;
    assert!(verdict(
        1,
        &format!("max |index - xi| = {worst:.2e}"),
        ok,
        start.elapsed(),
        Some(Duration::from_secs(1))
    ));
}

#[test]
fn criterion_02_two_state_arm() {
    let start = Instant::now();
    // pays 0 once, then 1 forever
    let chain = ArmChain::from_rows(1, vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
    let rewards = [0.0, 1.0];
    let g = chain_index(&chain, &rewards, 0.5, 0, 1e-9).unwrap();
    let b = brute_force_index(&chain, &rewards, 0.5, 0, 30, 10_000).unwrap();
    let ok = (g - 0.5).abs() <= 1e-8
        && (b.value - 0.5).abs() <= 1e-8 + b.tail_bound
        && (g - b.value).abs() <= 1e-8;
    assert!(verdict(
        2,
        &format!("index={g:.12} stopping-time oracle={:.12}", b.value),
        ok,
        start.elapsed(),
        None
    ));
}

fn random_chain(rng: &mut ChaCha8Rng) -> ArmChain {
    let n = rng.random_range(1..=4usize);
    let rows: Vec<Row> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        rng.random_range(0.05..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                let t = rng.random_range(0..n);
                return vec![(t, 1.0)];
            }
            w.iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(t, &x)| (t, x / total))
                .collect()
        })
        .collect();
    ArmChain::from_rows(1, rows)
}

/// Plain value iteration over the product chain with a retire option.
fn joint_optimum(
    chains: [&ArmChain; 2],
    rewards: [&[f64]; 2],
    delta: f64,
    start: [usize; 2],
) -> f64 {
    let (n0, n1) = (chains[0].len(), chains[1].len());
    let mut v = vec![0.0; n0 * n1];
    loop {
        let mut change = 0.0f64;
        let mut next = v.clone();
        for s0 in 0..n0 {
            for s1 in 0..n1 {
                let play0 = rewards[0][s0]
                    + delta
                        * chains[0]
                            .row(s0)
                            .iter()
                            .map(|&(t, p)| p * v[t * n1 + s1])
                            .sum::<f64>();
                let play1 = rewards[1][s1]
                    + delta
                        * chains[1]
                            .row(s1)
                            .iter()
                            .map(|&(t, p)| p * v[s0 * n1 + t])
                            .sum::<f64>();
                let best = play0.max(play1).max(0.0);
                change = change.max((best - v[s0 * n1 + s1]).abs());
                next[s0 * n1 + s1] = best;
            }
        }
        v = next;
        if change < 1e-15 {
            return v[start[0] * n1 + start[1]];
        }
    }
}

#[test]
fn criterion_03_index_policy_is_optimal() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let chains = [random_chain(&mut rng), random_chain(&mut rng)];
        let rewards: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| (0..c.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let delta: f64 = rng.random_range(0.3..0.9);
        let starts = [0, 0];
        let arms = (0..2)
            .map(|i| ArmProblem {
                chain: &chains[i],
                rewards: rewards[i].clone(),
                start: starts[i],
            })
            .collect();
        let dp = JointDp::new(arms, delta, 10_000).unwrap();
        let x = dp.encode(&starts).unwrap();
        let policy = dp.index_policy_values(1e-12).unwrap()[x];
        let oracle = joint_optimum(
            [&chains[0], &chains[1]],
            [&rewards[0], &rewards[1]],
            delta,
            starts,
        );
        worst = worst.max((policy - oracle).abs());
    }
    let ok = worst <= 1e-8;
    assert!(verdict(
        3,
        &format!("25 instances, max |index policy - optimum| = {worst:.2e}"),
        ok,
        start.elapsed(),
        Some(Duration::from_secs(30))
    ));
}

fn posted_price_settings() -> MechanismSettings {
    let mut s = MechanismSettings {
        tail_eps: 1e-12,
        ..MechanismSettings::default()
    };
    s.fee.paths = 2000;
    s.fee.quadrature = FeeQuadrature::Adaptive {
        nodes: 16,
        tolerance: 1e-6,
        max_panels: 16,
    };
    s
}

#[test]
fn criterion_04_posted_price_closed_forms() {
    let start = Instant::now();
    let env = posted_price(0.5);
    let m = Mechanism::new(&env, posted_price_settings()).unwrap();
    let tail = 2.0 * m.tail_bound();

    let fee = m.entry_fee(&[0.8], 0, 11).unwrap();
    let fee_ok = fee.target_se <= 0.01
        && (fee.target - 1.0).abs() <= 3.0 * fee.target_se + fee.quadrature_error + tail;

    let mut s = posted_price_settings();
    s.fee.paths = 8;
    s.fee.quadrature = FeeQuadrature::Stratified { strata: 16 };
    let rm = Mechanism::new(&env, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let revenues: Vec<f64> = (0..10_000u64)
        .map(|k| {
            let theta: f64 = rng.random_range(0.0..1.0);
            rm.run_episode(&[Strategy::Truthful], &[theta], k)
                .unwrap()
                .revenue
        })
        .collect();
    let (rev, rev_se) = mean_se(&revenues);
    let rev_ok = (rev - 0.5).abs() <= 3.0 * rev_se + tail;

    let u_hi = m
        .run_episode(&[Strategy::Truthful], &[0.8], 5)
        .unwrap()
        .utilities[0];
    let u_lo = m
        .run_episode(&[Strategy::Truthful], &[0.0], 5)
        .unwrap()
        .utilities[0];
    let lhs = u_hi - u_lo;
    let f_lo = m.entry_fee(&[0.0], 0, 5).unwrap();
    let f_hi = m.entry_fee(&[0.8], 0, 5).unwrap();
    let rhs = f_hi.integral - f_lo.integral;
    let env_tol = 3.0
        * (f_hi.fee_se.powi(2) + f_lo.fee_se.powi(2) + f_hi.integral_se.powi(2)).sqrt()
        + f_hi.quadrature_error
        + f_lo.quadrature_error
        + tail;
    let env_ok = (lhs - 0.6).abs() <= env_tol && (rhs - 0.6).abs() <= env_tol;

    let ok = fee_ok && rev_ok && env_ok;
    assert!(verdict(
        4,
        &format!(
            "P(0.8)={:.6} se={:.1e}; revenue={rev:.4} se={rev_se:.1e}; envelope lhs={lhs:.6} rhs={rhs:.6}",
            fee.target, fee.target_se
        ),
        ok,
        start.elapsed(),
        Some(Duration::from_secs(120))
    ));
}

#[test]
fn criterion_05_revenue_equals_virtual_surplus() {
    let start = Instant::now();
    let a = suite("posted_price.toml", Suite::Bound);
    let b = suite("sponsored_search.toml", Suite::Bound);
    let ok = a.passed && b.passed && b.seeds.len() == 5000;
    assert!(verdict(
        5,
        &format!(
            "posted price: {}; sponsored search: {}",
            describe(&a),
            describe(&b)
        ),
        ok,
        start.elapsed(),
        Some(Duration::from_secs(300))
    ));
}

#[test]
fn criterion_06_incentive_compatibility() {
    let start = Instant::now();
    let a = suite("posted_price.toml", Suite::Ic);
    let b = suite("sponsored_search.toml", Suite::Ic);
    let ok = a.passed && b.passed;
    assert!(verdict(
        6,
        &format!(
            "posted price: {}; sponsored search: {}",
            describe(&a),
            describe(&b)
        ),
        ok,
        start.elapsed(),
        Some(Duration::from_secs(600))
    ));
}

#[test]
fn criterion_07_individual_rationality() {
    let start = Instant::now();
    let a = suite("posted_price.toml", Suite::Ir);
    let b = suite("sponsored_search.toml", Suite::Ir);
    let at_zero = |r: &AuditResult| r.cells.iter().any(|c| c.label.starts_with("|U(0)|"));
    let ok = a.passed && b.passed && at_zero(&a) && at_zero(&b);
    assert!(verdict(
        7,
        &format!(
            "posted price: {}; sponsored search: {}",
            describe(&a),
            describe(&b)
        ),
        ok,
        start.elapsed(),
        None
    ));
}

#[test]
fn criterion_08_monotone_allocation() {
    let start = Instant::now();
    let settings = MechanismSettings::default();
    let audit = AuditSettings::default();
    let envs = [
        ("sponsored_search", search(2, 5, 0.8)),
        ("beta_bernoulli", bernoulli(2, 5, 0.8)),
        ("ar1", ar1_pair(0.8)),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, env) in &envs {
        let grid = theta_grid(env, 0, audit.grid_points).unwrap();
        let r = audit_monotone_allocation(env, &settings, &audit.profile(env, 0.0), &grid).unwrap();
        ok &= r.passed;
        notes.push(format!("{name}: {}", describe(&r)));
    }
    let (_, exp) = config("exponential.toml");
    let report = validate_assumptions(&exp, DEFAULT_GRID_POINTS);
    let rejected = !report.passed() && !report.holds(Assumption::MonotoneHazard);
    ok &= rejected;
    notes.push(format!("exponential rejected: {rejected}"));
    assert!(verdict(8, &notes.join("; "), ok, start.elapsed(), None));
}

#[test]
fn criterion_09_allocation_time_coupling() {
    let start = Instant::now();
    let r = suite("sponsored_search.toml", Suite::Coupling);
    let (c, env) = config("sponsored_search.toml");
    let grid = theta_grid(&env, c.audit.agent, c.audit.grid_points).unwrap();
    let seeds = c.audit.episode_seeds(c.audit.episodes);
    let same = audit_ic(
        &env,
        &c.mechanism,
        &c.audit,
        &[Strategy::Truthful],
        &grid,
        &seeds,
    )
    .unwrap();
    let exact = same
        .cells
        .iter()
        .all(|cell| cell.statistic == 0.0 && cell.std_error == 0.0);
    let ok = r.passed && r.statistic == 1.0 && r.seeds.len() == 200 && exact;
    assert!(verdict(
        9,
        &format!(
            "held in {:.1}% of {} seeds; truthful-vs-truthful exactly zero: {exact}",
            100.0 * r.statistic,
            r.seeds.len()
        ),
        ok,
        start.elapsed(),
        None
    ));
}

#[test]
fn criterion_10_vcg_identity() {
    let start = Instant::now();
    let settings = MechanismSettings::default();
    let envs = [
        ("beta_bernoulli", bernoulli(2, 3, 0.8)),
        ("sponsored_search", search(2, 2, 0.8)),
    ];
    let seeds: Vec<u64> = (0..20).collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, env) in &envs {
        let thetas = [0.8, 0.65];
        let r = audit_vcg_identity(env, &settings, &thetas, &seeds).unwrap();
        let m = Mechanism::new(env, settings.clone()).unwrap();
        let exact = m
            .run_episode(&[Strategy::Truthful, Strategy::Truthful], &thetas, 0)
            .unwrap()
            .welfare_method
            == WelfareMethod::ExactDp;
        ok &= r.passed && exact;
        notes.push(format!("{name}: {} exact={exact}", describe(&r)));
    }
    assert!(verdict(10, &notes.join("; "), ok, start.elapsed(), None));
}

#[test]
fn criterion_11_complete_monitoring_equivalence() {
    let start = Instant::now();
    let (c, env) = config("sponsored_search.toml");
    let mut complete = c.mechanism.clone();
    complete.monitoring = Monitoring::Complete;
    let reported = Mechanism::new(&env, c.mechanism.clone()).unwrap();
    let monitored = Mechanism::new(&env, complete).unwrap();
    let truthful = [Strategy::Truthful, Strategy::Truthful];
    let mut mismatches = 0;
    for seed in 0..20u64 {
        let thetas = [0.3 + 0.03 * seed as f64, 0.7];
        let a = reported.run_episode(&truthful, &thetas, seed).unwrap();
        let b = monitored.run_episode(&truthful, &thetas, seed).unwrap();
        if a != b {
            mismatches += 1;
        }
    }
    assert!(verdict(
        11,
        &format!("{mismatches} of 20 transcripts differ"),
        mismatches == 0,
        start.elapsed(),
        None
    ));
}

#[test]
fn criterion_12_determinism_across_workers() {
    let start = Instant::now();
    let (c, env) = config("sponsored_search.toml");
    let prov = Provenance {
        config_hash: c.hash().unwrap(),
        seed: c.seed,
    };
    let outputs: Vec<(String, String)> = [1, 2, 8]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap();
            pool.install(|| {
                let runs = c.simulate(&env).unwrap();
                (
                    transcripts_csv(&env, &runs, &prov).unwrap(),
                    json_document("transcript", &prov, &runs).unwrap(),
                )
            })
        })
        .collect();
    let ok = outputs.windows(2).all(|w| w[0] == w[1]);
    assert!(verdict(
        12,
        &format!(
            "CSV {} bytes, JSON {} bytes, identical across 1/2/8 workers: {ok}",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
        ok,
        start.elapsed(),
        None
    ));
}
