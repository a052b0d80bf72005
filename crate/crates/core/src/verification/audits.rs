use rand::Rng;
use rayon::prelude::*;

use super::{AuditCell, AuditResult, AuditSettings, Bound, Repro};
use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::gittins::{allocate, mean_se};
use crate::mechanism::{EntryFeeRule, Mechanism, MechanismSettings, Strategy, Transcript};
use crate::rng::{derive_seed, stream, Purpose};
use crate::virtual_value::pegged_transform;

const FEE_SEED_TAG: u64 = 0xFEE;
const REVENUE_TAG: u64 = 0x5E7;

/// Settings with the fee streams pinned, so every episode of an audit sees
/// the same entry fee for the same reports.
fn pinned(settings: &MechanismSettings, audit_seed: u64) -> MechanismSettings {
    let mut s = settings.clone();
    if s.fee.seed.is_none() {
        s.fee.seed = Some(derive_seed(audit_seed, Purpose::Audit, &[FEE_SEED_TAG]));
    }
    s
}

fn episodes(
    m: &Mechanism<'_>,
    strategies: &[Strategy],
    thetas: &[f64],
    seeds: &[u64],
) -> Result<Vec<Transcript>> {
    let Some((&first, rest)) = seeds.split_first() else {
        return Ok(Vec::new());
    };
    // the first run fills the fee cache before the parallel ones
    let head = m.run_episode(strategies, thetas, first)?;
    let mut out = vec![head];
    out.extend(
        rest.par_iter()
            .map(|&s| m.run_episode(strategies, thetas, s))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(out)
}

/// Utility of one agent per seed, with the (shared) fee's error terms.
struct Utilities {
    per_seed: Vec<f64>,
    fee: f64,
    fee_se: f64,
    fee_quad: f64,
}

fn utilities(
    m: &Mechanism<'_>,
    strategies: &[Strategy],
    thetas: &[f64],
    agent: usize,
    seeds: &[u64],
) -> Result<Utilities> {
    let runs = episodes(m, strategies, thetas, seeds)?;
    let first = runs
        .first()
        .ok_or_else(|| Error::domain("need at least one seed"))?;
    Ok(Utilities {
        fee: first.entry_fees[agent],
        fee_se: first.fee_std_errors[agent],
        fee_quad: first.fee_quadrature_errors[agent],
        per_seed: runs.iter().map(|t| t.utilities[agent]).collect(),
    })
}

fn truthful(k: usize) -> Vec<Strategy> {
    vec![Strategy::Truthful; k]
}

fn argmin(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// `U_i(θ) - U_i(0, θ_{-i})` from truthful episodes against the type
/// integral of the allocation-weighted value slope, at every grid type.
pub fn audit_envelope(
    env: &Environment,
    settings: &MechanismSettings,
    audit: &AuditSettings,
    grid: &[f64],
    seeds: &[u64],
) -> Result<AuditResult> {
    let agent = audit.agent;
    let s = pinned(settings, audit.seed);
    let m = Mechanism::new(env, s.clone())?;
    // the integral is taken from the fee machinery even when the mechanism
    // under audit charges no fee
    let mut rs = s;
    rs.fee.rule = EntryFeeRule::VirtualIndex;
    let rhs_mech = Mechanism::new(env, rs)?;
    let fee_seed = rhs_mech.settings().fee.seed.expect("pinned");
    let k = env.len();
    let zero_profile = audit.profile(env, 0.0);
    let base = utilities(&m, &truthful(k), &zero_profile, agent, seeds)?;
    let slack = 2.0 * m.tail_bound();

    let mut cells = Vec::with_capacity(grid.len());
    for &theta in grid {
        let thetas = audit.profile(env, theta);
        let u = utilities(&m, &truthful(k), &thetas, agent, seeds)?;
        let lhs: Vec<f64> = u
            .per_seed
            .iter()
            .zip(&base.per_seed)
            .map(|(a, b)| a - b)
            .collect();
        let (lhs_mean, lhs_se) = mean_se(&lhs);
        let rhs = rhs_mech.entry_fee(&thetas, agent, fee_seed)?;
        let rhs_zero = rhs_mech.entry_fee(&zero_profile, agent, fee_seed)?;
        let se =
            (lhs_se.powi(2) + u.fee_se.powi(2) + base.fee_se.powi(2) + rhs.integral_se.powi(2))
                .sqrt();
        let quad = u.fee_quad + base.fee_quad + rhs.quadrature_error + rhs_zero.quadrature_error;
        let gap = lhs_mean - (rhs.integral - rhs_zero.integral);
        let worst = seeds[argmin(
            &lhs.iter()
                .map(|x| -(x - lhs_mean).abs())
                .collect::<Vec<_>>(),
        )];
        cells.push(AuditCell::new(
            format!(
                "theta={theta:.4} lhs={lhs_mean:.6} rhs={:.6}",
                rhs.integral - rhs_zero.integral
            ),
            gap.abs(),
            3.0 * se + quad + slack,
            Bound::AtMost,
            se,
            Repro {
                seed: worst,
                thetas,
                agent,
                deviation: None,
            },
        ));
    }
    Ok(AuditResult::from_cells("envelope", seeds.to_vec(), cells))
}

/// Revenue against virtual surplus over `n` truthful episodes with types
/// drawn from the prior. Entry fees are re-estimated in every episode on
/// that episode's streams, so their noise is inside the paired error.
pub fn audit_revenue_bound(
    env: &Environment,
    settings: &MechanismSettings,
    n: usize,
    seed: u64,
) -> Result<AuditResult> {
    let mut s = settings.clone();
    s.fee.seed = None;
    let m = Mechanism::new(env, s)?;
    let k = env.len();
    let runs = (0..n as u64)
        .into_par_iter()
        .map(|e| {
            let thetas: Vec<f64> = (0..k)
                .map(|j| {
                    let u: f64 = stream(seed, Purpose::Types, &[REVENUE_TAG, e, j as u64]).random();
                    env.agents()[j].types().quantile(u)
                })
                .collect();
            let ep_seed = derive_seed(seed, Purpose::Audit, &[REVENUE_TAG, e]);
            let t = m.run_episode(&truthful(k), &thetas, ep_seed)?;
            let quad: f64 = t.fee_quadrature_errors.iter().sum();
            Ok((ep_seed, thetas, t.revenue, t.virtual_surplus, quad))
        })
        .collect::<Result<Vec<_>>>()?;
    let diffs: Vec<f64> = runs.iter().map(|r| r.2 - r.3).collect();
    let (gap, se) = mean_se(&diffs);
    let (revenue, _) = mean_se(&runs.iter().map(|r| r.2).collect::<Vec<_>>());
    let quad = runs.iter().map(|r| r.4).sum::<f64>() / n.max(1) as f64;
    let worst = argmin(&diffs.iter().map(|d| -(d - gap).abs()).collect::<Vec<_>>());
    let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    let cell = AuditCell::new(
        format!("revenue={revenue:.6} virtual_surplus={:.6}", revenue - gap),
        gap.abs(),
        3.0 * se + quad,
        Bound::AtMost,
        se,
        Repro {
            seed: runs.get(worst).map_or(seed, |r| r.0),
            thetas: runs.get(worst).map_or_else(Vec::new, |r| r.1.clone()),
            agent: 0,
            deviation: None,
        },
    );
    Ok(AuditResult::from_cells("bound", seeds, vec![cell]))
}

/// Truthful minus deviating utility of the probed agent, paired on common
/// experience streams, for every grid type and deviation.
pub fn audit_ic(
    env: &Environment,
    settings: &MechanismSettings,
    audit: &AuditSettings,
    deviations: &[Strategy],
    grid: &[f64],
    seeds: &[u64],
) -> Result<AuditResult> {
    let agent = audit.agent;
    let m = Mechanism::new(env, pinned(settings, audit.seed))?;
    let k = env.len();
    let slack = 2.0 * m.tail_bound();
    let mut cells = Vec::with_capacity(grid.len() * deviations.len());
    for &theta in grid {
        let thetas = audit.profile(env, theta);
        let truth = utilities(&m, &truthful(k), &thetas, agent, seeds)?;
        for d in deviations {
            let mut strategies = truthful(k);
            strategies[agent] = d.clone();
            let dev = utilities(&m, &strategies, &thetas, agent, seeds)?;
            let diffs: Vec<f64> = truth
                .per_seed
                .iter()
                .zip(&dev.per_seed)
                .map(|(a, b)| a - b)
                .collect();
            let (gain, se) = mean_se(&diffs);
            let same_fee = truth.fee.to_bits() == dev.fee.to_bits();
            let (fee_se, quad) = if same_fee {
                (0.0, 0.0)
            } else {
                (
                    (truth.fee_se.powi(2) + dev.fee_se.powi(2)).sqrt(),
                    truth.fee_quad + dev.fee_quad,
                )
            };
            let se = (se * se + fee_se * fee_se).sqrt();
            let worst = seeds[argmin(&diffs)];
            // a deviation that changes nothing has an exactly zero difference
            let threshold = if diffs.iter().all(|x| *x == 0.0) && same_fee {
                0.0
            } else {
                -(3.0 * se + quad + slack)
            };
            cells.push(AuditCell::new(
                format!("theta={theta:.4} {d}"),
                gain,
                threshold,
                Bound::AtLeast,
                se,
                Repro {
                    seed: worst,
                    thetas: thetas.clone(),
                    agent,
                    deviation: Some(d.clone()),
                },
            ));
        }
    }
    Ok(AuditResult::from_cells("ic", seeds.to_vec(), cells))
}

/// Truthful utility is nonnegative at every grid type and zero at type 0.
pub fn audit_ir(
    env: &Environment,
    settings: &MechanismSettings,
    audit: &AuditSettings,
    grid: &[f64],
    seeds: &[u64],
) -> Result<AuditResult> {
    let agent = audit.agent;
    let m = Mechanism::new(env, pinned(settings, audit.seed))?;
    let k = env.len();
    let slack = m.tail_bound();
    let mut cells = Vec::new();
    let mut points = grid.to_vec();
    if !points.contains(&0.0) {
        points.insert(0, 0.0);
    }
    for &theta in &points {
        let thetas = audit.profile(env, theta);
        let u = utilities(&m, &truthful(k), &thetas, agent, seeds)?;
        let (mean, se) = mean_se(&u.per_seed);
        let se = (se * se + u.fee_se * u.fee_se).sqrt();
        let tol = 3.0 * se + u.fee_quad + slack;
        let repro = Repro {
            seed: seeds[argmin(&u.per_seed)],
            thetas,
            agent,
            deviation: None,
        };
        if theta == 0.0 {
            cells.push(AuditCell::new(
                "|U(0)|".to_string(),
                mean.abs(),
                tol,
                Bound::AtMost,
                se,
                repro.clone(),
            ));
        }
        cells.push(AuditCell::new(
            format!("theta={theta:.4} U"),
            mean,
            -tol,
            Bound::AtLeast,
            se,
            repro,
        ));
    }
    Ok(AuditResult::from_cells("ir", seeds.to_vec(), cells))
}

/// Deterministic check, for every agent and every pair of grid reports
/// `lo < hi` (the others fixed at their entries of `others`): the agent's
/// index at `hi` is pointwise at least its index at `lo`, and whenever it
/// wins a joint state at `lo` it still wins there at `hi`.
pub fn audit_monotone_allocation(
    env: &Environment,
    settings: &MechanismSettings,
    others: &[f64],
    grid: &[f64],
) -> Result<AuditResult> {
    if others.len() != env.len() {
        return Err(Error::domain("need one type per agent"));
    }
    let m = Mechanism::new(env, settings.clone())?;
    let cache = m.index();
    let tie = 2.0 * settings.index_tol;
    let k = env.len();
    let states: Vec<Vec<usize>> = env
        .agents()
        .iter()
        .map(|a| {
            let s = a.initial_state(0.0);
            a.chain().reachable(a.arm_state(s.e, s.rho))
        })
        .collect();
    let index_at = |j: usize, r: f64| -> Result<Vec<f64>> {
        let r = r.clamp(0.0, env.agents()[j].theta_max());
        match pegged_transform(env, j, r)? {
            None => Ok(vec![f64::NEG_INFINITY; states[j].len()]),
            Some(t) => {
                let arm = cache.arm(j, &t, r)?;
                Ok(states[j].iter().map(|&s| arm.at(env, s)).collect())
            }
        }
    };

    let mut cells = Vec::with_capacity(k);
    for i in 0..k {
        let upper = env.agents()[i].theta_max();
        let reports: Vec<f64> = grid.iter().map(|r| r.clamp(0.0, upper)).collect();
        let tables = reports
            .iter()
            .map(|&r| index_at(i, r))
            .collect::<Result<Vec<_>>>()?;
        // largest index among the other agents, with the lowest-id tie rule
        // folded in: agent i must beat others below it strictly
        let other_tables = (0..k)
            .map(|j| {
                if j == i {
                    Ok(Vec::new())
                } else {
                    index_at(j, others[j])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut joint: Vec<Vec<f64>> = vec![vec![f64::NEG_INFINITY; k]];
        for j in (0..k).filter(|&j| j != i) {
            let mut next = Vec::with_capacity(joint.len() * other_tables[j].len());
            'outer: for base in &joint {
                for &g in &other_tables[j] {
                    if next.len() >= settings.welfare_cap {
                        break 'outer;
                    }
                    let mut v = base.clone();
                    v[j] = g;
                    next.push(v);
                }
            }
            joint = next;
        }

        let mut violations = 0usize;
        let mut first_bad: Option<f64> = None;
        for lo in 0..reports.len() {
            for hi in lo + 1..reports.len() {
                if reports[hi] <= reports[lo] {
                    continue;
                }
                for s in 0..states[i].len() {
                    let (g_lo, g_hi) = (tables[lo][s], tables[hi][s]);
                    let mut bad = g_hi < g_lo - tie;
                    if !bad {
                        for v in &joint {
                            let mut v = v.clone();
                            v[i] = g_lo;
                            let won_lo = allocate(&v) == Some(i);
                            v[i] = g_hi;
                            let won_hi = allocate(&v) == Some(i);
                            let best_other = v
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != i)
                                .map(|(_, g)| *g)
                                .fold(0.0, f64::max);
                            if won_lo && !won_hi && (g_hi - best_other).abs() > tie {
                                bad = true;
                                break;
                            }
                        }
                    }
                    if bad {
                        violations += 1;
                        first_bad.get_or_insert(reports[hi]);
                    }
                }
            }
        }
        let mut thetas = others.to_vec();
        thetas[i] = first_bad.unwrap_or(reports[reports.len() - 1]);
        cells.push(AuditCell::new(
            format!("agent={i} states={} joint={}", states[i].len(), joint.len()),
            violations as f64,
            0.0,
            Bound::AtMost,
            0.0,
            Repro {
                seed: 0,
                thetas,
                agent: i,
                deviation: None,
            },
        ));
    }
    Ok(AuditResult::from_cells("monotone", Vec::new(), cells))
}

/// With common experience streams, raising the agent's type by `raise`
/// makes each of its allocations weakly earlier, on every seed.
pub fn audit_allocation_time_coupling(
    env: &Environment,
    settings: &MechanismSettings,
    thetas: &[f64],
    agent: usize,
    raise: f64,
    seeds: &[u64],
) -> Result<AuditResult> {
    let mut s = settings.clone();
    // fees do not move allocations
    s.fee.rule = EntryFeeRule::None;
    let m = Mechanism::new(env, s)?;
    let k = env.len();
    let upper = env.agent(agent)?.theta_max();
    let mut high = thetas.to_vec();
    high[agent] = (thetas[agent] + raise).min(upper);
    let low_runs = episodes(&m, &truthful(k), thetas, seeds)?;
    let high_runs = episodes(&m, &truthful(k), &high, seeds)?;
    let mut held = 0usize;
    let mut first_bad = None;
    for ((lo, hi), &seed) in low_runs.iter().zip(&high_runs).zip(seeds) {
        let (tl, th) = (lo.allocation_times(agent), hi.allocation_times(agent));
        let ok = tl
            .iter()
            .enumerate()
            .all(|(n, &t)| th.get(n).is_some_and(|&u| u <= t));
        if ok {
            held += 1;
        } else {
            first_bad.get_or_insert(seed);
        }
    }
    let n = seeds.len().max(1) as f64;
    let cell = AuditCell::new(
        format!("theta={:.4} raised={:.4}", thetas[agent], high[agent]),
        held as f64 / n,
        1.0,
        Bound::AtLeast,
        0.0,
        Repro {
            seed: first_bad.unwrap_or(seeds.first().copied().unwrap_or(0)),
            thetas: thetas.to_vec(),
            agent,
            deviation: Some(Strategy::MisreportThetaAlways { offset: raise }),
        },
    );
    Ok(AuditResult::from_cells(
        "coupling",
        seeds.to_vec(),
        vec![cell],
    ))
}

/// On instances small enough for exact programmes: each winner's marginal
/// contribution equals `α (v - p)` and every other active agent's is zero.
pub fn audit_vcg_identity(
    env: &Environment,
    settings: &MechanismSettings,
    thetas: &[f64],
    seeds: &[u64],
) -> Result<AuditResult> {
    let mut s = settings.clone();
    s.fee.rule = EntryFeeRule::None;
    let m = Mechanism::new(env, s)?;
    let k = env.len();
    let runs = episodes(&m, &truthful(k), thetas, seeds)?;
    let transforms = m.transforms(thetas)?;
    let mut worst = (0.0f64, seeds.first().copied().unwrap_or(0));
    let mut rounds = 0usize;
    for (tr, &seed) in runs.iter().zip(seeds) {
        for t in 1..tr.rounds.len() {
            let row = &tr.rounds[t];
            let Some(w) = row.winner else { continue };
            rounds += 1;
            for (j, tj) in transforms.iter().enumerate() {
                let Some(tj) = tj else { continue };
                let mc = m.marginal_contribution(tr, t, j)?;
                let target = if j == w {
                    let v =
                        env.agents()[j]
                            .value()
                            .eval(row.theta_hat[j], row.e_hat[j], row.rho[j]);
                    tj.alpha * (v - row.payment)
                } else {
                    0.0
                };
                let err = (mc - target).abs();
                if err > worst.0 {
                    worst = (err, seed);
                }
            }
        }
    }
    let cell = AuditCell::new(
        format!("winning rounds={rounds}"),
        worst.0,
        1e-8,
        Bound::AtMost,
        0.0,
        Repro {
            seed: worst.1,
            thetas: thetas.to_vec(),
            agent: 0,
            deviation: None,
        },
    );
    Ok(AuditResult::from_cells("vcg", seeds.to_vec(), vec![cell]))
}
