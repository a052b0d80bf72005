use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::environments::{ArmChain, Environment};
use crate::error::{Error, Result};
use crate::virtual_value::VirtualTransform;

/// Largest chain handled by [`largest_remaining_index`].
pub const LARGEST_REMAINING_MAX_STATES: usize = 64;

/// Per-step transformed reward `ξ` of every state of an agent's chain, at
/// value-type `theta`.
pub fn arm_rewards(
    env: &Environment,
    agent: usize,
    transform: &VirtualTransform,
    theta: f64,
) -> Result<Vec<f64>> {
    let a = env.agent(agent)?;
    let chain = a.chain();
    if transform.beta.len() != a.public().len() {
        return Err(Error::domain(
            "transform does not match the agent's public states",
        ));
    }
    let rewards: Vec<f64> = (0..chain.len())
        .map(|s| {
            let (e, rho) = chain.decode(s);
            transform.apply(a.value().eval(theta, e, rho), rho)
        })
        .collect();
    if let Some(bad) = rewards.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!(
            "transformed reward {bad} is not finite"
        )));
    }
    Ok(rewards)
}

/// Reachable states of `start`, in an order where every transition other
/// than a self-loop moves forward, when the chain admits one.
pub(crate) struct Reach {
    pub states: Vec<usize>,
    pub acyclic: bool,
}

pub(crate) fn reach(chain: &ArmChain, start: usize) -> Reach {
    let reachable = chain.reachable(start);
    match chain.topological_order() {
        Some(order) => {
            let mut mark = vec![false; chain.len()];
            for &s in &reachable {
                mark[s] = true;
            }
            Reach {
                states: order.iter().copied().filter(|&s| mark[s]).collect(),
                acyclic: true,
            }
        }
        None => Reach {
            states: reachable,
            acyclic: false,
        },
    }
}

/// Whether continuing at `start` beats retiring on `λ / (1 - δ)`.
#[allow(clippy::too_many_arguments)]
fn continue_beats_retire(
    chain: &ArmChain,
    rewards: &[f64],
    discount: f64,
    reach: &Reach,
    values: &mut [f64],
    start: usize,
    lambda: f64,
    tol: f64,
) -> bool {
    let retire = lambda / (1.0 - discount);
    if reach.acyclic {
        for &s in reach.states.iter().rev() {
            let mut rest = 0.0;
            let mut stay = 0.0;
            for &(t, p) in chain.row(s) {
                if t == s {
                    stay = p;
                } else {
                    rest += p * values[t];
                }
            }
            let cont = (rewards[s] + discount * rest) / (1.0 - discount * stay);
            if s == start {
                return cont > retire;
            }
            values[s] = cont.max(retire);
        }
        unreachable!("start is reachable from itself")
    }
    for &s in &reach.states {
        values[s] = retire;
    }
    let stop = (tol / 10.0) * (1.0 - discount);
    loop {
        let mut change: f64 = 0.0;
        for &s in &reach.states {
            let cont = rewards[s]
                + discount
                    * chain
                        .row(s)
                        .iter()
                        .map(|&(t, p)| p * values[t])
                        .sum::<f64>();
            let v = cont.max(retire);
            change = change.max((v - values[s]).abs());
            values[s] = v;
        }
        if change <= stop {
            break;
        }
    }
    let cont = rewards[start]
        + discount
            * chain
                .row(start)
                .iter()
                .map(|&(t, p)| p * values[t])
                .sum::<f64>();
    cont > retire
}

/// Gittins index of `start` by bisection on the retirement reward.
///
/// Acyclic chains (self-loops allowed) are solved exactly by one backward
/// pass per bisection step; other chains by value iteration.
pub fn chain_index(
    chain: &ArmChain,
    rewards: &[f64],
    discount: f64,
    start: usize,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "index tolerance must be positive"));
    }
    if start >= chain.len() || rewards.len() != chain.len() {
        return Err(Error::domain(
            "start state or reward table outside the chain",
        ));
    }
    let reach = reach(chain, start);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in &reach.states {
        let r = rewards[s];
        if !r.is_finite() {
            return Err(Error::domain(format!(
                "reward {r} at state {s} is not finite"
            )));
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let mut values = vec![0.0; chain.len()];
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if continue_beats_retire(
            chain,
            rewards,
            discount,
            &reach,
            &mut values,
            start,
            mid,
            tol,
        ) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if lo == hi { lo } else { 0.5 * (lo + hi) })
}

/// Gittins index of the agent's arm at `(e, ρ)` with value-type `theta`.
pub fn gittins_index(
    env: &Environment,
    agent: usize,
    transform: &VirtualTransform,
    theta: f64,
    e: usize,
    rho: usize,
    tol: f64,
) -> Result<f64> {
    let a = env.agent(agent)?;
    if e >= a.private().len() || rho >= a.public().len() {
        return Err(Error::domain(format!(
            "state ({e}, {rho}) outside the agent's spaces"
        )));
    }
    let rewards = arm_rewards(env, agent, transform, theta)?;
    chain_index(
        a.chain(),
        &rewards,
        env.discount(),
        a.arm_state(e, rho),
        tol,
    )
}

/// Indices of every state by the largest-remaining-index method: states are
/// ranked one at a time, each solving a linear system over the states already
/// ranked above it.
pub fn largest_remaining_index(
    chain: &ArmChain,
    rewards: &[f64],
    discount: f64,
) -> Result<Vec<f64>> {
    let n = chain.len();
    if n > LARGEST_REMAINING_MAX_STATES {
        return Err(Error::TooLarge {
            size: n,
            cap: LARGEST_REMAINING_MAX_STATES,
        });
    }
    if rewards.len() != n || rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::domain("rewards must be finite, one per state"));
    }
    let mut index = vec![f64::NAN; n];
    let mut ranked: Vec<usize> = Vec::with_capacity(n);
    let mut in_set = vec![false; n];
    while ranked.len() < n {
        // discounted reward and time accumulated while staying in the ranked set
        let m = ranked.len();
        let (num_in, den_in) = if m == 0 {
            (DVector::zeros(0), DVector::zeros(0))
        } else {
            let mut a = DMatrix::<f64>::identity(m, m);
            let pos = |s: usize| ranked.iter().position(|&x| x == s);
            for (r, &s) in ranked.iter().enumerate() {
                for &(t, p) in chain.row(s) {
                    if let Some(c) = pos(t) {
                        a[(r, c)] -= discount * p;
                    }
                }
            }
            let lu = a.lu();
            let rhs_r = DVector::from_iterator(m, ranked.iter().map(|&s| rewards[s]));
            let rhs_t = DVector::from_element(m, 1.0);
            let nr = lu
                .solve(&rhs_r)
                .ok_or_else(|| Error::Invariant("singular ranking system".into()))?;
            let nt = lu
                .solve(&rhs_t)
                .ok_or_else(|| Error::Invariant("singular ranking system".into()))?;
            (nr, nt)
        };
        let mut best: Option<(usize, f64)> = None;
        for s in 0..n {
            if in_set[s] {
                continue;
            }
            let mut num = rewards[s];
            let mut den = 1.0;
            for &(t, p) in chain.row(s) {
                if in_set[t] {
                    let c = ranked.iter().position(|&x| x == t).expect("ranked");
                    num += discount * p * num_in[c];
                    den += discount * p * den_in[c];
                }
            }
            let ratio = num / den;
            if best.is_none_or(|(_, b)| ratio > b) {
                best = Some((s, ratio));
            }
        }
        let (s, ratio) = best.expect("unranked state remains");
        index[s] = ratio;
        in_set[s] = true;
        ranked.push(s);
    }
    Ok(index)
}

/// Best ratio over stopping rules truncated at a horizon, with its tail bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncatedIndex {
    pub value: f64,
    pub tail_bound: f64,
}

/// Maximum over time-and-state dependent stopping rules `1 <= τ <= horizon`
/// of `E[Σ_{t<τ} δ^t ξ] / E[Σ_{t<τ} δ^t]`, by Dinkelbach iteration on
/// backward induction. Refuses when `states · horizon > cap`.
pub fn brute_force_index(
    chain: &ArmChain,
    rewards: &[f64],
    discount: f64,
    start: usize,
    horizon: usize,
    cap: usize,
) -> Result<TruncatedIndex> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    if start >= chain.len() || rewards.len() != chain.len() {
        return Err(Error::domain(
            "start state or reward table outside the chain",
        ));
    }
    let states = chain.reachable(start);
    let size = states.len().saturating_mul(horizon);
    if size > cap {
        return Err(Error::TooLarge { size, cap });
    }
    let vmax = states.iter().map(|&s| rewards[s].abs()).fold(0.0, f64::max);
    let n = chain.len();
    let mut lambda = rewards[start];
    // (objective, numerator, denominator) at time t + 1
    let mut next = vec![(0.0, 0.0, 0.0); n];
    let mut cur = vec![(0.0, 0.0, 0.0); n];
    for _ in 0..200 {
        next.iter_mut().for_each(|x| *x = (0.0, 0.0, 0.0));
        let mut at_start = (0.0, 0.0, 0.0);
        for t in (0..horizon).rev() {
            for &s in &states {
                let mut acc = (rewards[s] - lambda, rewards[s], 1.0);
                for &(u, p) in chain.row(s) {
                    let w = discount * p;
                    acc.0 += w * next[u].0;
                    acc.1 += w * next[u].1;
                    acc.2 += w * next[u].2;
                }
                if t == 0 {
                    if s == start {
                        at_start = acc;
                    }
                    continue;
                }
                cur[s] = if acc.0 > 0.0 { acc } else { (0.0, 0.0, 0.0) };
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let updated = at_start.1 / at_start.2;
        if updated <= lambda + 1e-15 * lambda.abs().max(1.0) {
            lambda = lambda.max(updated);
            break;
        }
        lambda = updated;
    }
    Ok(TruncatedIndex {
        value: lambda,
        tail_bound: discount.powi(horizon as i32) * vmax / (1.0 - discount),
    })
}

/// Indices of all `(e, ρ)` cells of one agent at a fixed report and type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexTable {
    pub agent: usize,
    pub report: f64,
    pub theta: f64,
    pub tol: f64,
    /// By flattened chain state `e * |P| + ρ`.
    pub entries: Vec<f64>,
}

impl IndexTable {
    pub fn get(&self, env: &Environment, e: usize, rho: usize) -> Result<f64> {
        let a = env.agent(self.agent)?;
        if e >= a.private().len() || rho >= a.public().len() {
            return Err(Error::domain(format!(
                "state ({e}, {rho}) outside the table"
            )));
        }
        Ok(self.entries[a.arm_state(e, rho)])
    }
}

pub fn build_index_table(
    env: &Environment,
    agent: usize,
    transform: &VirtualTransform,
    theta: f64,
    tol: f64,
) -> Result<IndexTable> {
    let a = env.agent(agent)?;
    let rewards = arm_rewards(env, agent, transform, theta)?;
    let chain = a.chain();
    let entries = (0..chain.len())
        .into_par_iter()
        .map(|s| chain_index(chain, &rewards, env.discount(), s, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexTable {
        agent,
        report: transform.report,
        theta,
        tol,
        entries,
    })
}
