use serde::{Deserialize, Serialize};

use super::allocate;
use super::cache::{ArmIndex, IndexCache};
use super::index::{arm_rewards, chain_index, reach};
use crate::environments::{ArmChain, ArmState, Environment};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::virtual_value::{pegged_transform, VirtualTransform};
use std::sync::Arc;

/// Convergence target of joint value iteration on cyclic arms.
pub const DP_TOL: f64 = 1e-12;

/// One arm of a joint problem: its chain, rewards per chain state and
/// current state.
#[derive(Clone, Debug)]
pub struct ArmProblem<'c> {
    pub chain: &'c ArmChain,
    pub rewards: Vec<f64>,
    pub start: usize,
}

#[derive(Clone, Debug)]
struct LocalArm {
    global: Vec<usize>,
    local_of: Vec<usize>,
    /// Successors in local numbering, self-loop split off.
    moves: Vec<Vec<(usize, f64)>>,
    stay: Vec<f64>,
    rewards: Vec<f64>,
}

/// Exact dynamic programme over the product of the arms' reachable states,
/// with a retirement (0-arm) option worth 0.
#[derive(Clone, Debug)]
pub struct JointDp {
    discount: f64,
    arms: Vec<LocalArm>,
    strides: Vec<usize>,
    size: usize,
    acyclic: bool,
    optimal: Vec<f64>,
}

const ABSENT: usize = usize::MAX;

impl JointDp {
    /// Refuses when the joint state count exceeds `cap`.
    pub fn new(arms: Vec<ArmProblem<'_>>, discount: f64, cap: usize) -> Result<Self> {
        let mut size: usize = 1;
        let mut acyclic = true;
        let mut local = Vec::with_capacity(arms.len());
        for arm in &arms {
            if arm.rewards.len() != arm.chain.len() || arm.start >= arm.chain.len() {
                return Err(Error::domain(
                    "arm rewards or start state do not match the chain",
                ));
            }
            if let Some(bad) = arm.rewards.iter().find(|x| !x.is_finite()) {
                return Err(Error::domain(format!("reward {bad} is not finite")));
            }
            let r = reach(arm.chain, arm.start);
            acyclic &= r.acyclic;
            size = size.saturating_mul(r.states.len());
            if size > cap {
                return Err(Error::TooLarge { size, cap });
            }
            let mut local_of = vec![ABSENT; arm.chain.len()];
            for (k, &s) in r.states.iter().enumerate() {
                local_of[s] = k;
            }
            let mut moves = Vec::with_capacity(r.states.len());
            let mut stay = Vec::with_capacity(r.states.len());
            for &s in &r.states {
                let mut m = Vec::new();
                let mut p_stay = 0.0;
                for &(t, p) in arm.chain.row(s) {
                    if t == s {
                        p_stay += p;
                    } else {
                        m.push((local_of[t], p));
                    }
                }
                moves.push(m);
                stay.push(p_stay);
            }
            let rewards = r.states.iter().map(|&s| arm.rewards[s]).collect();
            local.push(LocalArm {
                global: r.states,
                local_of,
                moves,
                stay,
                rewards,
            });
        }
        let mut strides = vec![1usize; local.len()];
        for k in (0..local.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * local[k + 1].global.len();
        }
        let mut dp = Self {
            discount,
            arms: local,
            strides,
            size,
            acyclic,
            optimal: Vec::new(),
        };
        dp.optimal = dp.solve_optimal();
        Ok(dp)
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn arms(&self) -> usize {
        self.arms.len()
    }

    fn local(&self, x: usize, arm: usize) -> usize {
        (x / self.strides[arm]) % self.arms[arm].global.len()
    }

    /// Chain states of every arm at joint state `x`.
    pub fn decode(&self, x: usize) -> Vec<usize> {
        (0..self.arms.len())
            .map(|i| self.arms[i].global[self.local(x, i)])
            .collect()
    }

    /// Joint state of the given chain states, if it lies in the reachable
    /// product.
    pub fn encode(&self, states: &[usize]) -> Result<usize> {
        if states.len() != self.arms.len() {
            return Err(Error::domain("wrong number of arm states"));
        }
        let mut x = 0;
        for (i, &s) in states.iter().enumerate() {
            let l = self.arms[i].local_of.get(s).copied().unwrap_or(ABSENT);
            if l == ABSENT {
                return Err(Error::domain(format!(
                    "state {s} of arm {i} is not reachable"
                )));
            }
            x += l * self.strides[i];
        }
        Ok(x)
    }

    /// Reward, `Σ_{moves} p W(x')` and self-loop probability of `arm` at `x`.
    fn continuation(&self, w: &[f64], x: usize, arm: usize) -> (f64, f64, f64) {
        let a = &self.arms[arm];
        let l = self.local(x, arm);
        let base = x - l * self.strides[arm];
        let rest: f64 = a.moves[l]
            .iter()
            .map(|&(t, p)| p * w[base + t * self.strides[arm]])
            .sum();
        let stay = a.stay[l];
        (a.rewards[l], rest, stay)
    }

    /// Every arm competes with retiring at 0.
    fn solve_optimal(&self) -> Vec<f64> {
        self.solve_with(|x, w, this| {
            let mut best: f64 = 0.0;
            for i in 0..this.arms.len() {
                best = best.max(this.arm_value(w, x, i));
            }
            best
        })
    }

    fn arm_value(&self, w: &[f64], x: usize, arm: usize) -> f64 {
        let (r, rest, stay) = self.continuation(w, x, arm);
        if self.acyclic {
            (r + self.discount * rest) / (1.0 - self.discount * stay)
        } else {
            r + self.discount * (rest + stay * w[x])
        }
    }

    fn solve_with(&self, update: impl Fn(usize, &[f64], &Self) -> f64) -> Vec<f64> {
        let mut w = vec![0.0; self.size];
        if self.acyclic {
            for x in (0..self.size).rev() {
                w[x] = update(x, &w, self);
            }
            return w;
        }
        let stop = DP_TOL * (1.0 - self.discount) / self.discount;
        loop {
            let mut change: f64 = 0.0;
            for x in 0..self.size {
                let v = update(x, &w, self);
                change = change.max((v - w[x]).abs());
                w[x] = v;
            }
            if change <= stop {
                return w;
            }
        }
    }

    /// Optimal values over all policies, by joint state.
    pub fn optimal(&self) -> &[f64] {
        &self.optimal
    }

    pub fn optimal_at(&self, states: &[usize]) -> Result<f64> {
        Ok(self.optimal[self.encode(states)?])
    }

    /// Values of a stationary policy; `policy` maps chain states to the arm
    /// played, `None` for the 0-arm.
    pub fn evaluate(&self, policy: impl Fn(&[usize]) -> Option<usize>) -> Vec<f64> {
        let choice: Vec<Option<usize>> = (0..self.size).map(|x| policy(&self.decode(x))).collect();
        self.solve_with(|x, w, this| match choice[x] {
            Some(i) => this.arm_value(w, x, i),
            None => 0.0,
        })
    }

    /// Values of the index policy, with indices from `chain_index` at `tol`.
    pub fn index_policy_values(&self, tol: f64) -> Result<Vec<f64>> {
        let indices = self.local_indices(tol)?;
        Ok(self.evaluate_local(&indices))
    }

    fn local_indices(&self, tol: f64) -> Result<Vec<Vec<f64>>> {
        self.arms
            .iter()
            .map(|a| {
                // rebuild a chain view over local states for the index solver
                let rows = a
                    .moves
                    .iter()
                    .zip(&a.stay)
                    .enumerate()
                    .map(|(l, (m, &st))| {
                        let mut row = m.clone();
                        if st > 0.0 {
                            row.push((l, st));
                        }
                        row.sort_by_key(|&(t, _)| t);
                        row
                    })
                    .collect();
                let chain = ArmChain::from_rows(1, rows);
                (0..a.global.len())
                    .map(|l| chain_index(&chain, &a.rewards, self.discount, l, tol))
                    .collect()
            })
            .collect()
    }

    fn evaluate_local(&self, indices: &[Vec<f64>]) -> Vec<f64> {
        let choice: Vec<Option<usize>> = (0..self.size)
            .map(|x| {
                let idx: Vec<f64> = (0..self.arms.len())
                    .map(|i| indices[i][self.local(x, i)])
                    .collect();
                allocate(&idx)
            })
            .collect();
        self.solve_with(|x, w, this| match choice[x] {
            Some(i) => this.arm_value(w, x, i),
            None => 0.0,
        })
    }

    /// `E[W(x')]` after playing `arm` at `states`, for any value vector.
    pub fn expected_next(&self, values: &[f64], states: &[usize], arm: usize) -> Result<f64> {
        let x = self.encode(states)?;
        let (_, rest, stay) = self.continuation(values, x, arm);
        Ok(rest + stay * values[x])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WelfareMethod {
    ExactDp,
    Rollout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WelfareEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub method: WelfareMethod,
}

impl WelfareEstimate {
    pub fn exact(mean: f64) -> Self {
        Self {
            mean,
            std_error: 0.0,
            method: WelfareMethod::ExactDp,
        }
    }
}

/// How to evaluate weighted welfare.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WelfareMode {
    ExactDp {
        cap: usize,
    },
    Rollout {
        paths: usize,
        horizon: usize,
        seed: u64,
    },
    /// Exact when the joint space fits under `cap`, rollouts otherwise.
    Auto {
        cap: usize,
        paths: usize,
        horizon: usize,
        seed: u64,
    },
}

/// One included arm for a welfare rollout.
#[derive(Clone, Debug)]
pub struct RolloutArm {
    pub agent: usize,
    pub index: Arc<ArmIndex>,
    pub rewards: Arc<Vec<f64>>,
    pub state: ArmState,
}

/// Discounted `ξ`-reward of one index-policy path of `horizon` rounds.
pub fn rollout_path(
    env: &Environment,
    arms: &[RolloutArm],
    horizon: usize,
    rng: &mut crate::rng::Stream,
) -> Result<f64> {
    let mut states: Vec<ArmState> = arms.iter().map(|a| a.state).collect();
    let mut total = 0.0;
    let mut weight = 1.0;
    let mut idx = vec![0.0; arms.len()];
    for _ in 0..horizon {
        for (k, a) in arms.iter().enumerate() {
            let s = env.agents()[a.agent].arm_state(states[k].e, states[k].rho);
            idx[k] = a.index.at(env, s);
        }
        let Some(w) = allocate(&idx) else {
            // frozen arms: the 0-arm keeps winning
            break;
        };
        let a = &arms[w];
        let s = env.agents()[a.agent].arm_state(states[w].e, states[w].rho);
        total += weight * a.rewards[s];
        states[w] = env.step_experience(a.agent, &states[w], rng)?;
        weight *= env.discount();
    }
    Ok(total)
}

/// Weighted welfare `W^r` of the included agents plus the 0-arm, starting
/// from `(θ, e, ρ)` with period-0 reports `reports`. Dormant agents are left
/// out; `exclude` drops one more.
#[allow(clippy::too_many_arguments)]
pub fn weighted_welfare(
    env: &Environment,
    reports: &[f64],
    thetas: &[f64],
    experience: &[(usize, usize)],
    exclude: Option<usize>,
    mode: WelfareMode,
    tol: f64,
) -> Result<WelfareEstimate> {
    let k = env.len();
    if reports.len() != k || thetas.len() != k || experience.len() != k {
        return Err(Error::domain("need one report, type and state per agent"));
    }
    let mut included: Vec<(usize, VirtualTransform)> = Vec::new();
    for i in 0..k {
        if Some(i) == exclude {
            continue;
        }
        if let Some(t) = pegged_transform(env, i, reports[i])? {
            included.push((i, t));
        }
    }
    let exact = |cap: usize| -> Result<WelfareEstimate> {
        let arms = included
            .iter()
            .map(|(i, t)| {
                let a = env.agent(*i)?;
                Ok(ArmProblem {
                    chain: a.chain(),
                    rewards: arm_rewards(env, *i, t, thetas[*i])?,
                    start: a.arm_state(experience[*i].0, experience[*i].1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let starts: Vec<usize> = arms.iter().map(|a| a.start).collect();
        let dp = JointDp::new(arms, env.discount(), cap)?;
        Ok(WelfareEstimate::exact(dp.optimal_at(&starts)?))
    };
    let rollout = |paths: usize, horizon: usize, seed: u64| -> Result<WelfareEstimate> {
        if paths < 2 {
            return Err(Error::invalid("paths", "need at least two rollout paths"));
        }
        let cache = IndexCache::new(env, tol)?;
        let mut xi_max: f64 = 0.0;
        let arms = included
            .iter()
            .map(|(i, t)| {
                let rewards = arm_rewards(env, *i, t, thetas[*i])?;
                xi_max = rewards.iter().fold(xi_max, |m, r| m.max(r.abs()));
                Ok(RolloutArm {
                    agent: *i,
                    index: cache.arm(*i, t, thetas[*i])?,
                    rewards: Arc::new(rewards),
                    state: ArmState {
                        theta: thetas[*i],
                        e: experience[*i].0,
                        rho: experience[*i].1,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        use rayon::prelude::*;
        let values = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(seed, Purpose::Welfare, &[p as u64]);
                rollout_path(env, &arms, horizon, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_se(&values);
        let tail = env.discount().powi(horizon as i32) * arms.len() as f64 * xi_max
            / (1.0 - env.discount());
        Ok(WelfareEstimate {
            mean,
            std_error: se + tail,
            method: WelfareMethod::Rollout,
        })
    };
    match mode {
        WelfareMode::ExactDp { cap } => exact(cap),
        WelfareMode::Rollout {
            paths,
            horizon,
            seed,
        } => rollout(paths, horizon, seed),
        WelfareMode::Auto {
            cap,
            paths,
            horizon,
            seed,
        } => match exact(cap) {
            Err(Error::TooLarge { .. }) => rollout(paths, horizon, seed),
            other => other,
        },
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::Row;

    fn constant(x: f64) -> (ArmChain, Vec<f64>) {
        (ArmChain::from_rows(1, vec![vec![(0, 1.0)]]), vec![x])
    }

    #[test]
    fn constant_arms() {
        let (c1, r1) = constant(0.6);
        let (c2, r2) = constant(0.2);
        let dp = JointDp::new(
            vec![
                ArmProblem {
                    chain: &c1,
                    rewards: r1.clone(),
                    start: 0,
                },
                ArmProblem {
                    chain: &c2,
                    rewards: r2.clone(),
                    start: 0,
                },
            ],
            0.5,
            100,
        )
        .unwrap();
        assert!((dp.optimal_at(&[0, 0]).unwrap() - 1.2).abs() < 1e-15);
        let only = JointDp::new(
            vec![ArmProblem {
                chain: &c2,
                rewards: r2,
                start: 0,
            }],
            0.5,
            100,
        )
        .unwrap();
        assert!((only.optimal_at(&[0]).unwrap() - 0.4).abs() < 1e-15);
        let neg = JointDp::new(
            vec![ArmProblem {
                chain: &c1,
                rewards: vec![-0.3],
                start: 0,
            }],
            0.5,
            100,
        )
        .unwrap();
        assert_eq!(neg.optimal_at(&[0]).unwrap(), 0.0);
        let none = JointDp::new(vec![], 0.5, 100).unwrap();
        assert_eq!(none.optimal(), &[0.0]);
    }

    #[test]
    fn policies_are_evaluated_exactly() {
        let (c1, r1) = constant(0.6);
        let (c2, r2) = constant(0.2);
        let dp = JointDp::new(
            vec![
                ArmProblem {
                    chain: &c1,
                    rewards: r1,
                    start: 0,
                },
                ArmProblem {
                    chain: &c2,
                    rewards: r2,
                    start: 0,
                },
            ],
            0.5,
            100,
        )
        .unwrap();
        assert_eq!(dp.evaluate(|_| None)[0], 0.0);
        assert!((dp.evaluate(|_| Some(0))[0] - 1.2).abs() < 1e-15);
        assert!((dp.evaluate(|_| Some(1))[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cyclic_arms_use_value_iteration() {
        let rows: Vec<Row> = vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]];
        let c = ArmChain::from_rows(1, rows);
        let dp = JointDp::new(
            vec![ArmProblem {
                chain: &c,
                rewards: vec![1.0, -0.5],
                start: 0,
            }],
            0.9,
            100,
        )
        .unwrap();
        let idx = dp.index_policy_values(1e-12).unwrap();
        for (a, b) in idx.iter().zip(dp.optimal()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let rows: Vec<Row> = (0..10).map(|s| vec![((s + 1).min(9), 1.0)]).collect();
        let c = ArmChain::from_rows(1, rows);
        let arm = || ArmProblem {
            chain: &c,
            rewards: vec![0.1; 10],
            start: 0,
        };
        assert!(matches!(
            JointDp::new(vec![arm(), arm(), arm()], 0.5, 999),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn mean_and_error() {
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
