use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{EntryFeeRule, FeeQuadrature, Mechanism};
use crate::error::{Error, Result};
use crate::gittins::{allocate, mean_se, ArmIndex};
use crate::quadrature::{integrate_paths, AdaptiveRule};
use crate::rng::{stream, Purpose};
use crate::virtual_value::{activation_report, pegged_transform, VirtualTransform};

/// Entry fee of one agent at a period-0 report vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeeEstimate {
    pub agent: usize,
    pub report: f64,
    /// `V_i`: expected discounted value at the reports.
    pub value: f64,
    /// Type integral of the allocation-weighted value slope.
    pub integral: f64,
    pub integral_se: f64,
    /// `P_i = V_i - integral`.
    pub target: f64,
    pub target_se: f64,
    /// Expected discounted per-round prices.
    pub offset: f64,
    /// `p_{i,0} = P_i - offset`.
    pub fee: f64,
    pub fee_se: f64,
    /// Node-doubling error of the integral (adaptive rule only).
    pub quadrature_error: f64,
    pub paths: usize,
    /// Bound on the truncated tail of every discounted sum.
    pub tail_bound: f64,
}

impl FeeEstimate {
    fn zero(agent: usize, report: f64, paths: usize) -> Self {
        Self {
            agent,
            report,
            value: 0.0,
            integral: 0.0,
            integral_se: 0.0,
            target: 0.0,
            target_se: 0.0,
            offset: 0.0,
            fee: 0.0,
            fee_se: 0.0,
            quadrature_error: 0.0,
            paths,
            tail_bound: 0.0,
        }
    }
}

/// Index-policy arms of one counterfactual: agent `i` at report and type `z`,
/// the others at their reports.
struct Scenario {
    transforms: Vec<Option<VirtualTransform>>,
    indices: Vec<Option<Arc<ArmIndex>>>,
    thetas: Vec<f64>,
}

impl Mechanism<'_> {
    fn scenario(&self, reports: &[f64], agent: usize, z: f64, cached: bool) -> Result<Scenario> {
        let mut thetas = reports.to_vec();
        thetas[agent] = z;
        let mut transforms = Vec::with_capacity(reports.len());
        let mut indices = Vec::with_capacity(reports.len());
        for (j, &r) in thetas.iter().enumerate() {
            let t = pegged_transform(self.env, j, r)?;
            let idx = match &t {
                None => None,
                Some(t) if cached || j != agent => Some(self.index.arm(j, t, r)?),
                Some(t) => Some(Arc::new(self.index.arm_uncached(j, t, r)?)),
            };
            transforms.push(t);
            indices.push(idx);
        }
        Ok(Scenario {
            transforms,
            indices,
            thetas,
        })
    }

    /// Chain states each agent passes through on its own fee stream of
    /// `path`: entry `n` is the state after `n` allocations. Transitions do
    /// not depend on types, so one set of trajectories serves every `z`.
    fn trajectories(&self, seed: u64, path: usize) -> Result<Vec<Vec<usize>>> {
        let env = self.env;
        (0..env.len())
            .map(|j| {
                let agent = &env.agents()[j];
                let mut rng = stream(seed, Purpose::EntryFee, &[path as u64, j as u64]);
                let mut state = agent.initial_state(0.0);
                let mut out = Vec::with_capacity(self.horizon + 1);
                out.push(agent.arm_state(state.e, state.rho));
                for _ in 0..self.horizon {
                    state = env.step_experience(j, &state, &mut rng)?;
                    out.push(agent.arm_state(state.e, state.rho));
                }
                Ok(out)
            })
            .collect()
    }

    /// Run the index policy along precomputed trajectories.
    /// `visit(weight, winner, states)` sees every allocated round before the
    /// winner moves; `states` are flattened chain states.
    fn fee_path(
        &self,
        sc: &Scenario,
        traj: &[Vec<usize>],
        mut visit: impl FnMut(f64, usize, &[usize]) -> Result<()>,
    ) -> Result<()> {
        let env = self.env;
        let k = env.len();
        let mut count = vec![0usize; k];
        let mut states: Vec<usize> = traj.iter().map(|t| t[0]).collect();
        let mut idx = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            if let Some(a) = &sc.indices[j] {
                idx[j] = a.at(env, states[j]);
            }
        }
        let mut weight = 1.0;
        for _ in 0..self.horizon {
            let Some(w) = allocate(&idx) else { break };
            visit(weight, w, &states)?;
            count[w] += 1;
            states[w] = traj[w][count[w]];
            if let Some(a) = &sc.indices[w] {
                idx[w] = a.at(env, states[w]);
            }
            weight *= env.discount();
        }
        Ok(())
    }

    /// `Σ_t δ^{t-1} q_{i,t} ∂v_i/∂θ` along one path with agent `i` at `z`.
    fn slope_sum(&self, sc: &Scenario, agent: usize, traj: &[Vec<usize>]) -> Result<f64> {
        let a = &self.env.agents()[agent];
        let z = sc.thetas[agent];
        let mut total = 0.0;
        self.fee_path(sc, traj, |w8, win, states| {
            if win == agent {
                let (e, rho) = a.chain().decode(states[agent]);
                total += w8 * a.value().theta_derivative(z, e, rho);
            }
            Ok(())
        })?;
        Ok(total)
    }

    fn slope_sums(
        &self,
        reports: &[f64],
        agent: usize,
        z: f64,
        trajs: &[Vec<Vec<usize>>],
    ) -> Result<Vec<f64>> {
        let sc = self.scenario(reports, agent, z, false)?;
        if sc.transforms[agent].is_none() {
            return Ok(vec![0.0; trajs.len()]);
        }
        trajs
            .par_iter()
            .map(|t| self.slope_sum(&sc, agent, t))
            .collect()
    }

    /// `(value, price)` sums along one truthful path at the reports.
    fn value_and_prices(
        &self,
        sc: &Scenario,
        agent: usize,
        traj: &[Vec<usize>],
    ) -> Result<(f64, f64)> {
        let env = self.env;
        let a = &env.agents()[agent];
        let r = sc.thetas[agent];
        let (mut v, mut pay) = (0.0, 0.0);
        self.fee_path(sc, traj, |w8, win, states| {
            if win == agent {
                let (e, rho) = a.chain().decode(states[agent]);
                v += w8 * a.value().eval(r, e, rho);
                let exp: Vec<(usize, usize)> = (0..env.len())
                    .map(|j| env.agents()[j].chain().decode(states[j]))
                    .collect();
                pay += w8
                    * self
                        .per_round_price(&sc.transforms, &sc.thetas, &exp, agent)?
                        .price;
            }
            Ok(())
        })?;
        Ok((v, pay))
    }

    /// Entry fee `p_{i,0}` at period-0 reports, with common random numbers
    /// across the type integral, the value term and the price offset.
    pub fn entry_fee(&self, reports: &[f64], agent: usize, seed: u64) -> Result<Arc<FeeEstimate>> {
        let env = self.env;
        let a = env.agent(agent)?;
        if reports.len() != env.len() {
            return Err(Error::domain("need one report per agent"));
        }
        for (j, &r) in reports.iter().enumerate() {
            let upper = env.agents()[j].theta_max();
            if !(0.0..=upper).contains(&r) {
                return Err(Error::domain(format!(
                    "report {r} of agent {j} outside [0, {upper}]"
                )));
            }
        }
        let paths = self.settings.fee.paths;
        let report = reports[agent];
        if self.settings.fee.rule == EntryFeeRule::None {
            return Ok(Arc::new(FeeEstimate::zero(agent, report, paths)));
        }
        let key = (
            seed,
            agent,
            reports.iter().map(|r| r.to_bits()).collect::<Vec<_>>(),
        );
        if let Some(hit) = self.fees.lock().expect("fee lock").get(&key) {
            return Ok(hit.clone());
        }

        let trajs = (0..paths)
            .into_par_iter()
            .map(|p| self.trajectories(seed, p))
            .collect::<Result<Vec<_>>>()?;
        let (integrals, quadrature_error) = match self.settings.fee.quadrature {
            FeeQuadrature::Adaptive {
                nodes,
                tolerance,
                max_panels,
            } => {
                let rule = AdaptiveRule {
                    nodes,
                    tolerance,
                    max_panels,
                };
                // panels must not straddle a kink of the type distribution
                let mut cuts: Vec<f64> = a
                    .types()
                    .breakpoints()
                    .into_iter()
                    .filter(|b| *b > 0.0 && *b < report)
                    .collect();
                if let Some(b) = activation_report(env, agent, report)? {
                    cuts.push(b);
                }
                cuts.push(0.0);
                cuts.push(report);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let mut per_path = vec![0.0; paths];
                let mut error = 0.0;
                let failure: RefCell<Option<Error>> = RefCell::new(None);
                for w in cuts.windows(2) {
                    let part = integrate_paths(w[0], w[1], paths, rule, |z| {
                        match self.slope_sums(reports, agent, z, &trajs) {
                            Ok(v) => v,
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                                vec![0.0; paths]
                            }
                        }
                    });
                    for (slot, v) in per_path.iter_mut().zip(&part.per_path) {
                        *slot += v;
                    }
                    error += part.error;
                }
                if let Some(e) = failure.into_inner() {
                    return Err(e);
                }
                (per_path, error)
            }
            FeeQuadrature::Stratified { strata } => {
                let width = report / strata as f64;
                let per_path = trajs
                    .par_iter()
                    .enumerate()
                    .map(|(p, traj)| {
                        let mut u = stream(seed, Purpose::Quadrature, &[p as u64, agent as u64]);
                        let mut acc = 0.0;
                        for k in 0..strata {
                            let z = (k as f64 + u.random::<f64>()) * width;
                            let sc = self.scenario(reports, agent, z, false)?;
                            if sc.transforms[agent].is_some() {
                                acc += width * self.slope_sum(&sc, agent, traj)?;
                            }
                        }
                        Ok(acc)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (per_path, 0.0)
            }
        };

        let sc = self.scenario(reports, agent, report, true)?;
        let vp: Vec<(f64, f64)> = if sc.transforms[agent].is_none() {
            vec![(0.0, 0.0); paths]
        } else {
            trajs
                .par_iter()
                .map(|t| self.value_and_prices(&sc, agent, t))
                .collect::<Result<_>>()?
        };
        let targets: Vec<f64> = vp.iter().zip(&integrals).map(|((v, _), i)| v - i).collect();
        let fees: Vec<f64> = vp
            .iter()
            .zip(&targets)
            .map(|((_, pay), t)| t - pay)
            .collect();
        let (value, _) = mean_se(&vp.iter().map(|x| x.0).collect::<Vec<_>>());
        let (offset, _) = mean_se(&vp.iter().map(|x| x.1).collect::<Vec<_>>());
        let (integral, integral_se) = mean_se(&integrals);
        let (target, target_se) = mean_se(&targets);
        let (fee, fee_se) = mean_se(&fees);
        let est = Arc::new(FeeEstimate {
            agent,
            report,
            value,
            integral,
            integral_se,
            target,
            target_se,
            offset,
            fee,
            fee_se,
            quadrature_error,
            paths,
            tail_bound: self.tail_bound(),
        });
        let mut fees = self.fees.lock().expect("fee lock");
        Ok(fees.entry(key).or_insert(est).clone())
    }
}
