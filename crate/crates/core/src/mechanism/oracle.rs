use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::environments::{ArmState, Environment};
use crate::error::{Error, Result};
use crate::gittins::{
    arm_rewards, mean_se, rollout_path, ArmProblem, IndexCache, JointDp, RolloutArm,
    WelfareEstimate, WelfareMethod,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::virtual_value::VirtualTransform;

/// One arm of a welfare query: pegged coefficients, value-type and the
/// (reported) state.
#[derive(Clone, Copy, Debug)]
pub struct ArmSpec<'t> {
    pub agent: usize,
    pub transform: &'t VirtualTransform,
    pub theta: f64,
    pub e: usize,
    pub rho: usize,
}

fn key(arms: &[ArmSpec<'_>]) -> Vec<u64> {
    arms.iter()
        .flat_map(|a| {
            [
                a.agent as u64,
                a.transform.report.to_bits(),
                a.transform.alpha.to_bits(),
                a.theta.to_bits(),
            ]
        })
        .collect()
}

/// Weighted-welfare evaluator with memoised joint programmes.
#[derive(Debug)]
pub struct WelfareOracle {
    cap: usize,
    paths: usize,
    horizon: usize,
    seed: u64,
    dps: Mutex<HashMap<Vec<u64>, Arc<JointDp>>>,
}

impl WelfareOracle {
    pub fn new(cap: usize, paths: usize, horizon: usize, seed: u64) -> Self {
        Self {
            cap,
            paths,
            horizon,
            seed,
            dps: Mutex::new(HashMap::new()),
        }
    }

    /// Exact joint programme containing the arms' current states.
    pub fn dp(
        &self,
        env: &Environment,
        arms: &[ArmSpec<'_>],
    ) -> Result<(Arc<JointDp>, Vec<usize>)> {
        let k = key(arms);
        let states = arms
            .iter()
            .map(|a| Ok(env.agent(a.agent)?.arm_state(a.e, a.rho)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(dp) = self.dps.lock().expect("dp lock").get(&k) {
            if dp.encode(&states).is_ok() {
                return Ok((dp.clone(), states));
            }
        }
        let problems = arms
            .iter()
            .zip(&states)
            .map(|(a, &s)| {
                Ok(ArmProblem {
                    chain: env.agent(a.agent)?.chain(),
                    rewards: arm_rewards(env, a.agent, a.transform, a.theta)?,
                    start: s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dp = Arc::new(JointDp::new(problems, env.discount(), self.cap)?);
        self.dps.lock().expect("dp lock").insert(k, dp.clone());
        Ok((dp, states))
    }

    /// `W` of the given arms plus the 0-arm: exact when the joint space fits
    /// under the cap, index-policy rollouts otherwise.
    pub fn welfare(
        &self,
        env: &Environment,
        index: &IndexCache<'_>,
        arms: &[ArmSpec<'_>],
    ) -> Result<WelfareEstimate> {
        if arms.is_empty() {
            return Ok(WelfareEstimate::exact(0.0));
        }
        match self.dp(env, arms) {
            Ok((dp, states)) => Ok(WelfareEstimate::exact(dp.optimal_at(&states)?)),
            Err(Error::TooLarge { .. }) => self.rollout(env, index, arms),
            Err(e) => Err(e),
        }
    }

    fn rollout(
        &self,
        env: &Environment,
        index: &IndexCache<'_>,
        arms: &[ArmSpec<'_>],
    ) -> Result<WelfareEstimate> {
        let mut ids = key(arms);
        ids.extend(arms.iter().flat_map(|a| [a.e as u64, a.rho as u64]));
        let seed = derive_seed(self.seed, Purpose::Welfare, &ids);
        let mut xi_max: f64 = 0.0;
        let roll = arms
            .iter()
            .map(|a| {
                let rewards = arm_rewards(env, a.agent, a.transform, a.theta)?;
                xi_max = rewards.iter().fold(xi_max, |m, r| m.max(r.abs()));
                Ok(RolloutArm {
                    agent: a.agent,
                    index: index.arm(a.agent, a.transform, a.theta)?,
                    rewards: Arc::new(rewards),
                    state: ArmState {
                        theta: a.theta,
                        e: a.e,
                        rho: a.rho,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..self.paths.max(2))
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(seed, Purpose::Welfare, &[p as u64]);
                rollout_path(env, &roll, self.horizon, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_se(&values);
        let d = env.discount();
        let tail = d.powi(self.horizon as i32) * roll.len() as f64 * xi_max / (1.0 - d);
        Ok(WelfareEstimate {
            mean,
            std_error: se + tail,
            method: WelfareMethod::Rollout,
        })
    }
}
