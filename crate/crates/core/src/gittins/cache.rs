use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::index::{arm_rewards, chain_index};
use crate::environments::{Environment, SeparableValue};
use crate::error::{Error, Result};
use crate::virtual_value::VirtualTransform;

/// Tolerance used for the report-free base indices that scaled tables share.
const BASE_TOL: f64 = 1e-12;

/// Index of one state, computed on first use.
#[derive(Debug)]
struct LazyCells {
    rewards: Vec<f64>,
    cells: Vec<OnceLock<f64>>,
}

impl LazyCells {
    fn new(rewards: Vec<f64>) -> Self {
        let cells = (0..rewards.len()).map(|_| OnceLock::new()).collect();
        Self { rewards, cells }
    }

    fn get(&self, env: &Environment, agent: usize, s: usize, tol: f64) -> f64 {
        *self.cells[s].get_or_init(|| {
            let chain = env.agents()[agent].chain();
            chain_index(chain, &self.rewards, env.discount(), s, tol)
                .expect("rewards are finite and tol positive")
        })
    }
}

/// Indices of one agent's arm at a fixed report and value-type.
#[derive(Debug)]
pub struct ArmIndex {
    agent: usize,
    tol: f64,
    kind: ArmIndexKind,
}

#[derive(Debug)]
enum ArmIndexKind {
    /// `ξ = kappa · base + shift` with `kappa > 0`, so the index is the same
    /// affine image of the base index.
    Scaled {
        kappa: f64,
        shift: f64,
        base: Arc<LazyCells>,
    },
    Constant(f64),
    Direct(LazyCells),
}

impl ArmIndex {
    /// Index at flattened chain state `s`.
    pub fn at(&self, env: &Environment, s: usize) -> f64 {
        match &self.kind {
            ArmIndexKind::Scaled { kappa, shift, base } => {
                kappa * base.get(env, self.agent, s, BASE_TOL) + shift
            }
            ArmIndexKind::Constant(c) => *c,
            ArmIndexKind::Direct(cells) => cells.get(env, self.agent, s, self.tol),
        }
    }
}

/// `ξ(s) = kappa · base(s) + shift` when the value has a report-free state
/// profile: multiplicative with constant `C`, or additive with constant scale.
fn affine_split(
    env: &Environment,
    agent: usize,
    transform: &VirtualTransform,
    theta: f64,
) -> Option<(f64, f64)> {
    let beta0 = *transform.beta.first()?;
    if transform.beta.iter().any(|b| *b != beta0) {
        return None;
    }
    match env.agents()[agent].value() {
        SeparableValue::Multiplicative { a, c, .. } => {
            let c0 = *c.first()?;
            if c.iter().any(|x| *x != c0) {
                return None;
            }
            Some((
                transform.alpha * a.eval(theta),
                beta0 - transform.alpha * c0,
            ))
        }
        SeparableValue::Additive { a, scale, .. } => {
            let s0 = *scale.first()?;
            if scale.iter().any(|x| *x != s0) {
                return None;
            }
            Some((
                transform.alpha,
                transform.alpha * s0 * a.eval(theta) + beta0,
            ))
        }
    }
}

fn base_rewards(env: &Environment, agent: usize) -> Vec<f64> {
    let a = &env.agents()[agent];
    let chain = a.chain();
    let b = match a.value() {
        SeparableValue::Multiplicative { b, .. } | SeparableValue::Additive { b, .. } => b,
    };
    (0..chain.len())
        .map(|s| {
            let (e, rho) = chain.decode(s);
            b[e][rho]
        })
        .collect()
}

type Key = (usize, u64, u64, u64, u64);

/// Shared, lazily filled index tables keyed by `(agent, report, type)`.
///
/// Entries are deterministic functions of their key, so the order in which
/// workers fill them does not affect any value.
#[derive(Debug)]
pub struct IndexCache<'a> {
    env: &'a Environment,
    tol: f64,
    bases: Vec<OnceLock<Arc<LazyCells>>>,
    tables: Mutex<HashMap<Key, Arc<ArmIndex>>>,
}

impl<'a> IndexCache<'a> {
    pub fn new(env: &'a Environment, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::invalid("index_tol", "must be positive"));
        }
        Ok(Self {
            env,
            tol,
            bases: (0..env.len()).map(|_| OnceLock::new()).collect(),
            tables: Mutex::new(HashMap::new()),
        })
    }

    pub fn env(&self) -> &'a Environment {
        self.env
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Index table of `agent` under `transform` with value-type `theta`.
    pub fn arm(
        &self,
        agent: usize,
        transform: &VirtualTransform,
        theta: f64,
    ) -> Result<Arc<ArmIndex>> {
        let beta = transform
            .beta
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ b.to_bits()).wrapping_mul(0x0100_0000_01b3)
            });
        let key = (
            agent,
            transform.report.to_bits(),
            transform.alpha.to_bits(),
            beta,
            theta.to_bits(),
        );
        if let Some(hit) = self.tables.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let built = Arc::new(self.build(agent, transform, theta)?);
        let mut tables = self.tables.lock().expect("cache lock");
        Ok(tables.entry(key).or_insert(built).clone())
    }

    /// Same table as [`IndexCache::arm`], built without being stored. Meant
    /// for one-off type values such as quadrature abscissae.
    pub fn arm_uncached(
        &self,
        agent: usize,
        transform: &VirtualTransform,
        theta: f64,
    ) -> Result<ArmIndex> {
        self.build(agent, transform, theta)
    }

    fn build(&self, agent: usize, transform: &VirtualTransform, theta: f64) -> Result<ArmIndex> {
        let kind = match affine_split(self.env, agent, transform, theta) {
            Some((kappa, shift)) if kappa > 0.0 => {
                let base = self.bases[agent]
                    .get_or_init(|| Arc::new(LazyCells::new(base_rewards(self.env, agent))))
                    .clone();
                ArmIndexKind::Scaled { kappa, shift, base }
            }
            Some((0.0, shift)) => ArmIndexKind::Constant(shift),
            _ => ArmIndexKind::Direct(LazyCells::new(arm_rewards(
                self.env, agent, transform, theta,
            )?)),
        };
        Ok(ArmIndex {
            agent,
            tol: self.tol,
            kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{beta_bernoulli, BetaBernoulliParams, BetaPrior};
    use crate::gittins::chain_index;
    use crate::virtual_value::affine_coefficients;

    #[test]
    fn scaled_tables_match_direct_indices() {
        let env = beta_bernoulli(
            &BetaBernoulliParams {
                agents: 1,
                theta_max: 1.0,
                prior: BetaPrior::default(),
                cap: 6,
                types: None,
            },
            0.85,
        )
        .unwrap();
        let cache = IndexCache::new(&env, 1e-10).unwrap();
        let chain = env.agents()[0].chain();
        for (r, theta) in [(0.8, 0.8), (0.9, 0.6), (1.0, 1.0)] {
            let t = affine_coefficients(&env, 0, r).unwrap();
            let arm = cache.arm(0, &t, theta).unwrap();
            let rewards = arm_rewards(&env, 0, &t, theta).unwrap();
            for s in 0..chain.len() {
                let direct = chain_index(chain, &rewards, 0.85, s, 1e-11).unwrap();
                assert!((arm.at(&env, s) - direct).abs() < 1e-10, "{s}");
            }
        }
        // alpha = 0 at r = 0.5 for the uniform: constant zero index
        let t = affine_coefficients(&env, 0, 0.5).unwrap();
        assert_eq!(cache.arm(0, &t, 0.7).unwrap().at(&env, 3), 0.0);
    }

    #[test]
    fn repeated_lookups_share_tables() {
        let env = beta_bernoulli(
            &BetaBernoulliParams {
                agents: 1,
                theta_max: 1.0,
                prior: BetaPrior::default(),
                cap: 3,
                types: None,
            },
            0.5,
        )
        .unwrap();
        let cache = IndexCache::new(&env, 1e-9).unwrap();
        let t = affine_coefficients(&env, 0, 0.9).unwrap();
        let a = cache.arm(0, &t, 0.9).unwrap();
        let b = cache.arm(0, &t, 0.9).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert!(IndexCache::new(&env, 0.0).is_err());
    }
}
