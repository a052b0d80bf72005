//! The virtual index mechanism: period-0 reports and entry fees, index
//! allocation every round, externality prices, and agent strategies.

mod episode;
mod fee;
mod oracle;
mod strategy;
mod transcript;

pub use fee::FeeEstimate;
pub use oracle::{ArmSpec, WelfareOracle};
pub use strategy::{Report, Strategy};
pub use transcript::{RoundRecord, Transcript};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::gittins::{IndexCache, WelfareEstimate};
use crate::quadrature::AdaptiveRule;
use crate::virtual_value::{pegged_transform, VirtualTransform};

/// Whether agents pay the period-0 entry fee.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryFeeRule {
    #[default]
    VirtualIndex,
    /// No entry fee; per-round prices only.
    None,
}

/// Which private states the mechanism conditions on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    #[default]
    Reported,
    /// The seller observes true private states.
    Complete,
}

/// How the type integral inside the entry fee is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeeQuadrature {
    /// Globally adaptive composite Gauss-Legendre.
    Adaptive {
        nodes: usize,
        tolerance: f64,
        max_panels: usize,
    },
    /// One uniform abscissa per stratum and path; unbiased.
    Stratified { strata: usize },
}

impl Default for FeeQuadrature {
    fn default() -> Self {
        let r = AdaptiveRule::default();
        FeeQuadrature::Adaptive {
            nodes: r.nodes,
            tolerance: r.tolerance,
            max_panels: r.max_panels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeSettings {
    pub rule: EntryFeeRule,
    /// Rollout paths behind each fee.
    pub paths: usize,
    pub quadrature: FeeQuadrature,
    /// Seed of the fee rollouts; the episode seed when absent.
    pub seed: Option<u64>,
}

impl Default for FeeSettings {
    fn default() -> Self {
        Self {
            rule: EntryFeeRule::VirtualIndex,
            paths: 2000,
            quadrature: FeeQuadrature::default(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSettings {
    /// Rounds per episode; derived from `tail_eps` when absent.
    pub horizon: Option<usize>,
    pub tail_eps: f64,
    pub index_tol: f64,
    /// Largest joint state space solved exactly for `W`.
    pub welfare_cap: usize,
    /// Rollout paths for `W` beyond the cap.
    pub welfare_paths: usize,
    pub welfare_seed: u64,
    pub fee: FeeSettings,
    pub monitoring: Monitoring,
}

impl Default for MechanismSettings {
    fn default() -> Self {
        Self {
            horizon: None,
            tail_eps: 1e-4,
            index_tol: 1e-10,
            welfare_cap: 10_000,
            welfare_paths: 2000,
            welfare_seed: 0,
            fee: FeeSettings::default(),
            monitoring: Monitoring::Reported,
        }
    }
}

impl MechanismSettings {
    pub fn check(&self) -> Result<()> {
        let positive = [("tail_eps", self.tail_eps), ("index_tol", self.index_tol)];
        for (name, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {x}")));
            }
        }
        if self.horizon == Some(0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if self.fee.paths == 0 {
            return Err(Error::invalid("fee.paths", "must be positive"));
        }
        match self.fee.quadrature {
            FeeQuadrature::Adaptive {
                nodes,
                tolerance,
                max_panels,
            } => {
                if nodes == 0 || max_panels == 0 || !(tolerance.is_finite() && tolerance > 0.0) {
                    return Err(Error::invalid(
                        "fee.quadrature",
                        "nodes, panels and tolerance must be positive",
                    ));
                }
            }
            FeeQuadrature::Stratified { strata: 0 } => {
                return Err(Error::invalid("fee.quadrature.strata", "must be positive"));
            }
            FeeQuadrature::Stratified { .. } => {}
        }
        Ok(())
    }
}

/// Per-round price with the welfare estimate behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PriceQuote {
    pub price: f64,
    pub others_welfare: WelfareEstimate,
}

type FeeKey = (u64, usize, Vec<u64>);

/// A configured mechanism over one environment, holding the caches shared
/// by its episodes.
#[derive(Debug)]
pub struct Mechanism<'a> {
    env: &'a Environment,
    settings: MechanismSettings,
    horizon: usize,
    index: IndexCache<'a>,
    welfare: WelfareOracle,
    fees: Mutex<HashMap<FeeKey, Arc<FeeEstimate>>>,
}

impl<'a> Mechanism<'a> {
    pub fn new(env: &'a Environment, settings: MechanismSettings) -> Result<Self> {
        settings.check()?;
        let horizon = settings
            .horizon
            .unwrap_or_else(|| env.horizon_for(settings.tail_eps));
        Ok(Self {
            env,
            index: IndexCache::new(env, settings.index_tol)?,
            welfare: WelfareOracle::new(
                settings.welfare_cap,
                settings.welfare_paths,
                horizon,
                settings.welfare_seed,
            ),
            settings,
            horizon,
            fees: Mutex::new(HashMap::new()),
        })
    }

    pub fn env(&self) -> &'a Environment {
        self.env
    }

    pub fn settings(&self) -> &MechanismSettings {
        &self.settings
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `δ^T · k · V_max / (1 - δ)`.
    pub fn tail_bound(&self) -> f64 {
        self.env.tail_bound(self.horizon)
    }

    pub fn index(&self) -> &IndexCache<'a> {
        &self.index
    }

    pub fn welfare_oracle(&self) -> &WelfareOracle {
        &self.welfare
    }

    /// Coefficients pegged to period-0 reports; `None` marks a dormant agent.
    pub fn transforms(&self, reports: &[f64]) -> Result<Vec<Option<VirtualTransform>>> {
        if reports.len() != self.env.len() {
            return Err(Error::domain("need one report per agent"));
        }
        reports
            .iter()
            .enumerate()
            .map(|(i, &r)| pegged_transform(self.env, i, r))
            .collect()
    }

    /// `[(1 - δ) W_{-i} - β_i(ρ_i)] / α_i` for winner `i`, with `W_{-i}` at the
    /// reported states of the other active agents.
    pub fn per_round_price(
        &self,
        transforms: &[Option<VirtualTransform>],
        theta_hat: &[f64],
        experience: &[(usize, usize)],
        winner: usize,
    ) -> Result<PriceQuote> {
        let t = transforms
            .get(winner)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Invariant(format!("dormant agent {winner} cannot win")))?;
        if !(t.alpha > 0.0) {
            return Err(Error::Invariant(format!(
                "winner {winner} has alpha {}",
                t.alpha
            )));
        }
        let others = self.arm_specs(transforms, theta_hat, experience, Some(winner));
        let w = self.welfare.welfare(self.env, &self.index, &others)?;
        let rho = experience[winner].1;
        Ok(PriceQuote {
            price: ((1.0 - self.env.discount()) * w.mean - t.beta[rho]) / t.alpha,
            others_welfare: w,
        })
    }

    pub(crate) fn arm_specs<'t>(
        &self,
        transforms: &'t [Option<VirtualTransform>],
        theta_hat: &[f64],
        experience: &[(usize, usize)],
        exclude: Option<usize>,
    ) -> Vec<ArmSpec<'t>> {
        transforms
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != exclude)
            .filter_map(|(j, t)| {
                t.as_ref().map(|t| ArmSpec {
                    agent: j,
                    transform: t,
                    theta: theta_hat[j],
                    e: experience[j].0,
                    rho: experience[j].1,
                })
            })
            .collect()
    }
}
