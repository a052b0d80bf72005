//! Executable audits of the mechanism's incentive and revenue properties.
//!
//! Comparative audits run paired episodes on common experience streams and
//! decide at three standard errors of the per-seed differences.

mod audits;

use serde::{Deserialize, Serialize};

pub use audits::{
    audit_allocation_time_coupling, audit_envelope, audit_ic, audit_ir, audit_monotone_allocation,
    audit_revenue_bound, audit_vcg_identity,
};

use crate::environments::{Agent, Environment};
use crate::error::{Error, Result};
use crate::gittins::{arm_rewards, ArmProblem, JointDp};
use crate::mechanism::{FeeQuadrature, MechanismSettings, Strategy};
use crate::rng::{derive_seed, Purpose};
use crate::virtual_value::{activation_report, pegged_transform};

/// Direction of the pass condition of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass iff `statistic >= threshold`.
    AtLeast,
    /// Pass iff `statistic <= threshold`.
    AtMost,
}

/// Enough to rerun one failing cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Repro {
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub agent: usize,
    pub deviation: Option<Strategy>,
}

/// One checked condition of an audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditCell {
    pub label: String,
    pub statistic: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub std_error: f64,
    pub passed: bool,
    pub repro: Repro,
}

impl AuditCell {
    pub(crate) fn new(
        label: String,
        statistic: f64,
        threshold: f64,
        bound: Bound,
        std_error: f64,
        repro: Repro,
    ) -> Self {
        let passed = match bound {
            Bound::AtLeast => statistic >= threshold,
            Bound::AtMost => statistic <= threshold,
        };
        Self {
            label,
            statistic,
            threshold,
            bound,
            std_error,
            passed,
            repro,
        }
    }

    fn margin(&self) -> f64 {
        match self.bound {
            Bound::AtLeast => self.statistic - self.threshold,
            Bound::AtMost => self.threshold - self.statistic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditResult {
    pub name: String,
    pub passed: bool,
    /// Statistic, threshold and error of the deciding cell: the first
    /// failure, or the tightest pass.
    pub statistic: f64,
    pub threshold: f64,
    pub std_error: f64,
    pub seeds: Vec<u64>,
    pub cells: Vec<AuditCell>,
    /// Present on failure.
    pub repro: Option<Repro>,
}

impl AuditResult {
    pub(crate) fn from_cells(name: &str, seeds: Vec<u64>, cells: Vec<AuditCell>) -> Self {
        let passed = cells.iter().all(|c| c.passed);
        // exact cells (zero error, e.g. a truthful-vs-truthful pair) are
        // only reported when nothing else was checked
        let tightest = |exact: bool| {
            cells
                .iter()
                .filter(|c| exact || c.std_error > 0.0)
                .min_by(|a, b| a.margin().total_cmp(&b.margin()))
        };
        let decisive = cells
            .iter()
            .find(|c| !c.passed)
            .or_else(|| tightest(false))
            .or_else(|| tightest(true));
        let (statistic, threshold, std_error) =
            decisive.map_or((0.0, 0.0, 0.0), |c| (c.statistic, c.threshold, c.std_error));
        Self {
            name: name.to_string(),
            passed,
            statistic,
            threshold,
            std_error,
            seeds,
            repro: if passed {
                None
            } else {
                decisive.map(|c| c.repro.clone())
            },
            cells,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCell> {
        self.cells.iter().filter(|c| !c.passed)
    }
}

/// Knobs shared by the audit suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    /// Agent whose incentives are probed.
    pub agent: usize,
    /// Types of all agents outside the probed coordinate; `0.7 * upper` each
    /// when empty.
    pub others: Vec<f64>,
    pub grid_points: usize,
    /// Type offsets of the misreporting strategies.
    pub offsets: Vec<f64>,
    /// Round at which `CorrectingDeviation` turns truthful.
    pub correct_at: usize,
    /// Private-state labels tried by `MisreportExperience` in round 1.
    pub experience_labels: usize,
    /// Paired episodes per cell.
    pub episodes: usize,
    /// Type draws of the revenue audit.
    pub revenue_episodes: usize,
    /// Fee rollouts per revenue episode; fees there use stratified
    /// quadrature, whose noise the paired error absorbs.
    pub revenue_fee_paths: usize,
    pub revenue_strata: usize,
    pub coupling_seeds: usize,
    pub coupling_raise: f64,
    pub seed: u64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            agent: 0,
            others: Vec::new(),
            grid_points: 9,
            offsets: vec![-0.25, -0.1, -0.05, 0.05, 0.1, 0.25],
            correct_at: 3,
            experience_labels: 3,
            episodes: 400,
            revenue_episodes: 2000,
            revenue_fee_paths: 8,
            revenue_strata: 16,
            coupling_seeds: 200,
            coupling_raise: 0.2,
            seed: 0,
        }
    }
}

impl AuditSettings {
    pub fn check(&self, env: &Environment) -> Result<()> {
        env.agent(self.agent)
            .map_err(|_| Error::invalid("audit.agent", format!("no agent {}", self.agent)))?;
        if !self.others.is_empty() && self.others.len() != env.len() {
            return Err(Error::invalid("audit.others", "need one type per agent"));
        }
        for (j, &x) in self.others.iter().enumerate() {
            if !(0.0..=env.agents()[j].theta_max()).contains(&x) {
                return Err(Error::invalid(
                    "audit.others",
                    format!("type {x} outside the support of agent {j}"),
                ));
            }
        }
        if self.grid_points < 2 {
            return Err(Error::invalid(
                "audit.grid_points",
                "need at least 2 points",
            ));
        }
        if self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("audit.offsets", "offsets must be finite"));
        }
        for (name, n) in [
            ("audit.episodes", self.episodes),
            ("audit.revenue_episodes", self.revenue_episodes),
            ("audit.coupling_seeds", self.coupling_seeds),
        ] {
            if n < 2 {
                return Err(Error::invalid(name, "need at least 2 episodes"));
            }
        }
        if self.revenue_fee_paths == 0 || self.revenue_strata == 0 {
            return Err(Error::invalid(
                "audit.revenue_fee_paths",
                "fee paths and strata must be positive",
            ));
        }
        if !(self.coupling_raise.is_finite() && self.coupling_raise > 0.0) {
            return Err(Error::invalid("audit.coupling_raise", "must be positive"));
        }
        Ok(())
    }

    /// Type vector with the probed agent at `theta`.
    pub fn profile(&self, env: &Environment, theta: f64) -> Vec<f64> {
        let mut out: Vec<f64> = if self.others.is_empty() {
            env.agents().iter().map(|a| 0.7 * a.theta_max()).collect()
        } else {
            self.others.clone()
        };
        out[self.agent] = theta;
        out
    }

    pub fn episode_seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64)
            .map(|k| derive_seed(self.seed, Purpose::Audit, &[k]))
            .collect()
    }
}

/// `points` types spanning `[0, upper]`: both ends, the points 0.01 either
/// side of the activation report when there is one, and interior points
/// placed greedily farthest from those already chosen.
pub fn theta_grid(env: &Environment, agent: usize, points: usize) -> Result<Vec<f64>> {
    let upper = env.agent(agent)?.theta_max();
    let mut grid = vec![0.0, upper];
    if let Some(r) = activation_report(env, agent, upper)? {
        for x in [r - 0.01, r + 0.01] {
            if x > 0.0 && x < upper {
                grid.push(x);
            }
        }
    }
    let candidates: Vec<f64> = (1..4 * points)
        .map(|k| upper * k as f64 / (4 * points) as f64)
        .collect();
    while grid.len() < points {
        let far = candidates
            .iter()
            .map(|&c| {
                (
                    c,
                    grid.iter()
                        .map(|g| (g - c).abs())
                        .fold(f64::INFINITY, f64::min),
                )
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match far {
            Some((c, d)) if d > 1e-12 => grid.push(c),
            _ => break,
        }
    }
    grid.truncate(points.max(2));
    grid.sort_by(f64::total_cmp);
    Ok(grid)
}

/// The fixed deviation set: truthful, the three type misreports over every
/// offset, and round-1 experience claims of the first private states the
/// agent can reach, other than its initial one.
pub fn deviation_set(
    agent: &Agent,
    offsets: &[f64],
    correct_at: usize,
    labels: usize,
) -> Vec<Strategy> {
    let mut out = vec![Strategy::Truthful];
    for &offset in offsets {
        out.push(Strategy::MisreportTheta0 { offset });
        out.push(Strategy::MisreportThetaAlways { offset });
        out.push(Strategy::CorrectingDeviation { offset, correct_at });
    }
    let start = agent.initial_state(0.0);
    let mut seen = vec![start.e];
    for s in agent.chain().reachable(agent.arm_state(start.e, start.rho)) {
        let (e, _) = agent.chain().decode(s);
        if seen.len() > labels {
            break;
        }
        if !seen.contains(&e) {
            seen.push(e);
            out.push(Strategy::MisreportExperience {
                round: 1,
                label: agent.e_label(e).to_string(),
            });
        }
    }
    out
}

/// Allocation rule handed to [`exact_dp_policy_value`].
pub enum Policy<'p> {
    /// Always the 0-arm.
    Retire,
    /// Gittins indices at the given bisection tolerance.
    Index { tol: f64 },
    /// Arm position (among active agents) by joint chain state.
    Rule(&'p dyn Fn(&[usize]) -> Option<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolicyValue {
    pub policy: f64,
    /// Best value over all policies.
    pub optimum: f64,
}

/// Exact discounted weighted welfare of `policy` from the agents' initial
/// states, with everyone pegged at and valuing `reports`. Dormant agents are
/// refused since they have no weights.
pub fn exact_dp_policy_value(
    env: &Environment,
    reports: &[f64],
    policy: Policy<'_>,
    cap: usize,
) -> Result<PolicyValue> {
    if reports.len() != env.len() {
        return Err(Error::domain("need one report per agent"));
    }
    let mut arms = Vec::with_capacity(env.len());
    for (i, &r) in reports.iter().enumerate() {
        let a = &env.agents()[i];
        let t = pegged_transform(env, i, r)?
            .ok_or_else(|| Error::domain(format!("agent {i} is dormant at {r}")))?;
        let s = a.initial_state(r);
        arms.push(ArmProblem {
            chain: a.chain(),
            rewards: arm_rewards(env, i, &t, r)?,
            start: a.arm_state(s.e, s.rho),
        });
    }
    let start: Vec<usize> = arms.iter().map(|a| a.start).collect();
    let dp = JointDp::new(arms, env.discount(), cap)?;
    let x = dp.encode(&start)?;
    let values = match policy {
        Policy::Retire => vec![0.0; dp.len()],
        Policy::Index { tol } => dp.index_policy_values(tol)?,
        Policy::Rule(f) => dp.evaluate(f),
    };
    Ok(PolicyValue {
        policy: values[x],
        optimum: dp.optimal()[x],
    })
}

/// Audits selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ic,
    Ir,
    Envelope,
    Bound,
    Monotone,
    Coupling,
    Vcg,
    All,
}

impl Suite {
    pub fn parts(self) -> Vec<Suite> {
        use Suite::*;
        match self {
            All => vec![Envelope, Bound, Ic, Ir, Monotone, Coupling],
            s => vec![s],
        }
    }
}

/// Run a suite against one environment and mechanism configuration.
pub fn run_suite(
    env: &Environment,
    settings: &MechanismSettings,
    audit: &AuditSettings,
    suite: Suite,
) -> Result<Vec<AuditResult>> {
    audit.check(env)?;
    let grid = theta_grid(env, audit.agent, audit.grid_points)?;
    let seeds = audit.episode_seeds(audit.episodes);
    suite
        .parts()
        .into_iter()
        .map(|s| match s {
            Suite::Envelope => audit_envelope(env, settings, audit, &grid, &seeds),
            Suite::Bound => {
                let mut s = settings.clone();
                s.fee.paths = audit.revenue_fee_paths;
                s.fee.quadrature = FeeQuadrature::Stratified {
                    strata: audit.revenue_strata,
                };
                audit_revenue_bound(env, &s, audit.revenue_episodes, audit.seed)
            }
            Suite::Ic => {
                let devs = deviation_set(
                    &env.agents()[audit.agent],
                    &audit.offsets,
                    audit.correct_at,
                    audit.experience_labels,
                );
                audit_ic(env, settings, audit, &devs, &grid, &seeds)
            }
            Suite::Ir => audit_ir(env, settings, audit, &grid, &seeds),
            Suite::Monotone => {
                audit_monotone_allocation(env, settings, &audit.profile(env, 0.0), &grid)
            }
            Suite::Coupling => {
                let upper = env.agents()[audit.agent].theta_max();
                let base = audit.profile(
                    env,
                    (0.75 * upper - 0.5 * audit.coupling_raise).clamp(0.0, upper),
                );
                let cseeds = audit.episode_seeds(audit.coupling_seeds);
                audit_allocation_time_coupling(
                    env,
                    settings,
                    &base,
                    audit.agent,
                    audit.coupling_raise,
                    &cseeds,
                )
            }
            Suite::Vcg => audit_vcg_identity(
                env,
                settings,
                &audit.profile(env, grid[grid.len() / 2]),
                &seeds[..seeds.len().min(20)],
            ),
            Suite::All => unreachable!("expanded above"),
        })
        .collect()
}
