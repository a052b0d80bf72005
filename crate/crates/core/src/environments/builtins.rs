use serde::{Deserialize, Serialize};

use super::{
    Agent, Environment, PrivateKernel, PublicKernel, Row, SeparableValue, ThetaFn, TypeDistribution,
};
use crate::error::{Error, Result};

/// Beta prior pseudo-counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

impl BetaPrior {
    fn check(&self, field: &str) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.a > 0.0 && self.b > 0.0) {
            return Err(Error::invalid(field, "beta prior counts must be positive"));
        }
        Ok(())
    }

    fn mean(&self, successes: usize, failures: usize) -> f64 {
        (self.a + successes as f64) / (self.a + self.b + (successes + failures) as f64)
    }
}

fn default_cap() -> usize {
    20
}

fn default_upper() -> f64 {
    1.0
}

/// Count pairs `(s, f)` with `s + f <= cap`, in the order used for state
/// numbers: by total, then by successes descending.
struct CountLattice {
    cap: usize,
    pairs: Vec<(usize, usize)>,
}

impl CountLattice {
    fn new(cap: usize) -> Self {
        let mut pairs = Vec::with_capacity((cap + 1) * (cap + 2) / 2);
        for n in 0..=cap {
            for s in (0..=n).rev() {
                pairs.push((s, n - s));
            }
        }
        Self { cap, pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn index(&self, s: usize, f: usize) -> usize {
        let n = s + f;
        n * (n + 1) / 2 + (n - s)
    }

    fn labels(&self) -> Vec<String> {
        self.pairs
            .iter()
            .map(|(s, f)| format!("s{s}f{f}"))
            .collect()
    }

    /// Row of one Bernoulli observation with success probability `p`;
    /// frozen once the cap is reached.
    fn observe(&self, k: usize, p: f64) -> Row {
        let (s, f) = self.pairs[k];
        if s + f >= self.cap {
            return vec![(k, 1.0)];
        }
        let mut row = Vec::with_capacity(2);
        if p > 0.0 {
            row.push((self.index(s + 1, f), p));
        }
        if p < 1.0 {
            row.push((self.index(s, f + 1), 1.0 - p));
        }
        row.sort_by_key(|&(j, _)| j);
        row
    }
}

/// Parameters of the sponsored-search family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SponsoredSearchParams {
    pub agents: usize,
    #[serde(default = "default_upper")]
    pub theta_max: f64,
    #[serde(default)]
    pub click_prior: BetaPrior,
    #[serde(default)]
    pub purchase_prior: BetaPrior,
    /// Largest number of observations kept in either belief.
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Type distribution; uniform on `[0, theta_max]` when absent.
    #[serde(default)]
    pub types: Option<TypeDistribution>,
}

fn type_dist(types: &Option<TypeDistribution>, upper: f64) -> Result<TypeDistribution> {
    let d = types.clone().unwrap_or(TypeDistribution::Uniform { upper });
    if (d.upper() - upper).abs() > 0.0 {
        return Err(Error::invalid(
            "theta_max",
            "type distribution support disagrees with theta_max",
        ));
    }
    Ok(d)
}

fn check_agents(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("agents", "need at least one agent"));
    }
    Ok(())
}

/// Advertisers whose value per impression is `θ · P[purchase | e] · P[click | ρ]`.
///
/// `ρ` holds public click counts and `e` private purchase counts, both kept
/// at most `cap` observations. An impression clicks with the click-belief
/// mean; only a click produces a purchase observation. The private step reads
/// the pre-transition public state, so its click draw is separate from the
/// one that moves `ρ`.
pub fn sponsored_search(params: &SponsoredSearchParams, discount: f64) -> Result<Environment> {
    check_agents(params.agents)?;
    params.click_prior.check("click_prior")?;
    params.purchase_prior.check("purchase_prior")?;
    let types = type_dist(&params.types, params.theta_max)?;
    let lattice = CountLattice::new(params.cap);
    let n = lattice.len();

    let click_mean: Vec<f64> = lattice
        .pairs
        .iter()
        .map(|&(s, f)| params.click_prior.mean(s, f))
        .collect();
    let buy_mean: Vec<f64> = lattice
        .pairs
        .iter()
        .map(|&(s, f)| params.purchase_prior.mean(s, f))
        .collect();

    let public_rows: Vec<Row> = (0..n).map(|k| lattice.observe(k, click_mean[k])).collect();
    let private_rows: Vec<Vec<Row>> = (0..n)
        .map(|e| {
            (0..n)
                .map(|rho| {
                    let (s, f) = lattice.pairs[e];
                    if s + f >= params.cap {
                        return vec![(e, 1.0)];
                    }
                    let click = click_mean[rho];
                    let buy = buy_mean[e];
                    let mut row = vec![
                        (e, 1.0 - click),
                        (lattice.index(s + 1, f), click * buy),
                        (lattice.index(s, f + 1), click * (1.0 - buy)),
                    ];
                    row.retain(|&(_, p)| p > 0.0);
                    row.sort_by_key(|&(j, _)| j);
                    row
                })
                .collect()
        })
        .collect();

    let public = PublicKernel::from_rows(lattice.labels(), public_rows)?;
    let private = PrivateKernel::from_rows(lattice.labels(), private_rows)?;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|e| (0..n).map(|rho| buy_mean[e] * click_mean[rho]).collect())
        .collect();
    let value = SeparableValue::Multiplicative {
        a: ThetaFn::identity(),
        b,
        c: vec![0.0; n],
    };
    let agent = Agent::new(types, public, private, value, 0, 0)?;
    Environment::new(vec![agent; params.agents], discount)
}

/// Parameters of the click-only Beta-Bernoulli family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaBernoulliParams {
    pub agents: usize,
    #[serde(default = "default_upper")]
    pub theta_max: f64,
    #[serde(default)]
    pub prior: BetaPrior,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub types: Option<TypeDistribution>,
}

/// Arms whose value is `θ · P[click | ρ]` with public Beta click counts and
/// no private experience.
pub fn beta_bernoulli(params: &BetaBernoulliParams, discount: f64) -> Result<Environment> {
    check_agents(params.agents)?;
    params.prior.check("prior")?;
    let types = type_dist(&params.types, params.theta_max)?;
    let lattice = CountLattice::new(params.cap);
    let n = lattice.len();
    let mean: Vec<f64> = lattice
        .pairs
        .iter()
        .map(|&(s, f)| params.prior.mean(s, f))
        .collect();
    let rows: Vec<Row> = (0..n).map(|k| lattice.observe(k, mean[k])).collect();
    let public = PublicKernel::from_rows(lattice.labels(), rows)?;
    let private = PrivateKernel::identity("none", n);
    let value = SeparableValue::Multiplicative {
        a: ThetaFn::identity(),
        b: vec![mean],
        c: vec![0.0; n],
    };
    let agent = Agent::new(types, public, private, value, 0, 0)?;
    Environment::new(vec![agent; params.agents], discount)
}

/// One agent given by explicit tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteChainAgent {
    pub types: TypeDistribution,
    pub public_labels: Vec<String>,
    /// `g[ρ][ρ']`
    pub g: Vec<Vec<f64>>,
    pub private_labels: Vec<String>,
    /// `h[e][ρ][e']`
    pub h: Vec<Vec<Vec<f64>>>,
    pub value: SeparableValue,
    /// Label of the empty experience; the first private label when absent.
    #[serde(default)]
    pub initial_e: Option<String>,
    #[serde(default)]
    pub initial_rho: Option<String>,
}

fn label_position(labels: &[String], label: &Option<String>, field: &str) -> Result<usize> {
    match label {
        None => Ok(0),
        Some(l) => labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::invalid(field, format!("unknown label {l:?}"))),
    }
}

/// Environment from explicit per-agent tables.
pub fn finite_chain(agents: &[FiniteChainAgent], discount: f64) -> Result<Environment> {
    check_agents(agents.len())?;
    let built = agents
        .iter()
        .map(|spec| {
            let public = PublicKernel::new(spec.public_labels.clone(), &spec.g)?;
            let private = PrivateKernel::new(spec.private_labels.clone(), public.len(), &spec.h)?;
            let e0 = label_position(&spec.private_labels, &spec.initial_e, "initial_e")?;
            let rho0 = label_position(&spec.public_labels, &spec.initial_rho, "initial_rho")?;
            Agent::new(
                spec.types.clone(),
                public,
                private,
                spec.value.clone(),
                e0,
                rho0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Environment::new(built, discount)
}

/// Parameters of the AR(1) family `v_{n+1} = a · v_n + shock`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ar1Params {
    pub agents: usize,
    #[serde(default = "default_upper")]
    pub theta_max: f64,
    /// Persistence `a`, in `[0, 1]`.
    pub coefficient: f64,
    /// `shocks[x][n]`: shock added after the `n`-th allocation when the
    /// private shock state is `x`. Non-negative.
    pub shocks: Vec<Vec<f64>>,
    /// Markov kernel of the private shock state; identity when absent.
    #[serde(default)]
    pub shock_kernel: Option<Vec<Vec<f64>>>,
    /// Width of the grid the accumulated shock is rounded to.
    pub grid_width: f64,
    /// Largest representable accumulated shock; larger values are clamped.
    pub level_max: f64,
    #[serde(default)]
    pub types: Option<TypeDistribution>,
}

/// Values following `v_{n+1} = a · v_n + shock[x][n]` over allocations.
///
/// `ρ` counts allocations up to `shocks[0].len()`, after which the arm
/// freezes. `e` carries the accumulated shock (rounded to the grid) and the
/// private shock state, so that `v = a^n θ + level`.
pub fn ar1(params: &Ar1Params, discount: f64) -> Result<Environment> {
    check_agents(params.agents)?;
    let a = params.coefficient;
    if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
        return Err(Error::invalid(
            "coefficient",
            format!("must lie in [0, 1], got {a}"),
        ));
    }
    if !(params.grid_width.is_finite() && params.grid_width > 0.0) {
        return Err(Error::invalid("grid_width", "must be positive"));
    }
    if !(params.level_max.is_finite() && params.level_max >= 0.0) {
        return Err(Error::invalid("level_max", "must be non-negative"));
    }
    let shock_states = params.shocks.len();
    let cap = params.shocks.first().map_or(0, Vec::len);
    if shock_states == 0 || cap == 0 || params.shocks.iter().any(|r| r.len() != cap) {
        return Err(Error::invalid(
            "shocks",
            "need a non-empty rectangular table",
        ));
    }
    if params
        .shocks
        .iter()
        .flatten()
        .any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(Error::invalid(
            "shocks",
            "shocks must be finite and non-negative",
        ));
    }
    let kernel = match &params.shock_kernel {
        Some(k) => k.clone(),
        None => (0..shock_states)
            .map(|x| {
                (0..shock_states)
                    .map(|y| if x == y { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    };
    let shock_labels: Vec<String> = (0..shock_states).map(|x| format!("x{x}")).collect();
    let shock_chain = PublicKernel::new(shock_labels, &kernel)
        .map_err(|e| Error::invalid("shock_kernel", e.to_string()))?;
    let types = type_dist(&params.types, params.theta_max)?;

    let levels = (params.level_max / params.grid_width).round() as usize + 1;
    let level_of = |x: f64| ((x / params.grid_width).round() as usize).min(levels - 1);
    let np = cap + 1;

    let public_labels: Vec<String> = (0..np).map(|n| format!("n{n}")).collect();
    let public_rows: Vec<Row> = (0..np)
        .map(|n| {
            if n < cap {
                vec![(n + 1, 1.0)]
            } else {
                vec![(n, 1.0)]
            }
        })
        .collect();

    let ne = levels * shock_states;
    let encode = |level: usize, x: usize| level * shock_states + x;
    let mut private_labels = Vec::with_capacity(ne);
    let mut private_rows = Vec::with_capacity(ne);
    let mut b = Vec::with_capacity(ne);
    for level in 0..levels {
        for x in 0..shock_states {
            let value = level as f64 * params.grid_width;
            private_labels.push(format!("l{level}x{x}"));
            b.push(vec![value; np]);
            let rows: Vec<Row> = (0..np)
                .map(|n| {
                    if n >= cap {
                        return vec![(encode(level, x), 1.0)];
                    }
                    let next_level = level_of(a * value + params.shocks[x][n]);
                    let mut row: Row = shock_chain
                        .row(x)
                        .iter()
                        .map(|&(y, p)| (encode(next_level, y), p))
                        .collect();
                    row.sort_by_key(|&(j, _)| j);
                    row
                })
                .collect();
            private_rows.push(rows);
        }
    }
    let public = PublicKernel::from_rows(public_labels, public_rows)?;
    let private = PrivateKernel::from_rows(private_labels, private_rows)?;
    let value = SeparableValue::Additive {
        a: ThetaFn::identity(),
        scale: (0..np).map(|n| a.powi(n as i32)).collect(),
        b,
    };
    let agent = Agent::new(types, public, private, value, encode(0, 0), 0)?;
    Environment::new(vec![agent; params.agents], discount)
}
