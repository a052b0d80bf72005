//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environments::{
    ar1, beta_bernoulli, finite_chain, sponsored_search, Ar1Params, BetaBernoulliParams,
    Environment, FiniteChainAgent, SeparableValue, SponsoredSearchParams, ThetaFn,
    TypeDistribution,
};
use crate::error::{Error, Result};
use crate::mechanism::{Mechanism, MechanismSettings, Strategy, Transcript};
use crate::rng::{derive_seed, stream, Purpose};
use crate::verification::AuditSettings;

fn one() -> usize {
    1
}

fn unit_uniform() -> TypeDistribution {
    TypeDistribution::uniform(1.0)
}

/// Environment family and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Agents with value `θ` and no experience: a posted price under
    /// uniform types.
    PostedPrice {
        #[serde(default = "one")]
        agents: usize,
        #[serde(default = "unit_uniform")]
        types: TypeDistribution,
    },
    SponsoredSearch(SponsoredSearchParams),
    BetaBernoulli(BetaBernoulliParams),
    Ar1(Ar1Params),
    FiniteChain {
        agents: Vec<FiniteChainAgent>,
    },
}

impl EnvironmentSpec {
    pub fn build(&self, discount: f64) -> Result<Environment> {
        match self {
            EnvironmentSpec::PostedPrice { agents, types } => {
                let agent = FiniteChainAgent {
                    types: types.clone(),
                    public_labels: vec!["none".into()],
                    g: vec![vec![1.0]],
                    private_labels: vec!["none".into()],
                    h: vec![vec![vec![1.0]]],
                    value: SeparableValue::Multiplicative {
                        a: ThetaFn::identity(),
                        b: vec![vec![1.0]],
                        c: vec![0.0],
                    },
                    initial_e: None,
                    initial_rho: None,
                };
                finite_chain(&vec![agent; *agents], discount)
            }
            EnvironmentSpec::SponsoredSearch(p) => sponsored_search(p, discount),
            EnvironmentSpec::BetaBernoulli(p) => beta_bernoulli(p, discount),
            EnvironmentSpec::Ar1(p) => ar1(p, discount),
            EnvironmentSpec::FiniteChain { agents } => finite_chain(agents, discount),
        }
    }
}

/// What `simulate` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub episodes: usize,
    /// True types; drawn from the priors per episode when absent.
    pub thetas: Option<Vec<f64>>,
    /// One per agent; all truthful when empty.
    pub strategies: Vec<Strategy>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            episodes: 1,
            thetas: None,
            strategies: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub mechanism: MechanismSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
    #[serde(default)]
    pub audit: AuditSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(
                "delta",
                format!("must lie in (0, 1), got {}", self.delta),
            ));
        }
        self.mechanism.check()?;
        if self.simulate.episodes == 0 {
            return Err(Error::invalid("simulate.episodes", "must be positive"));
        }
        Ok(())
    }

    /// Build the environment and run the checks that need it.
    pub fn environment(&self) -> Result<Environment> {
        let env = self.environment.build(self.delta)?;
        let k = env.len();
        if let Some(t) = &self.simulate.thetas {
            if t.len() != k {
                return Err(Error::invalid(
                    "simulate.thetas",
                    format!("need {k} types, got {}", t.len()),
                ));
            }
        }
        if !self.simulate.strategies.is_empty() && self.simulate.strategies.len() != k {
            return Err(Error::invalid(
                "simulate.strategies",
                format!("need {k} strategies"),
            ));
        }
        self.audit.check(&env)?;
        Ok(env)
    }

    /// Episodes of `simulate`, in order. Episode `k` uses its own derived
    /// seed and, without fixed types, types drawn from the priors.
    pub fn simulate(&self, env: &Environment) -> Result<Vec<Transcript>> {
        let m = Mechanism::new(env, self.mechanism.clone())?;
        let k = env.len();
        let strategies = if self.simulate.strategies.is_empty() {
            vec![Strategy::Truthful; k]
        } else {
            self.simulate.strategies.clone()
        };
        (0..self.simulate.episodes as u64)
            .into_par_iter()
            .map(|n| {
                let seed = derive_seed(self.seed, Purpose::Episode, &[n]);
                let thetas = match &self.simulate.thetas {
                    Some(t) => t.clone(),
                    None => (0..k)
                        .map(|j| {
                            env.agents()[j].types().quantile(
                                stream(self.seed, Purpose::Types, &[n, j as u64]).random(),
                            )
                        })
                        .collect(),
                };
                m.run_episode(&strategies, &thetas, seed)
            })
            .collect()
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "delta = 0.5\n[environment]\nkind = \"posted_price\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.mechanism, MechanismSettings::default());
        assert_eq!(c.simulate.episodes, 1);
        let env = c.environment().unwrap();
        assert_eq!(env.len(), 1);
        assert_eq!(env.agents()[0].types(), &TypeDistribution::uniform(1.0));
    }

    #[test]
    fn delta_out_of_range_names_the_key() {
        let err = RunConfig::from_toml_str(&MINIMAL.replace("0.5", "1.2")).unwrap_err();
        assert!(
            matches!(&err, Error::Invalid { field, .. } if field == "delta"),
            "{err}"
        );
    }

    #[test]
    fn unknown_keys_and_names_are_rejected() {
        let err = RunConfig::from_toml_str(&format!("{MINIMAL}agentz = 3\n")).unwrap_err();
        assert!(err.to_string().contains("agentz"), "{err}");
        let err = RunConfig::from_toml_str(
            "delta = 0.5\nsed = 1\n[environment]\nkind = \"posted_price\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
        let err = RunConfig::from_toml_str("delta = 0.5\n[environment]\nkind = \"auction\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("auction"), "{err}");
        let err = RunConfig::from_toml_str("seed = 1\n[environment]\nkind = \"posted_price\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn round_trip_is_lossless() {
        let text = "delta = 0.8\nseed = 7\n[environment]\nkind = \"sponsored_search\"\nagents = 2\ncap = 5\n\
                    [mechanism]\ntail_eps = 0.001\n[mechanism.fee]\npaths = 100\n\
                    [mechanism.fee.quadrature]\nkind = \"stratified\"\nstrata = 8\n\
                    [simulate]\nthetas = [0.8, 0.3]\nstrategies = [{ kind = \"truthful\" }, { kind = \"misreport_theta0\", offset = -0.1 }]\n";
        let c = RunConfig::from_toml_str(text).unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        c.environment().unwrap();
    }
}
