use std::fmt;

use serde::{Deserialize, Serialize};

use crate::environments::Agent;
use crate::error::Result;

/// What an agent tells the mechanism in one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Report {
    pub theta_hat: f64,
    /// Private state number; ignored at `t = 0`.
    pub e_hat: usize,
}

fn default_correct_at() -> usize {
    3
}

/// Reporting behaviour of one agent. Type misreports are clamped to the
/// support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Truthful,
    /// Shift the period-0 type report only.
    MisreportTheta0 {
        offset: f64,
    },
    /// Shift every type report.
    MisreportThetaAlways {
        offset: f64,
    },
    /// Claim the private state `label` in round `round`.
    MisreportExperience {
        round: usize,
        label: String,
    },
    /// Shift type reports before round `correct_at`, truthful from then on.
    CorrectingDeviation {
        offset: f64,
        #[serde(default = "default_correct_at")]
        correct_at: usize,
    },
}

impl Strategy {
    pub fn is_truthful(&self) -> bool {
        matches!(self, Strategy::Truthful)
    }

    /// Report in round `t` given the true type and private state.
    pub fn report(&self, agent: &Agent, t: usize, theta: f64, e: usize) -> Result<Report> {
        let shifted = |offset: f64| (theta + offset).clamp(0.0, agent.theta_max());
        let truthful = Report {
            theta_hat: theta,
            e_hat: e,
        };
        Ok(match self {
            Strategy::Truthful => truthful,
            Strategy::MisreportTheta0 { offset } if t == 0 => Report {
                theta_hat: shifted(*offset),
                e_hat: e,
            },
            Strategy::MisreportTheta0 { .. } => truthful,
            Strategy::MisreportThetaAlways { offset } => Report {
                theta_hat: shifted(*offset),
                e_hat: e,
            },
            Strategy::MisreportExperience { round, label } if *round == t && t > 0 => Report {
                theta_hat: theta,
                e_hat: agent.e_index(label)?,
            },
            Strategy::MisreportExperience { .. } => truthful,
            Strategy::CorrectingDeviation { offset, correct_at } if t < *correct_at => Report {
                theta_hat: shifted(*offset),
                e_hat: e,
            },
            Strategy::CorrectingDeviation { .. } => truthful,
        })
    }

    /// Checks that do not depend on the round, e.g. unknown labels.
    pub fn check(&self, agent: &Agent) -> Result<()> {
        if let Strategy::MisreportExperience { label, .. } = self {
            agent.e_index(label)?;
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Truthful => write!(f, "truthful"),
            Strategy::MisreportTheta0 { offset } => write!(f, "theta0({offset:+})"),
            Strategy::MisreportThetaAlways { offset } => write!(f, "always({offset:+})"),
            Strategy::MisreportExperience { round, label } => {
                write!(f, "experience({round},{label})")
            }
            Strategy::CorrectingDeviation { offset, correct_at } => {
                write!(f, "correcting({offset:+},{correct_at})")
            }
        }
    }
}
