use serde::Serialize;

use crate::gittins::WelfareMethod;

/// One row of a transcript. Round 0 carries the period-0 reports and the sum
/// of entry fees; states are those at the start of the round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub theta_hat: Vec<f64>,
    /// Private states the mechanism used: reports, or true states under
    /// complete monitoring.
    pub e_hat: Vec<usize>,
    pub winner: Option<usize>,
    pub payment: f64,
    pub rho: Vec<usize>,
    /// Hidden from the mechanism.
    pub true_e: Vec<usize>,
}

/// Full record of one episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transcript {
    pub seed: u64,
    pub discount: f64,
    pub horizon: usize,
    pub tail_bound: f64,
    /// True types.
    pub thetas: Vec<f64>,
    pub entry_fees: Vec<f64>,
    pub fee_std_errors: Vec<f64>,
    pub fee_quadrature_errors: Vec<f64>,
    /// `Rollout` when any per-round price relied on rollouts.
    pub welfare_method: WelfareMethod,
    pub rounds: Vec<RoundRecord>,
    /// Discounted value per agent at true types and states.
    pub values: Vec<f64>,
    /// Value minus entry fee minus discounted prices.
    pub utilities: Vec<f64>,
    pub revenue: f64,
    /// Discounted virtual value of the winners at their true types.
    pub virtual_surplus: f64,
}

impl Transcript {
    /// Entry fees plus discounted per-round payments, from the rows alone.
    pub fn revenue_from_rounds(&self) -> f64 {
        revenue_of(&self.rounds, self.discount)
    }

    /// Discounted per-round payments of `agent`, from the rows alone.
    pub fn prices_paid(&self, agent: usize) -> f64 {
        let mut weight = 1.0;
        let mut total = 0.0;
        for r in self.rounds.iter().skip(1) {
            if r.winner == Some(agent) {
                total += weight * r.payment;
            }
            weight *= self.discount;
        }
        total
    }

    /// Rounds in which `agent` was allocated, in order.
    pub fn allocation_times(&self, agent: usize) -> Vec<usize> {
        self.rounds
            .iter()
            .filter(|r| r.winner == Some(agent))
            .map(|r| r.t)
            .collect()
    }
}

pub(crate) fn revenue_of(rounds: &[RoundRecord], discount: f64) -> f64 {
    let mut total = rounds.first().map_or(0.0, |r| r.payment);
    let mut weight = 1.0;
    for r in rounds.iter().skip(1) {
        total += weight * r.payment;
        weight *= discount;
    }
    total
}
