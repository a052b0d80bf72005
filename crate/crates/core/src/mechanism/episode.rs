use super::transcript::revenue_of;
use super::{Mechanism, Monitoring, RoundRecord, Strategy, Transcript};
use crate::environments::ArmState;
use crate::error::{Error, Result};
use crate::gittins::{allocate, JointDp, WelfareMethod};
use crate::rng::{stream, Purpose, Stream};
use crate::virtual_value::virtual_value;

impl Mechanism<'_> {
    /// Play one episode: period-0 reports and entry fees, then `T` rounds of
    /// reports, index allocation, pricing, and the winner's experience step.
    pub fn run_episode(
        &self,
        strategies: &[Strategy],
        thetas: &[f64],
        seed: u64,
    ) -> Result<Transcript> {
        let env = self.env;
        let k = env.len();
        if strategies.len() != k || thetas.len() != k {
            return Err(Error::domain("need one strategy and one type per agent"));
        }
        for (i, (s, &theta)) in strategies.iter().zip(thetas).enumerate() {
            let a = &env.agents()[i];
            s.check(a)?;
            if !(0.0..=a.theta_max()).contains(&theta) {
                return Err(Error::domain(format!(
                    "type {theta} of agent {i} outside [0, {}]",
                    a.theta_max()
                )));
            }
        }
        let mut states: Vec<ArmState> = (0..k)
            .map(|i| env.agents()[i].initial_state(thetas[i]))
            .collect();

        let reports0 = (0..k)
            .map(|i| {
                Ok(strategies[i]
                    .report(&env.agents()[i], 0, thetas[i], states[i].e)?
                    .theta_hat)
            })
            .collect::<Result<Vec<f64>>>()?;
        let transforms = self.transforms(&reports0)?;
        let fee_seed = self.settings.fee.seed.unwrap_or(seed);
        let fees = (0..k)
            .map(|i| self.entry_fee(&reports0, i, fee_seed))
            .collect::<Result<Vec<_>>>()?;

        let mut rounds = Vec::with_capacity(self.horizon + 1);
        rounds.push(RoundRecord {
            t: 0,
            theta_hat: reports0.clone(),
            e_hat: states.iter().map(|s| s.e).collect(),
            winner: None,
            payment: fees.iter().map(|f| f.fee).sum(),
            rho: states.iter().map(|s| s.rho).collect(),
            true_e: states.iter().map(|s| s.e).collect(),
        });

        let mut streams: Vec<Option<Stream>> = vec![None; k];
        let mut values = vec![0.0; k];
        let mut prices = vec![0.0; k];
        let mut virtual_surplus = 0.0;
        let mut method = WelfareMethod::ExactDp;
        let mut weight = 1.0;
        let mut idx = vec![f64::NEG_INFINITY; k];
        for t in 1..=self.horizon {
            let mut theta_hat = Vec::with_capacity(k);
            let mut e_hat = Vec::with_capacity(k);
            for i in 0..k {
                let r = strategies[i].report(&env.agents()[i], t, thetas[i], states[i].e)?;
                theta_hat.push(r.theta_hat);
                e_hat.push(match self.settings.monitoring {
                    Monitoring::Reported => r.e_hat,
                    Monitoring::Complete => states[i].e,
                });
            }
            let experience: Vec<(usize, usize)> =
                (0..k).map(|i| (e_hat[i], states[i].rho)).collect();
            for i in 0..k {
                idx[i] = match &transforms[i] {
                    None => f64::NEG_INFINITY,
                    Some(tr) => {
                        let arm = self.index.arm(i, tr, theta_hat[i])?;
                        arm.at(env, env.agents()[i].arm_state(e_hat[i], states[i].rho))
                    }
                };
            }
            let winner = allocate(&idx);
            let mut payment = 0.0;
            if let Some(w) = winner {
                let quote = self.per_round_price(&transforms, &theta_hat, &experience, w)?;
                if quote.others_welfare.method == WelfareMethod::Rollout {
                    method = WelfareMethod::Rollout;
                }
                payment = quote.price;
                values[w] += weight * env.value(w, &states[w])?;
                prices[w] += weight * payment;
                virtual_surplus += weight * virtual_value(env, w, &states[w])?;
            }
            rounds.push(RoundRecord {
                t,
                theta_hat,
                e_hat,
                winner,
                payment,
                rho: states.iter().map(|s| s.rho).collect(),
                true_e: states.iter().map(|s| s.e).collect(),
            });
            if let Some(w) = winner {
                let rng = streams[w]
                    .get_or_insert_with(|| stream(seed, Purpose::Experience, &[w as u64]));
                states[w] = env.step_experience(w, &states[w], rng)?;
            }
            weight *= env.discount();
        }

        let entry_fees: Vec<f64> = fees.iter().map(|f| f.fee).collect();
        let utilities = (0..k)
            .map(|i| values[i] - entry_fees[i] - prices[i])
            .collect();
        let revenue = revenue_of(&rounds, env.discount());
        Ok(Transcript {
            seed,
            discount: env.discount(),
            horizon: self.horizon,
            tail_bound: self.tail_bound(),
            thetas: thetas.to_vec(),
            fee_std_errors: fees.iter().map(|f| f.fee_se).collect(),
            fee_quadrature_errors: fees.iter().map(|f| f.quadrature_error).collect(),
            entry_fees,
            welfare_method: method,
            rounds,
            values,
            utilities,
            revenue,
            virtual_surplus,
        })
    }

    /// `[W - W_{-i}](s_t) - δ E[W - W_{-i}](s_{t+1})` at round `t >= 1` of a
    /// transcript, from exact joint programmes over the reported states.
    /// Refuses instances beyond the welfare cap.
    pub fn marginal_contribution(
        &self,
        transcript: &Transcript,
        t: usize,
        agent: usize,
    ) -> Result<f64> {
        if t == 0 || t >= transcript.rounds.len() {
            return Err(Error::domain(format!("round {t} has no allocation")));
        }
        let env = self.env;
        let transforms = self.transforms(&transcript.rounds[0].theta_hat)?;
        let row = &transcript.rounds[t];
        let experience: Vec<(usize, usize)> = row
            .e_hat
            .iter()
            .copied()
            .zip(row.rho.iter().copied())
            .collect();
        let d = env.discount();

        let all = self.arm_specs(&transforms, &row.theta_hat, &experience, None);
        let minus = self.arm_specs(&transforms, &row.theta_hat, &experience, Some(agent));
        let term = |arms: &[super::ArmSpec<'_>]| -> Result<(f64, f64)> {
            if arms.is_empty() {
                return Ok((0.0, 0.0));
            }
            let (dp, states): (std::sync::Arc<JointDp>, Vec<usize>) = self.welfare.dp(env, arms)?;
            let now = dp.optimal_at(&states)?;
            let next = match row
                .winner
                .and_then(|w| arms.iter().position(|a| a.agent == w))
            {
                Some(pos) => dp.expected_next(dp.optimal(), &states, pos)?,
                None => now,
            };
            Ok((now, next))
        };
        let (w_now, w_next) = term(&all)?;
        let (m_now, m_next) = term(&minus)?;
        Ok((w_now - m_now) - d * (w_next - m_next))
    }
}
