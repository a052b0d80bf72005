//! CSV and JSON emitters. Every file starts with (CSV) or carries (JSON) the
//! schema version, the config hash and the master seed.

use serde::Serialize;

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::gittins::IndexTable;
use crate::mechanism::Transcript;
use crate::virtual_value::VirtualTransform;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Invariant(format!("csv: {e}"))
}

fn table(
    prov: &Provenance,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<String> {
    let mut out = format!(
        "# schema_version={SCHEMA_VERSION} config_hash={} seed={}\n",
        prov.config_hash, prov.seed
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(csv_error)?;
        for r in rows {
            w.write_record(&r).map_err(csv_error)?;
        }
        w.flush().map_err(csv_error)?;
    }
    String::from_utf8(out).map_err(csv_error)
}

fn per_agent(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (0..k).map(move |i| format!("{prefix}_{i}"))
}

/// One row per round of every episode. Columns: `episode, t, theta_hat_i…,
/// e_hat_i…, winner, payment, rho_i…, true_e_i…`; states are labels and
/// `winner` is empty when the 0-arm is chosen.
pub fn transcripts_csv(
    env: &Environment,
    episodes: &[Transcript],
    prov: &Provenance,
) -> Result<String> {
    let k = env.len();
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend(per_agent("theta_hat", k));
    header.extend(per_agent("e_hat", k));
    header.push("winner".into());
    header.push("payment".into());
    header.extend(per_agent("rho", k));
    header.extend(per_agent("true_e", k));
    let agents = env.agents();
    let rows = episodes.iter().enumerate().flat_map(|(n, tr)| {
        tr.rounds.iter().map(move |r| {
            let mut row = vec![n.to_string(), r.t.to_string()];
            row.extend(r.theta_hat.iter().map(f64::to_string));
            row.extend(
                r.e_hat
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| agents[i].e_label(e).to_string()),
            );
            row.push(r.winner.map_or_else(String::new, |w| w.to_string()));
            row.push(r.payment.to_string());
            row.extend(
                r.rho
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| agents[i].rho_label(p).to_string()),
            );
            row.extend(
                r.true_e
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| agents[i].e_label(e).to_string()),
            );
            row
        })
    });
    table(prov, &header, rows)
}

/// Columns `e_label, rho_label, index` over every chain state.
pub fn index_table_csv(env: &Environment, t: &IndexTable, prov: &Provenance) -> Result<String> {
    let a = env.agent(t.agent)?;
    let header = ["e_label", "rho_label", "index"].map(String::from);
    let rows = (0..a.chain().len()).map(|s| {
        let (e, rho) = a.chain().decode(s);
        vec![
            a.e_label(e).to_string(),
            a.rho_label(rho).to_string(),
            t.entries[s].to_string(),
        ]
    });
    table(prov, &header, rows)
}

/// Columns `rho_label, alpha, beta`.
pub fn transform_csv(
    env: &Environment,
    agent: usize,
    t: &VirtualTransform,
    prov: &Provenance,
) -> Result<String> {
    let a = env.agent(agent)?;
    let header = ["rho_label", "alpha", "beta"].map(String::from);
    let rows = t.beta.iter().enumerate().map(|(rho, b)| {
        vec![
            a.rho_label(rho).to_string(),
            t.alpha.to_string(),
            b.to_string(),
        ]
    });
    table(prov, &header, rows)
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
    body: &'a T,
}

/// Pretty JSON with the provenance fields at the top level.
pub fn json_document<T: Serialize>(kind: &str, prov: &Provenance, body: &T) -> Result<String> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        kind,
        provenance: prov,
        body,
    };
    let mut s =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Invariant(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}
