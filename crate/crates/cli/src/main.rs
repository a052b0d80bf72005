use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dynamech::config::{parse_config, RunConfig};
use dynamech::environments::{validate_assumptions, Environment, DEFAULT_GRID_POINTS};
use dynamech::gittins::build_index_table;
use dynamech::mechanism::Transcript;
use dynamech::output::{
    index_table_csv, json_document, transcripts_csv, transform_csv, Provenance,
};
use dynamech::verification::{audit_revenue_bound, run_suite, AuditResult, Suite};
use dynamech::virtual_value::{affine_coefficients, pegged_transform};

#[derive(Parser)]
#[command(
    name = "dynamech",
    version,
    about = "Virtual index mechanism: simulation and incentive audits"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of tabular output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Ic,
    Ir,
    Envelope,
    Bound,
    Monotone,
    Coupling,
    Vcg,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Ic => Suite::Ic,
            SuiteArg::Ir => Suite::Ir,
            SuiteArg::Envelope => Suite::Envelope,
            SuiteArg::Bound => Suite::Bound,
            SuiteArg::Monotone => Suite::Monotone,
            SuiteArg::Coupling => Suite::Coupling,
            SuiteArg::Vcg => Suite::Vcg,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the separability, shape and hazard-rate assumptions.
    ValidateEnv {
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
    },
    /// Affine virtual-value coefficients of one agent at a report.
    Transform {
        #[arg(long, default_value_t = 0)]
        agent: usize,
        #[arg(long)]
        report: f64,
    },
    /// Index table of one agent at a report.
    Index {
        #[arg(long, default_value_t = 0)]
        agent: usize,
        #[arg(long)]
        report: f64,
        /// Value type; the report when absent.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Run episodes of the mechanism.
    Simulate,
    /// Run incentive and revenue audits.
    Audit {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
    },
    /// Revenue against the virtual-surplus bound.
    Bound {
        /// Episodes; the config's revenue episodes when absent.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

struct Run {
    config: RunConfig,
    env: Environment,
    prov: Provenance,
    out: PathBuf,
    format: Format,
}

impl Run {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_deref().context("--config is required")?;
        let mut config = parse_config(path)?;
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let env = config.environment()?;
        let prov = Provenance {
            config_hash: config.hash()?,
            seed: config.seed,
        };
        let out = cli
            .out
            .clone()
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            config,
            env,
            prov,
            out,
            format: cli.format,
        })
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, kind: &str, body: &T) -> Result<PathBuf> {
        self.write(
            &format!("{kind}.json"),
            &json_document(kind, &self.prov, body)?,
        )
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    seed: u64,
    thetas: &'a [f64],
    entry_fees: &'a [f64],
    fee_std_errors: &'a [f64],
    fee_quadrature_errors: &'a [f64],
    values: &'a [f64],
    utilities: &'a [f64],
    revenue: f64,
    virtual_surplus: f64,
    welfare_method: dynamech::gittins::WelfareMethod,
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    horizon: usize,
    tail_bound: f64,
    mean_revenue: f64,
    episodes: Vec<EpisodeSummary<'a>>,
}

fn summarise(runs: &[Transcript]) -> SimulationSummary<'_> {
    let first = runs.first();
    SimulationSummary {
        horizon: first.map_or(0, |t| t.horizon),
        tail_bound: first.map_or(0.0, |t| t.tail_bound),
        mean_revenue: runs.iter().map(|t| t.revenue).sum::<f64>() / runs.len().max(1) as f64,
        episodes: runs
            .iter()
            .map(|t| EpisodeSummary {
                seed: t.seed,
                thetas: &t.thetas,
                entry_fees: &t.entry_fees,
                fee_std_errors: &t.fee_std_errors,
                fee_quadrature_errors: &t.fee_quadrature_errors,
                values: &t.values,
                utilities: &t.utilities,
                revenue: t.revenue,
                virtual_surplus: t.virtual_surplus,
                welfare_method: t.welfare_method,
            })
            .collect(),
    }
}

fn print_audits(results: &[AuditResult]) {
    println!(
        "{:<10} {:<6} {:>14} {:>14} {:>12} {:>6}",
        "audit", "result", "statistic", "threshold", "std_error", "cells"
    );
    for r in results {
        println!(
            "{:<10} {:<6} {:>14.6e} {:>14.6e} {:>12.4e} {:>6}",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.statistic,
            r.threshold,
            r.std_error,
            r.cells.len()
        );
        for c in r.failures().take(5) {
            println!(
                "    failed: {} ({} vs {})",
                c.label, c.statistic, c.threshold
            );
        }
        if let Some(repro) = &r.repro {
            println!(
                "    repro: seed={} thetas={:?} agent={} deviation={:?}",
                repro.seed, repro.thetas, repro.agent, repro.deviation
            );
        }
    }
}

/// Returns whether every check passed.
fn execute(cli: &Cli) -> Result<bool> {
    let run = Run::load(cli)?;
    let env = &run.env;
    match &cli.command {
        Command::ValidateEnv { grid } => {
            let report = validate_assumptions(env, *grid);
            for c in &report.checks {
                println!(
                    "agent {} {:<16} {}{}",
                    c.agent,
                    format!("{:?}", c.assumption),
                    if c.passed { "pass" } else { "FAIL" },
                    if c.passed {
                        String::new()
                    } else {
                        format!(": {}", c.detail)
                    }
                );
            }
            announce(&run.json("validity", &report)?);
            Ok(report.passed())
        }
        Command::Transform { agent, report } => {
            let t = affine_coefficients(env, *agent, *report)?;
            let dormant = pegged_transform(env, *agent, *report)?.is_none();
            if dormant {
                println!("agent {agent} is dormant at report {report}");
            }
            let path = match run.format {
                Format::Csv => {
                    run.write("transform.csv", &transform_csv(env, *agent, &t, &run.prov)?)?
                }
                Format::Json => {
                    #[derive(Serialize)]
                    struct Body<'a> {
                        agent: usize,
                        dormant: bool,
                        transform: &'a dynamech::virtual_value::VirtualTransform,
                    }
                    run.json(
                        "transform",
                        &Body {
                            agent: *agent,
                            dormant,
                            transform: &t,
                        },
                    )?
                }
            };
            announce(&path);
            Ok(true)
        }
        Command::Index {
            agent,
            report,
            theta,
        } => {
            let Some(t) = pegged_transform(env, *agent, *report)? else {
                bail!("agent {agent} is dormant at report {report}; it has no index");
            };
            let table = build_index_table(
                env,
                *agent,
                &t,
                theta.unwrap_or(*report),
                run.config.mechanism.index_tol,
            )?;
            let path = match run.format {
                Format::Csv => run.write("index.csv", &index_table_csv(env, &table, &run.prov)?)?,
                Format::Json => run.json("index", &table)?,
            };
            announce(&path);
            Ok(true)
        }
        Command::Simulate => {
            let runs = run.config.simulate(env)?;
            let path = match run.format {
                Format::Csv => {
                    run.write("transcript.csv", &transcripts_csv(env, &runs, &run.prov)?)?
                }
                Format::Json => run.json("transcript", &runs)?,
            };
            announce(&path);
            let summary = summarise(&runs);
            println!(
                "episodes {} mean revenue {:.6}",
                runs.len(),
                summary.mean_revenue
            );
            announce(&run.json("summary", &summary)?);
            Ok(true)
        }
        Command::Audit { suite } => {
            let results = run_suite(
                env,
                &run.config.mechanism,
                &run.config.audit,
                (*suite).into(),
            )?;
            print_audits(&results);
            announce(&run.json("audit", &results)?);
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Bound { episodes } => {
            let audit = &run.config.audit;
            let n = episodes.unwrap_or(audit.revenue_episodes);
            let mut settings = run.config.mechanism.clone();
            settings.fee.paths = audit.revenue_fee_paths;
            settings.fee.quadrature = dynamech::mechanism::FeeQuadrature::Stratified {
                strata: audit.revenue_strata,
            };
            let result = audit_revenue_bound(env, &settings, n, run.config.seed)?;
            print_audits(std::slice::from_ref(&result));
            announce(&run.json("bound", &result)?);
            Ok(result.passed)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DYNAMECH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("DYNAMECH_THREADS must be a count, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
