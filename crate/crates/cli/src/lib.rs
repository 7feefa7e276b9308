//! Command-line front end: elicit priors, score and learn Gaussian network structures,
//! sample data and evaluate predictive densities.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bgenet::bge::{log_predictive, update_posterior, BgeScorer};
use bgenet::search::{
    exhaustive_with, hill_climb_with, ExhaustiveOptions, HillClimbOptions, RankedClass,
    SearchReport,
};
use bgenet::{
    ln_to_sci, Dag, Dataset, Error, NWPrior, NetworkSpec, ScoreCache, StructurePriorPolicy,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "bgenet",
    version,
    about = "Gaussian belief-network structure scoring and learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a prior network into normal-Wishart hyperparameters.
    Elicit {
        /// Prior-network file (network JSON plus `nu` and `alpha`).
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Score one structure against a dataset.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// Network JSON; only names and parents are read.
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::UniformClasses)]
        policy: Policy,
        /// A reference density (natural scale, e.g. 3.5e-88) to print next
        /// to the computed one.
        #[arg(long)]
        compare: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Search for high-scoring structures.
    Learn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Policy::UniformClasses)]
        policy: Policy,
        /// Greedy only: extra runs from random starting structures.
        #[arg(long, default_value_t = 0)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        /// Greedy only: starting structure (default: no arcs).
        #[arg(long)]
        start: Option<PathBuf>,
        /// Write the top structure in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Print the accepted greedy moves.
        #[arg(long)]
        trace: bool,
        /// Rows to print in text mode (all by default).
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Draw cases from a fully specified network; CSV on stdout.
    Sample {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Log predictive density of one case given a prior and optional data.
    Predict {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        prior: PathBuf,
        /// Comma-separated values in variable order.
        #[arg(long, allow_hyphen_values = true)]
        case: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    UniformClasses,
    UniformStructures,
}

impl From<Policy> for StructurePriorPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::UniformClasses => StructurePriorPolicy::UniformClasses,
            Policy::UniformStructures => StructurePriorPolicy::UniformStructures,
        }
    }
}

/// Result of one invocation: exit code and the text for each stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

/// 0 success, 2 input or validation error, 3 capability limit.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TooLarge { .. } => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome {
                    code: 2,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                Outcome {
                    code: 0,
                    stdout: text,
                    stderr: String::new(),
                }
            };
        }
    };
    match run(cli.command) {
        Ok(stdout) => Outcome {
            code: 0,
            stdout,
            stderr: String::new(),
        },
        Err(e) => Outcome {
            code: exit_code(&e),
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
        },
    }
}

fn run(command: Command) -> bgenet::Result<String> {
    match command {
        Command::Elicit { prior, json } => elicit(&prior, json),
        Command::Score {
            data,
            prior,
            structure,
            policy,
            compare,
            json,
        } => score(&data, &prior, &structure, policy.into(), compare, json),
        Command::Learn {
            data,
            prior,
            mode,
            policy,
            restarts,
            seed,
            max_iters,
            start,
            dot,
            trace,
            top,
            json,
        } => {
            let d = Dataset::load_csv(&data)?;
            let p = NWPrior::load(&prior)?;
            let policy: StructurePriorPolicy = policy.into();
            let cache = ScoreCache::new();
            let report = match mode {
                Mode::Exhaustive => {
                    exhaustive_with(&d, &p, policy, &cache, ExhaustiveOptions::default())?
                }
                Mode::Greedy => {
                    let start = match &start {
                        Some(path) => NetworkSpec::load(path)?.to_dag()?,
                        None => Dag::empty(d.variables().iter().cloned())?,
                    };
                    let opts = HillClimbOptions {
                        max_iters,
                        restarts,
                        seed,
                        ..Default::default()
                    };
                    hill_climb_with(&d, &p, policy, &start, opts, &cache)?
                }
            };
            let top_dag = report
                .terminal
                .clone()
                .unwrap_or_else(|| report.best().class.representative.clone());
            if let Some(path) = &dot {
                std::fs::write(path, top_dag.to_dot("bgenet")).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            let inputs = json!({
                "data": path_str(&data),
                "data_sha256": hex(&d.digest()),
                "prior": path_str(&prior),
                "mode": match mode { Mode::Exhaustive => "exhaustive", Mode::Greedy => "greedy" },
                "policy": policy.name(),
                "seed": seed,
                "restarts": restarts,
                "max_iters": max_iters,
            });
            if json {
                Ok(learn_json(inputs, &report, &top_dag))
            } else {
                Ok(learn_text(&report, &top_dag, trace, top))
            }
        }
        Command::Sample {
            network,
            count,
            seed,
        } => {
            let net = NetworkSpec::load(&network)?.to_network()?;
            let d = net.sample(count, seed);
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
        }
        Command::Predict {
            data,
            prior,
            case,
            json,
        } => predict(data.as_deref(), &prior, &case, json),
    }
}

fn elicit(path: &Path, json: bool) -> bgenet::Result<String> {
    let p = NWPrior::load(path)?;
    if json {
        let report = json!({
            "command": "elicit",
            "inputs": { "prior": path_str(path) },
            "scores": {
                "variables": p.variables,
                "mu0": p.mu0,
                "t0": p.t0.to_rows(),
                "nu": p.nu,
                "alpha": p.alpha,
            },
            "ranking": [],
            "posteriors": [],
            "trace": [],
        });
        return Ok(to_json(&report));
    }
    let mut s = String::new();
    writeln!(s, "variables: {}", p.variables.join(" ")).unwrap();
    writeln!(s, "nu: {}", p.nu).unwrap();
    writeln!(s, "alpha: {}", p.alpha).unwrap();
    writeln!(s, "mu0: {}", join_fixed(&p.mu0, 6)).unwrap();
    writeln!(s, "t0:").unwrap();
    for row in p.t0.to_rows() {
        writeln!(s, "  {}", join_fixed(&row, 6)).unwrap();
    }
    Ok(s)
}

fn score(
    data: &Path,
    prior: &Path,
    structure: &Path,
    policy: StructurePriorPolicy,
    compare: Option<f64>,
    json: bool,
) -> bgenet::Result<String> {
    let d = Dataset::load_csv(data)?;
    let p = NWPrior::load(prior)?;
    let dag = NetworkSpec::load(structure)?.to_dag()?;
    let mut names = dag.variables().to_vec();
    let mut data_names = d.variables().to_vec();
    names.sort();
    data_names.sort();
    if names != data_names {
        return Err(Error::VariableMismatch);
    }
    let dag = dag.reindexed(d.variables())?;
    let cache = ScoreCache::new();
    let scorer = BgeScorer::new(&d, &p, &cache)?;
    let (terms, total) = scorer.score_dag(&dag)?;
    let log_prior = policy.log_uniform(d.n_vars());
    let log10 = total / std::f64::consts::LN_10;

    if json {
        let local: Vec<Value> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                json!({
                    "variable": d.variables()[i],
                    "parents": parent_names(&dag, i),
                    "ln": t,
                })
            })
            .collect();
        let report = json!({
            "command": "score",
            "inputs": {
                "data": path_str(data),
                "data_sha256": hex(&d.digest()),
                "prior": path_str(prior),
                "structure": path_str(structure),
                "policy": policy.name(),
            },
            "scores": {
                "local": local,
                "ln_marginal": total,
                "log10_marginal": log10,
                "marginal_sci": ln_to_sci(total),
                "ln_prior": log_prior,
                "ln_score": log_prior.map(|lp| lp + total),
                "reference": compare,
            },
            "ranking": [],
            "posteriors": [],
            "trace": [],
        });
        return Ok(to_json(&report));
    }

    let mut s = String::new();
    writeln!(s, "{:<12} {:<24} {:>18}", "variable", "parents", "ln local").unwrap();
    for (i, t) in terms.iter().enumerate() {
        let parents = parent_names(&dag, i);
        let parents = if parents.is_empty() {
            "-".to_string()
        } else {
            parents.join(",")
        };
        writeln!(s, "{:<12} {:<24} {:>18.6}", d.variables()[i], parents, t).unwrap();
    }
    writeln!(s, "ln marginal: {total:.6}").unwrap();
    writeln!(s, "log10 marginal: {log10:.6}").unwrap();
    writeln!(s, "marginal: {}", ln_to_sci(total)).unwrap();
    match log_prior {
        Some(lp) => writeln!(s, "ln prior ({}): {lp:.6}", policy.name()).unwrap(),
        None => writeln!(s, "ln prior ({}): unavailable", policy.name()).unwrap(),
    }
    if let Some(r) = compare {
        let ratio = total / std::f64::consts::LN_10 - r.log10();
        writeln!(s, "reference: {r:.2e} (computed/reference = 10^{ratio:.3})").unwrap();
    }
    Ok(s)
}

fn predict(data: Option<&Path>, prior: &Path, case: &str, json: bool) -> bgenet::Result<String> {
    let p = NWPrior::load(prior)?;
    let values: Vec<f64> = case
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad case value '{}'", v.trim())))
        })
        .collect::<bgenet::Result<_>>()?;
    let (posterior, cases, digest) = match data {
        Some(path) => {
            let d = Dataset::load_csv(path)?;
            let restricted = p.restrict_to(d.variables())?;
            let post = update_posterior(&restricted, &d.stats())?;
            (
                post.as_prior(d.variables().to_vec())?,
                d.len(),
                Some(hex(&d.digest())),
            )
        }
        None => (p, 0, None),
    };
    if values.len() != posterior.dim() {
        return Err(Error::DimensionMismatch {
            expected: posterior.dim(),
            found: values.len(),
        });
    }
    let ln = log_predictive(&posterior, &values)?;
    if json {
        let report = json!({
            "command": "predict",
            "inputs": {
                "data": data.map(path_str),
                "data_sha256": digest,
                "prior": path_str(prior),
                "case": values,
            },
            "scores": {
                "variables": posterior.variables,
                "cases_seen": cases,
                "ln_predictive": ln,
                "predictive": ln.exp(),
            },
            "ranking": [],
            "posteriors": [],
            "trace": [],
        });
        return Ok(to_json(&report));
    }
    let mut s = String::new();
    writeln!(s, "variables: {}", posterior.variables.join(" ")).unwrap();
    writeln!(s, "cases seen: {cases}").unwrap();
    writeln!(s, "ln predictive: {ln:.9}").unwrap();
    writeln!(s, "predictive: {}", ln_to_sci(ln)).unwrap();
    Ok(s)
}

fn learn_json(inputs: Value, report: &SearchReport, top: &Dag) -> String {
    let ranking: Vec<Value> = report
        .ranked
        .iter()
        .enumerate()
        .map(|(i, e)| ranking_row(i + 1, e))
        .collect();
    let posteriors: Vec<f64> = report.ranked.iter().map(|e| e.posterior).collect();
    let best = report.best();
    let value = json!({
        "command": "learn",
        "inputs": inputs,
        "scores": {
            "top_arcs": arc_strings(top),
            "ln_marginal": best.log_marginal,
            "log10_marginal": best.log_marginal / std::f64::consts::LN_10,
            "ln_prior": best.log_prior,
            "ln_score": best.log_score(),
            "evaluations": report.evaluations,
        },
        "ranking": ranking,
        "posteriors": posteriors,
        "trace": report.trace,
    });
    to_json(&value)
}

fn ranking_row(rank: usize, e: &RankedClass) -> Value {
    json!({
        "rank": rank,
        "representative": arc_strings(&e.class.representative),
        "members": e.class.members.len(),
        "complete": e.complete,
        "ln_prior": e.log_prior,
        "ln_marginal": e.log_marginal,
        "ln_score": e.log_score(),
        "posterior": e.posterior,
    })
}

fn learn_text(report: &SearchReport, top: &Dag, trace: bool, limit: Option<usize>) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:>4} {:>10} {:>14} {:>10} {:>8}  representative",
        "rank", "posterior", "ln marginal", "marginal", "members"
    )
    .unwrap();
    let shown = limit.unwrap_or(report.ranked.len());
    for (i, e) in report.ranked.iter().take(shown).enumerate() {
        let arcs = arc_strings(&e.class.representative);
        let arcs = if arcs.is_empty() {
            "(no arcs)".to_string()
        } else {
            arcs.join(" ")
        };
        let members = if e.complete {
            e.class.members.len().to_string()
        } else {
            format!("{}+", e.class.members.len())
        };
        writeln!(
            s,
            "{:>4} {:>10.6} {:>14.6} {:>10} {:>8}  {}",
            i + 1,
            e.posterior,
            e.log_marginal,
            ln_to_sci(e.log_marginal),
            members,
            arcs
        )
        .unwrap();
    }
    writeln!(s, "classes: {}", report.ranked.len()).unwrap();
    writeln!(s, "evaluations: {}", report.evaluations).unwrap();
    let arcs = arc_strings(top);
    writeln!(
        s,
        "top structure: {}",
        if arcs.is_empty() {
            "(no arcs)".to_string()
        } else {
            arcs.join(" ")
        }
    )
    .unwrap();
    if trace {
        writeln!(s, "trace:").unwrap();
        for (i, t) in report.trace.iter().enumerate() {
            let kind = serde_json::to_value(t.kind).unwrap();
            writeln!(
                s,
                "  {:>3} {:<8} {} -> {}  delta {:.6}  ln marginal {:.6}",
                i + 1,
                kind.as_str().unwrap_or_default(),
                t.from,
                t.to,
                t.delta,
                t.score
            )
            .unwrap();
        }
    }
    s
}

fn parent_names(dag: &Dag, child: usize) -> Vec<String> {
    dag.parents(child)
        .into_iter()
        .map(|p| dag.variables()[p].clone())
        .collect()
}

fn arc_strings(dag: &Dag) -> Vec<String> {
    dag.arcs()
        .into_iter()
        .map(|(a, b)| format!("{}->{}", dag.variables()[a], dag.variables()[b]))
        .collect()
}

fn join_fixed(values: &[f64], digits: usize) -> String {
    values
        .iter()
        .map(|v| format!("{:>12.digits$}", v + 0.0))
        .collect::<Vec<_>>()
        .join(" ")
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}
