//! `ijgp` command line: solve single instances, sweep benchmarks to CSV,
//! and inspect join-graph decompositions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ijgp::elimination::{bucket_elimination_posterior, Guard};
use ijgp::factor::Assignment;
use ijgp::harness::{
    emit_csv, format_beliefs, run_experiment, Algorithm, ExperimentSpec, FamilySpec,
};
use ijgp::joingraph::{decomposition_stats, join_graph_structuring};
use ijgp::network::{parse_evidence, parse_network, BeliefNetwork, ModelViolation};
use ijgp::ordering::min_fill_ordering;
use ijgp::propagation::{ibp_run, ijgp_run, mc_run, EngineConfig};
use ijgp::Error;

#[derive(Parser)]
#[command(name = "ijgp", version, about = "Belief-network inference by join-graph propagation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algo {
    Ijgp,
    Ibp,
    Mc,
    Exact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Random,
    Grid,
    Coding,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute posterior marginals for one model file.
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Evidence file; omitted means no evidence.
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long, value_enum)]
        algorithm: Algo,
        /// Cluster size bound for ijgp/mc; omitted means unbounded
        /// (join-tree, exact).
        #[arg(long)]
        i_bound: Option<usize>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        /// Reserved for interface stability; solving is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; omitted prints to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep an algorithm/parameter grid over generated instances, write CSV.
    Bench {
        #[arg(long, value_enum)]
        family: Family,
        /// Variables (random) or information bits (coding).
        #[arg(long)]
        n: Option<usize>,
        /// Domain cardinality.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Conditional CPTs (random family).
        #[arg(long)]
        c: Option<usize>,
        /// Parents per conditional CPT / per parity bit.
        #[arg(long)]
        p: Option<usize>,
        /// Grid side length.
        #[arg(long)]
        m: Option<usize>,
        /// Channel noise standard deviation (coding family).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "ibp,ijgp,mc")]
        algorithms: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "2,5,8")]
        i_bounds: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        iterations: Vec<usize>,
        /// Evidence variable counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10")]
        evidence: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print decomposition statistics (and optionally the graph itself).
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        i_bound: Option<usize>,
        /// Also print every cluster and labeled edge.
        #[arg(long)]
        dump: bool,
    },
}

/// Exit codes: 0 success, 1 usage, 2 model/evidence, 3 width guard.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::WidthGuard { .. } | Error::TooLarge(_) => 3,
        _ => 2,
    }
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn load_model(path: &PathBuf) -> ijgp::Result<BeliefNetwork> {
    let net = parse_network(&std::fs::read_to_string(path)?)?;
    for v in net.validate() {
        match v {
            ModelViolation::Cyclic => {
                return Err(Error::InvalidModel("parent graph has a cycle".into()))
            }
            ModelViolation::BadScope { var } => {
                return Err(Error::InvalidModel(format!(
                    "table scope of variable {var} does not match its family"
                )))
            }
            // scaled tables (e.g. folded channel likelihoods) are usable,
            // just flagged
            ModelViolation::UnnormalizedCpt { var, .. } => {
                eprintln!("warning: table of variable {var} does not sum to one per parent row")
            }
        }
    }
    Ok(net)
}

fn solve(
    model: PathBuf,
    evidence: Option<PathBuf>,
    algorithm: Algo,
    i_bound: Option<usize>,
    iterations: usize,
    out: Option<PathBuf>,
) -> ijgp::Result<()> {
    let net = load_model(&model)?;
    let e = match evidence {
        Some(p) => parse_evidence(&std::fs::read_to_string(p)?, &net)?,
        None => Assignment::new(),
    };
    let ord = min_fill_ordering(&net.moral_graph());
    let cfg = EngineConfig { iterations, ..Default::default() };
    let beliefs = match algorithm {
        Algo::Exact => bucket_elimination_posterior(&net, &e, &ord, &Guard::default())?,
        Algo::Ibp => ibp_run(&net, &e, &cfg)?.beliefs,
        Algo::Ijgp => {
            let jg = join_graph_structuring(&net, &ord, i_bound);
            ijgp_run(&net, &e, &jg, &cfg)?.beliefs
        }
        Algo::Mc => mc_run(&net, &e, &ord, i_bound)?.beliefs,
    };
    let text = format_beliefs(&net, &e, &beliefs);
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn decompose(model: PathBuf, i_bound: Option<usize>, dump: bool) -> ijgp::Result<()> {
    let net = load_model(&model)?;
    let ord = min_fill_ordering(&net.moral_graph());
    let jg = join_graph_structuring(&net, &ord, i_bound);
    let s = decomposition_stats(&jg);
    println!("clusters {}", s.cluster_count);
    println!("max cluster size {}", s.max_cluster_size);
    println!("max label size {}", s.max_label_size);
    println!("max degree {}", s.max_degree);
    println!("separator width {}", s.separator_width);
    if dump {
        print!("{}", jg.dump());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    family: Family,
    n: Option<usize>,
    k: usize,
    c: Option<usize>,
    p: Option<usize>,
    m: Option<usize>,
    sigma: Option<f64>,
    instances: usize,
    seed: u64,
    algorithms: Vec<String>,
    i_bounds: Vec<usize>,
    iterations: Vec<usize>,
    evidence: Vec<usize>,
    out: PathBuf,
) -> Result<ijgp::Result<()>, String> {
    let family = match family {
        Family::Random => FamilySpec::Random {
            n: n.ok_or("--n is required for the random family")?,
            k,
            c: c.ok_or("--c is required for the random family")?,
            p: p.unwrap_or(2),
        },
        Family::Grid => FamilySpec::Grid {
            m: m.ok_or("--m is required for the grid family")?,
            k,
        },
        Family::Coding => FamilySpec::Coding {
            k_info: n.ok_or("--n (information bits) is required for the coding family")?,
            parents: p.unwrap_or(4),
            sigma: sigma.ok_or("--sigma is required for the coding family")?,
        },
    };
    let algorithms = algorithms
        .iter()
        .map(|s| Algorithm::from_str(s).ok_or(format!("unknown algorithm `{s}`")))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ExperimentSpec {
        family,
        instances,
        seed,
        algorithms,
        i_bounds,
        iterations,
        evidence_counts: evidence,
        guard: Guard::default(),
    };
    Ok(run_experiment(&spec).and_then(|records| emit_csv(&records, &out)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Solve { model, evidence, algorithm, i_bound, iterations, seed: _, out } => {
            solve(model, evidence, algorithm, i_bound, iterations, out)
        }
        Cmd::Decompose { model, i_bound, dump } => decompose(model, i_bound, dump),
        Cmd::Bench {
            family,
            n,
            k,
            c,
            p,
            m,
            sigma,
            instances,
            seed,
            algorithms,
            i_bounds,
            iterations,
            evidence,
            out,
        } => match bench(
            family, n, k, c, p, m, sigma, instances, seed, algorithms, i_bounds,
            iterations, evidence, out,
        ) {
            Ok(r) => r,
            Err(msg) => return usage_error(&msg),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
