//! Command-line front end: instance generation, suite runs, structure audits,
//! and query-scaling benchmarks. All randomness is seeded; the `HS_SEED`
//! environment variable overrides `--seed` when set.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use weighfind::family::SubsetFamily;
use weighfind::graphs::{audit_partition, reconstruct_bipartite, reconstruct_general, GraphConfig};
use weighfind::harness::{
    gen_bipartite, gen_coins, gen_general, mix_seed, rows_to_csv, run_suite_with, traces_to_csv,
    ExperimentSpec, Kind, PlanKind, Profile,
};
use weighfind::oracle::{graph_query, lift_query, QueryLedger};
use weighfind::Result;

#[derive(Parser)]
#[command(name = "weighfind", about = "Reconstruct hidden weights and graphs from additive set queries", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random instance and emit it as JSON.
    Gen {
        #[command(subcommand)]
        what: GenWhat,
    },
    /// Run a seeded reconstruction suite; emits per-trial CSV and a JSON summary.
    Run {
        #[command(subcommand)]
        what: RunWhat,
    },
    /// White-box structure audits on freshly generated instances.
    Audit {
        #[command(subcommand)]
        what: AuditWhat,
    },
    /// Run a suite and report normalized query-count ratios.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenWhat {
    Coins(CommonArgs),
    Graph(GenGraphArgs),
}

#[derive(Subcommand)]
enum RunWhat {
    Coins(RunArgs),
    Bipartite(RunArgs),
    General(RunArgs),
}

#[derive(Subcommand)]
enum AuditWhat {
    /// Build the layered coin partition and check its per-level bounds.
    Family(AuditArgs),
    /// Random cell assignment on a bipartite instance; checks degree bounds.
    Partition(AuditArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PlanArg::Identity)]
    plan: PlanArg,
    /// Query-cap multiplier; defaults per problem kind.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum, default_value_t = ProfileArg::Uniform)]
    profile: ProfileArg,
    /// Verification repeats for coin runs.
    #[arg(long, default_value_t = 2)]
    mu: usize,
    /// Output path (instance JSON for gen; trial CSV for run/bench, with the
    /// summary written alongside as <out>.summary.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace CSV path: per-step walk trace for coins, per-phase query
    /// attribution for graphs.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct GenGraphArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Emit a general (non-bipartite) instance instead of a bipartite one.
    #[arg(long)]
    general: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Clone)]
struct AuditArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanArg {
    Identity,
    Compressed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Uniform,
    StarMix,
}

fn to_spec(kind: Kind, a: &CommonArgs) -> ExperimentSpec {
    let seed = std::env::var("HS_SEED")
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .unwrap_or(a.seed);
    ExperimentSpec {
        kind,
        n: a.n,
        m: a.m,
        alpha: a.alpha,
        beta: a.beta,
        eps: a.eps,
        trials: a.trials,
        seed,
        plan: match a.plan {
            PlanArg::Identity => PlanKind::Identity,
            PlanArg::Compressed => PlanKind::Compressed,
        },
        eta: a.eta,
        profile: match a.profile {
            ProfileArg::Uniform => Profile::Uniform,
            ProfileArg::StarMix => Profile::StarMix,
        },
        mu: a.mu,
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Phase attribution CSV for a single graph reconstruction (trial 0 of the
/// spec's seed stream, matching the suite's first row).
fn graph_phase_csv(spec: &ExperimentSpec) -> Result<String> {
    let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "gen"));
    let mut run_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "run"));
    let mut led = QueryLedger::new();
    let rep = match spec.kind {
        Kind::Bipartite => {
            let (inst, _) = gen_bipartite(spec, &mut gen_rng)?;
            let mut cfg = GraphConfig::bipartite(inst.nx(), inst.ny(), spec.m, spec.alpha, spec.beta);
            if let Some(eta) = spec.eta {
                cfg.eta = eta;
            }
            let inst_ref = &inst;
            let led_ref = &mut led;
            reconstruct_bipartite(
                Box::new(move |a: &[usize], b: &[usize]| graph_query(inst_ref, a, b, led_ref, "oracle")),
                cfg,
                &mut run_rng,
            )
        }
        Kind::General => {
            let (inst, _) = gen_general(spec, &mut gen_rng)?;
            let inst_ref = &inst;
            let led_ref = &mut led;
            reconstruct_general(
                Box::new(move |a: &[usize], b: &[usize]| lift_query(inst_ref, a, b, led_ref, "oracle")),
                spec.n,
                spec.m,
                spec.alpha,
                spec.beta,
                &mut run_rng,
            )
        }
        Kind::Coins => unreachable!("coins use the walk trace"),
    };
    let mut s = String::from("phase,queries,edges_found\n");
    for (name, ph) in &rep.phases {
        s.push_str(&format!("{name},{},{}\n", ph.queries, ph.edges_found));
    }
    Ok(s)
}

fn cmd_run(kind: Kind, args: &RunArgs) -> Result<()> {
    let spec = to_spec(kind, &args.common);
    let want_walk_trace = kind == Kind::Coins && args.common.trace.is_some();
    let out = run_suite_with(&spec, want_walk_trace)?;
    let summary_json = serde_json::to_string_pretty(&out.summary)?;
    match &args.common.out {
        Some(p) => {
            std::fs::write(p, rows_to_csv(&out.rows)?)?;
            let mut sp = p.clone();
            sp.set_extension("summary.json");
            std::fs::write(sp, &summary_json)?;
        }
        None => println!("{summary_json}"),
    }
    if let Some(tp) = &args.common.trace {
        let text = match kind {
            Kind::Coins => traces_to_csv(&out.traces)?,
            _ => graph_phase_csv(&spec)?,
        };
        std::fs::write(tp, text)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Gen { what } => match what {
            GenWhat::Coins(a) => {
                let spec = to_spec(Kind::Coins, a);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "gen"));
                let inst = gen_coins(&spec, &mut rng)?;
                emit(&a.out, &inst.to_json()?)?;
            }
            GenWhat::Graph(g) => {
                let kind = if g.general { Kind::General } else { Kind::Bipartite };
                let spec = to_spec(kind, &g.common);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0, "gen"));
                let json = if g.general {
                    gen_general(&spec, &mut rng)?.0.to_json()?
                } else {
                    gen_bipartite(&spec, &mut rng)?.0.to_json()?
                };
                emit(&g.common.out, &json)?;
            }
        },
        Cmd::Run { what } => match what {
            RunWhat::Coins(a) => cmd_run(Kind::Coins, a)?,
            RunWhat::Bipartite(a) => cmd_run(Kind::Bipartite, a)?,
            RunWhat::General(a) => cmd_run(Kind::General, a)?,
        },
        Cmd::Audit { what } => match what {
            AuditWhat::Family(a) => {
                let spec = to_spec(Kind::Coins, &a.common);
                let mut reports = Vec::with_capacity(spec.trials);
                for t in 0..spec.trials {
                    let mut gen_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
                    let mut fam_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "family"));
                    let inst = gen_coins(&spec, &mut gen_rng)?;
                    let ground: Vec<usize> = (1..=spec.n).collect();
                    let fam = SubsetFamily::build(&ground, spec.m, spec.n, &mut fam_rng)?;
                    fam.check_structure(&ground)?;
                    reports.push(fam.audit(&inst));
                }
                emit(&a.common.out, &serde_json::to_string_pretty(&reports)?)?;
            }
            AuditWhat::Partition(a) => {
                let spec = to_spec(Kind::Bipartite, &a.common);
                let mut reports = Vec::with_capacity(spec.trials);
                for t in 0..spec.trials {
                    let mut gen_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "gen"));
                    let mut cell_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, t as u64, "cells"));
                    let (inst, _) = gen_bipartite(&spec, &mut gen_rng)?;
                    reports.push(audit_partition(&inst, &mut cell_rng));
                }
                emit(&a.common.out, &serde_json::to_string_pretty(&reports)?)?;
            }
        },
        Cmd::Bench(b) => {
            let spec = to_spec(Kind::Coins, &b.common);
            let out = run_suite_with(&spec, false)?;
            let s = &out.summary;
            println!(
                "n={} m={} trials={} success_rate={:.3} queries_mean={:.1} ratio_base={:.3} ratio_over_logm={:.3}",
                spec.n, spec.m, spec.trials, s.success_rate, s.queries_mean, s.ratio_base, s.ratio_over_logm
            );
            if let Some(p) = &b.common.out {
                std::fs::write(p, rows_to_csv(&out.rows)?)?;
                let mut sp = p.clone();
                sp.set_extension("summary.json");
                std::fs::write(sp, serde_json::to_string_pretty(s)?)?;
            }
        }
    }
    Ok(())
}
