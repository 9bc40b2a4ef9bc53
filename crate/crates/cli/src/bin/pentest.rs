//! Front end for single trials and benchmark campaigns.
//!
//! Exit codes for `run` mirror the mission verdict: 0 success, 2 the tree
//! was exhausted, 3 a budget stopped the run, 4 anything that kept a verdict
//! from being reached at all.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pentest_core::events::read_log;
use pentest_core::gateway::load_profiles;
use pentest_core::orchestrate::bench::{
    full_plan, generate_manifest, run_benchmark, BenchReport, Manifest,
};
use pentest_core::orchestrate::report::{
    audit_granularity_routing, audit_limited_instruction, compile_deny_patterns,
    default_deny_patterns, render_bench_table, render_timeline, verify_summary,
};
use pentest_core::orchestrate::{evidence_label, exit_code, run_pentest, RunConfig};

#[derive(Parser)]
#[command(name = "pentest", about = "Autonomous penetration testing agent", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one trial against one target.
    Run {
        /// Trial configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured target.
        #[arg(long)]
        target: Option<String>,
        /// Override the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Replay responses from this transcript instead of calling a model.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Generate a campaign manifest.
    Manifest {
        /// Where to write the manifest (JSON).
        #[arg(long)]
        out: PathBuf,
        /// TOML file with [[entries]] of service/cve pairs to sample from.
        #[arg(long)]
        cve_pool: PathBuf,
        /// Target every generated host points at.
        #[arg(long)]
        target: String,
        /// Tier plan as tier=count pairs; defaults to the full campaign.
        #[arg(long = "tier", value_name = "TIER=COUNT")]
        tiers: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every host in a manifest, k attempts each.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        /// Base trial configuration; target and out_dir are set per attempt.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Campaign output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify and display a finished run or campaign.
    Report {
        /// Run directory holding events.log and summary.json.
        #[arg(long, conflicts_with = "bench")]
        run: Option<PathBuf>,
        /// Model profiles file, for token prices.
        #[arg(long, requires = "run")]
        profiles: Option<PathBuf>,
        /// Profile the run was priced under.
        #[arg(long, requires = "profiles")]
        profile: Option<String>,
        /// Print the per-event timeline too.
        #[arg(long, requires = "run")]
        timeline: bool,
        /// Campaign report (JSON) to tabulate.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Run { config, target, out_dir, transcript } => {
            let mut cfg = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(t) = target {
                cfg.target = t;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if let Some(t) = transcript {
                cfg.transcript = Some(t);
            }
            let outcome = run_pentest(&cfg)?;
            println!("run {}: {}", outcome.run_id, outcome.verdict);
            if let Some(ev) = &outcome.evidence {
                println!("evidence: {}", evidence_label(ev));
            }
            println!(
                "phases {} / instructions {} / model calls {} ({} refused)",
                outcome.phases_planned,
                outcome.instructions_executed,
                outcome.gateway_calls,
                outcome.refusals
            );
            println!("artifacts: {}", outcome.out_dir.display());
            Ok(ExitCode::from(exit_code(outcome.verdict) as u8))
        }
        Cmd::Manifest { out, cve_pool, target, tiers, seed } => {
            let pool = load_cve_pool(&cve_pool)?;
            let plan = if tiers.is_empty() { full_plan() } else { parse_plan(&tiers)? };
            let manifest = generate_manifest(&plan, &pool, &target, seed)?;
            manifest.save(&out)?;
            println!("{} host(s) written to {}", manifest.hosts.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench { manifest, config, k, out } => {
            if k == 0 {
                bail!("k must be at least 1");
            }
            let manifest = Manifest::load(&manifest)?;
            let base = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            std::fs::create_dir_all(&out)?;
            let report = run_benchmark(&manifest, k, |host, attempt| {
                let mut cfg = base.clone();
                cfg.target = host.target.clone();
                cfg.out_dir = out.join(&host.host_id).join(format!("attempt-{attempt}"));
                cfg.run_id = Some(format!("{}-a{attempt}", host.host_id));
                cfg
            });
            let report_path = out.join("bench.json");
            report.save(&report_path)?;
            print!("{}", render_bench_table(&report));
            println!("report: {}", report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { run, profiles, profile, timeline, bench } => {
            if let Some(path) = bench {
                let report = BenchReport::load(&path)?;
                print!("{}", render_bench_table(&report));
                return Ok(ExitCode::SUCCESS);
            }
            let Some(run_dir) = run else {
                bail!("pass --run DIR or --bench FILE");
            };
            let (profiles_path, profile_name) = match (profiles, profile) {
                (Some(pp), Some(pn)) => (pp, pn),
                _ => bail!("--run needs --profiles and --profile for token prices"),
            };
            let table = load_profiles(&profiles_path)
                .map_err(|e| anyhow::anyhow!("profiles: {e}"))?;
            let prof = table
                .get(&profile_name)
                .with_context(|| format!("no profile named {profile_name:?}"))?;

            let summary = verify_summary(&run_dir, prof.price_in, prof.price_out, &prof.currency)?;
            println!("summary.json verified against events.log");
            println!(
                "run {}: {} against {} ({})",
                summary.run_id, summary.outcome, summary.target, summary.goal_mode
            );
            for (currency, amount) in &summary.cost {
                println!("cost: {amount} {currency}");
            }

            let (events, _) = read_log(&run_dir.join("events.log"))?;
            let deny = compile_deny_patterns(&default_deny_patterns())
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let first_call = audit_limited_instruction(&events, None, &deny);
            let routing = audit_granularity_routing(&events);
            let mut failed = false;
            if first_call.ok {
                println!("limited-instruction audit: pass");
            } else {
                failed = true;
                println!("limited-instruction audit: FAIL");
                for v in &first_call.violations {
                    println!("  {v}");
                }
            }
            if routing.is_empty() {
                println!("granularity-routing audit: pass");
            } else {
                failed = true;
                println!("granularity-routing audit: FAIL");
                for v in &routing {
                    println!("  {v}");
                }
            }
            if timeline {
                print!("{}", render_timeline(&events));
            }
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}

fn load_cve_pool(path: &PathBuf) -> anyhow::Result<Vec<(String, String)>> {
    #[derive(serde::Deserialize)]
    struct Pool {
        entries: Vec<Entry>,
    }
    #[derive(serde::Deserialize)]
    struct Entry {
        service: String,
        cve: String,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let pool: Pool = toml::from_str(&text).context("cve pool must be TOML [[entries]]")?;
    if pool.entries.is_empty() {
        bail!("cve pool has no entries");
    }
    Ok(pool
        .entries
        .into_iter()
        .map(|e| (e.service, e.cve))
        .collect())
}

fn parse_plan(specs: &[String]) -> anyhow::Result<Vec<(u8, usize)>> {
    let mut plan = Vec::new();
    for spec in specs {
        let (tier, count) = spec
            .split_once('=')
            .with_context(|| format!("tier spec {spec:?} is not TIER=COUNT"))?;
        plan.push((tier.trim().parse()?, count.trim().parse()?));
    }
    Ok(plan)
}
