//! Manages the local exploit registry: ingest proof-of-concept repos into
//! packaged records, build their container images, import module references
//! from installed tools, and query what is ready to fire.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pentest_core::arsenal::{
    build_ued, classify_exploit, filter_candidates, render_dockerfile, render_manual,
    snapshot_repo, ArsenalRegistry, BuildStatus, ExploitQuery, ExploitRecord, ExploitType,
    ServiceKey, Source, DEFAULT_NATIVE_RANK,
};
use pentest_core::gateway::{load_profiles, Gateway, ModelProfile, ScriptedBackend};
use pentest_core::prompts::PromptSet;

#[derive(Parser)]
#[command(name = "arsenal", about = "Exploit registry tooling", version)]
struct Cli {
    /// Registry root directory.
    #[arg(long, global = true, default_value = "arsenal-registry")]
    registry: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Distill a proof-of-concept repo into a packaged record.
    Ingest {
        /// Path to the exploit repository.
        #[arg(long)]
        repo: PathBuf,
        /// CVE the exploit targets.
        #[arg(long)]
        cve: String,
        /// Service the exploit applies to.
        #[arg(long)]
        service: String,
        /// Affected version range, e.g. "2.3.0-2.4.1", "1.x", "*".
        #[arg(long, default_value = "*")]
        versions: String,
        /// Record id; defaults to the lowercased CVE.
        #[arg(long)]
        id: Option<String>,
        /// Firing priority; lower fires first.
        #[arg(long, default_value_t = DEFAULT_NATIVE_RANK)]
        rank: u32,
        /// Model profiles file.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Profile to call for filtering and descriptor extraction.
        #[arg(long)]
        profile: Option<String>,
        /// Replay model responses from this transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Prompt template directory overriding the built-ins.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Build container images for script records.
    Build {
        /// Record to build; all script records when omitted.
        #[arg(long)]
        record: Option<String>,
        #[arg(long, default_value = "docker")]
        container_cli: String,
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
    },
    /// Import module references from an installed tool's catalog.
    Import {
        /// Catalog file (TOML).
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Look up records by CVE or by service and version.
    Query {
        #[arg(long)]
        cve: Option<String>,
        #[arg(long, conflicts_with = "cve")]
        service: Option<String>,
        #[arg(long, requires = "service")]
        version: Option<String>,
        /// Print full manuals instead of the one-line table.
        #[arg(long)]
        manual: bool,
    },
    /// List every record in the registry.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.registry, cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(registry_root: PathBuf, cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Ingest {
            repo,
            cve,
            service,
            versions,
            id,
            rank,
            profiles,
            profile,
            transcript,
            prompts,
        } => ingest(
            &registry_root,
            &repo,
            &cve,
            &service,
            &versions,
            id,
            rank,
            profiles.as_deref(),
            profile.as_deref(),
            transcript.as_deref(),
            prompts.as_deref(),
        ),
        Cmd::Build { record, container_cli, timeout } => {
            build(&registry_root, record.as_deref(), &container_cli, timeout)
        }
        Cmd::Import { catalog } => {
            let mut registry = ArsenalRegistry::open_or_create(&registry_root)
                .map_err(|e| anyhow::anyhow!("registry: {e}"))?;
            let outcome = registry
                .import_external_tool(&catalog)
                .map_err(|e| anyhow::anyhow!("import: {e}"))?;
            println!(
                "imported {} module(s), skipped {}",
                outcome.imported.len(),
                outcome.warnings.len()
            );
            for id in &outcome.imported {
                println!("  {id}");
            }
            for warning in &outcome.warnings {
                println!("  skipped: {warning}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Query { cve, service, version, manual } => {
            let registry = ArsenalRegistry::open(&registry_root)
                .map_err(|e| anyhow::anyhow!("registry: {e}"))?;
            let query = match (&cve, &service) {
                (Some(c), _) => ExploitQuery::by_cve(c),
                (None, Some(s)) => ExploitQuery::by_service(s, version.as_deref()),
                (None, None) => bail!("pass --cve or --service"),
            };
            let hits = registry.query(&query);
            if hits.is_empty() {
                println!("no matching records");
                return Ok(ExitCode::from(1));
            }
            if manual {
                for record in hits {
                    println!("{}", record.manual.trim_end());
                    println!();
                }
            } else {
                print_table(hits.into_iter());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::List => {
            let registry = ArsenalRegistry::open(&registry_root)
                .map_err(|e| anyhow::anyhow!("registry: {e}"))?;
            print_table(registry.records());
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    registry_root: &Path,
    repo: &Path,
    cve: &str,
    service: &str,
    versions: &str,
    id: Option<String>,
    rank: u32,
    profiles: Option<&Path>,
    profile: Option<&str>,
    transcript: Option<&Path>,
    prompts_dir: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mut registry = ArsenalRegistry::open_or_create(registry_root)
        .map_err(|e| anyhow::anyhow!("registry: {e}"))?;
    let prompt_set = match prompts_dir {
        Some(dir) => PromptSet::from_dir(dir).map_err(|e| anyhow::anyhow!("prompts: {e}"))?,
        None => PromptSet::builtin(),
    };
    let (mut gateway, prof) = connect(profiles, profile, transcript)?;

    let candidate = snapshot_repo(repo, cve).map_err(|e| anyhow::anyhow!("snapshot: {e}"))?;
    println!(
        "{}: {} file(s), {} byte(s) of entry code",
        cve,
        candidate.files.len(),
        candidate.excerpt.len()
    );

    let mut filtered = filter_candidates(&mut gateway, &prof, &prompt_set, &[candidate]);
    let (candidate, verdict) = filtered.remove(0);
    println!("filter: {} ({})", if verdict.keep { "keep" } else { "drop" }, verdict.trait_label);
    if !verdict.keep {
        return Ok(ExitCode::from(1));
    }

    let (exploit_type, degraded) = classify_exploit(&mut gateway, &prof, &prompt_set, &candidate)
        .map_err(|e| anyhow::anyhow!("classify: {e}"))?;
    println!(
        "type: {exploit_type}{}",
        if degraded { " (defaulted; reply was unparsable)" } else { "" }
    );

    let ued = build_ued(&mut gateway, &prof, &prompt_set, &candidate, exploit_type)
        .map_err(|e| anyhow::anyhow!("descriptor: {e}"))?;

    let service_key = ServiceKey::new(service, versions);
    let manual = render_manual(cve, exploit_type, &service_key, &ued);
    let dockerfile = if exploit_type == ExploitType::Script {
        Some(render_dockerfile(&ued).map_err(|e| anyhow::anyhow!("build recipe: {e}"))?)
    } else {
        None
    };

    let record_id = id.unwrap_or_else(|| cve.to_ascii_lowercase());
    let record = ExploitRecord {
        record_id: record_id.clone(),
        cve_id: cve.to_string(),
        source: Source::Repo { path: repo.display().to_string() },
        exploit_type,
        ued: Some(ued),
        dockerfile,
        manual,
        build_status: BuildStatus::default(),
        rank,
        affected_service: service_key,
    };
    let context = (exploit_type == ExploitType::Script).then_some(repo);
    registry
        .add_record(record, context)
        .map_err(|e| anyhow::anyhow!("store: {e}"))?;
    println!("stored {record_id} in {}", registry_root.display());
    Ok(ExitCode::SUCCESS)
}

/// Scripted transcript or a live endpoint; scripted needs no profiles file.
fn connect(
    profiles: Option<&Path>,
    profile: Option<&str>,
    transcript: Option<&Path>,
) -> anyhow::Result<(Gateway, ModelProfile)> {
    let prof = match (profiles, profile) {
        (Some(path), Some(name)) => {
            let table = load_profiles(path).map_err(|e| anyhow::anyhow!("profiles: {e}"))?;
            table
                .get(name)
                .cloned()
                .with_context(|| format!("no profile named {name:?}"))?
        }
        (None, None) if transcript.is_some() => ModelProfile::test_profile("scripted"),
        _ => bail!("pass --profiles with --profile, or --transcript alone"),
    };
    let gateway = match transcript {
        Some(path) => {
            let backend =
                ScriptedBackend::from_file(path).map_err(|e| anyhow::anyhow!("transcript: {e}"))?;
            Gateway::new(Box::new(backend))
        }
        None => Gateway::new(Box::new(pentest_core::gateway::HttpBackend::new())),
    };
    Ok((gateway, prof))
}

fn build(
    registry_root: &Path,
    record: Option<&str>,
    container_cli: &str,
    timeout: f64,
) -> anyhow::Result<ExitCode> {
    let mut registry = ArsenalRegistry::open(registry_root)
        .map_err(|e| anyhow::anyhow!("registry: {e}"))?;
    let targets: Vec<String> = match record {
        Some(id) => vec![id.to_string()],
        None => registry
            .records()
            .filter(|r| r.exploit_type == ExploitType::Script)
            .map(|r| r.record_id.clone())
            .collect(),
    };
    if targets.is_empty() {
        println!("nothing to build");
        return Ok(ExitCode::SUCCESS);
    }
    let mut failures = 0;
    for id in &targets {
        let status = registry
            .validate_build(id, container_cli, timeout)
            .map_err(|e| anyhow::anyhow!("build {id}: {e}"))?;
        match status {
            BuildStatus::Built => println!("{id}: built"),
            BuildStatus::NotApplicable => println!("{id}: nothing to build"),
            BuildStatus::Failed { reason } => {
                failures += 1;
                println!("{id}: FAILED");
                for line in reason.lines().take(10) {
                    println!("  {line}");
                }
            }
        }
    }
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn print_table<'a>(records: impl Iterator<Item = &'a ExploitRecord>) {
    println!(
        "{:<22} {:<16} {:<12} {:<18} {:<5} {}",
        "RECORD", "CVE", "TYPE", "SERVICE", "RANK", "BUILD"
    );
    for r in records {
        let build = match &r.build_status {
            BuildStatus::NotApplicable => "-".to_string(),
            BuildStatus::Built => "built".to_string(),
            BuildStatus::Failed { .. } => "failed".to_string(),
        };
        println!(
            "{:<22} {:<16} {:<12} {:<18} {:<5} {}",
            r.record_id,
            r.cve_id,
            r.exploit_type.to_string(),
            format!("{} {}", r.affected_service.name, r.affected_service.version_range),
            r.rank,
            build
        );
    }
}
