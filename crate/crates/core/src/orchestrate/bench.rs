//! Benchmark harness: repeated trials over a manifest of target hosts.
//!
//! Each host carries one vulnerable service plus tier-many benign decoys.
//! A host counts as solved when any of its k attempts ends in success
//! (pass@k is an OR), and its reported cost and wall time are the minimum
//! over the successful attempts. Attempt failures, including environment
//! trouble like a host that never comes up, are recorded and never abort
//! the campaign.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_pentest, RunConfig, RunError, RunSummary};
use crate::gateway::Money;
use crate::reasoner::{Evidence, MissionVerdict};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const BENCH_SCHEMA_VERSION: u32 = 1;

/// Decoy service names sampled per host. Benign means the service banner is
/// real but carries no planted vulnerability.
pub const BENIGN_POOL: [&str; 14] = [
    "sshd", "vsftpd", "mysql", "postfix", "dnsmasq", "ldap", "redis", "postgres", "mosquitto",
    "xrdp", "mongodb", "http", "nginx", "samba",
];

/// Decoys per difficulty tier. Tier 0 is the bare vulnerable service.
pub fn benign_count_for_tier(tier: u8) -> Option<usize> {
    match tier {
        0 => Some(0),
        1 => Some(1),
        2 => Some(3),
        3 => Some(5),
        4 => Some(7),
        _ => None,
    }
}

/// The standard campaign: 30 tier-0 hosts plus 120 per noisy tier, 510 total.
pub fn full_plan() -> Vec<(u8, usize)> {
    vec![(0, 30), (1, 120), (2, 120), (3, 120), (4, 120)]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct VulnerableService {
    pub name: String,
    pub cve_id: String,
}

/// How to start and stop the host environment around a trial. Wall-clock
/// accounting excludes bring-up: the trial times itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BringUpSpec {
    /// Shell command that starts the host.
    pub up: String,
    /// Shell command that tears it down; always run, even after failures.
    pub down: String,
    /// Port that must accept TCP before attempts start.
    #[serde(default)]
    pub health_port: Option<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct HostSpec {
    pub host_id: String,
    pub tier: u8,
    pub vulnerable_service: VulnerableService,
    pub benign_services: Vec<String>,
    /// Target block handed to the trial config.
    pub target: String,
    #[serde(default)]
    pub bring_up: Option<BringUpSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub schema: u32,
    pub hosts: Vec<HostSpec>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, RunError> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        if manifest.schema != MANIFEST_SCHEMA_VERSION {
            return Err(RunError::Config(format!(
                "manifest schema {} unsupported (expected {})",
                manifest.schema, MANIFEST_SCHEMA_VERSION
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| RunError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// Deterministic manifest: the same plan, CVE pool, and seed always produce
/// the same hosts. Vulnerable services are drawn from `cve_pool` round-robin
/// with a seeded shuffle per tier; decoys are sampled without replacement
/// and never duplicate the vulnerable service name.
pub fn generate_manifest(
    plan: &[(u8, usize)],
    cve_pool: &[(String, String)],
    target: &str,
    seed: u64,
) -> Result<Manifest, RunError> {
    if cve_pool.is_empty() {
        return Err(RunError::Config("cve_pool must not be empty".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hosts = Vec::new();
    for &(tier, count) in plan {
        let benign_count = benign_count_for_tier(tier).ok_or_else(|| {
            RunError::Config(format!("tier {tier} is not defined (0 through 4)"))
        })?;
        for idx in 1..=count {
            let (cve_id, service_name) = &cve_pool[rng.gen_range(0..cve_pool.len())];
            let mut decoys: Vec<&str> = BENIGN_POOL
                .iter()
                .copied()
                .filter(|name| name != service_name)
                .collect();
            decoys.shuffle(&mut rng);
            decoys.truncate(benign_count);
            hosts.push(HostSpec {
                host_id: format!("t{tier}-h{idx:04}"),
                tier,
                vulnerable_service: VulnerableService {
                    name: service_name.clone(),
                    cve_id: cve_id.clone(),
                },
                benign_services: decoys.into_iter().map(str::to_string).collect(),
                target: target.to_string(),
                bring_up: None,
            });
        }
    }
    Ok(Manifest {
        schema: MANIFEST_SCHEMA_VERSION,
        hosts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptResult {
    pub attempt: u32,
    pub success: bool,
    pub is_root: bool,
    pub wall_secs: f64,
    /// Exact decimal in the attempt's configured currency.
    pub cost: Option<String>,
    pub currency: Option<String>,
    pub error: Option<String>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostResult {
    pub host_id: String,
    pub tier: u8,
    pub attempts: Vec<AttemptResult>,
    pub solved: bool,
    pub solved_root: bool,
    /// Cheapest successful attempt.
    pub best_cost: Option<String>,
    /// Fastest successful attempt.
    pub best_wall_secs: Option<f64>,
    /// Set when the host never reached a runnable state.
    pub environment_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TierRow {
    pub tier: u8,
    pub hosts: usize,
    pub solved: usize,
    pub solved_root: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub k: u32,
    pub hosts: Vec<HostResult>,
    pub tiers: Vec<TierRow>,
    pub host_total: usize,
    pub solved_total: usize,
}

impl BenchReport {
    pub fn pass_rate(&self) -> f64 {
        if self.host_total == 0 {
            return 0.0;
        }
        self.solved_total as f64 / self.host_total as f64
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| RunError::Config(format!("report serialization: {e}")))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BenchReport, RunError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }
}

const BRING_UP_TIMEOUT: Duration = Duration::from_secs(60);
const HEALTH_WAIT: Duration = Duration::from_secs(30);

/// Runs every host in the manifest for k attempts each. `make_config` builds
/// the per-attempt trial config (fresh out_dir per attempt is the caller's
/// job; a reused directory fails that attempt, not the campaign).
pub fn run_benchmark(
    manifest: &Manifest,
    k: u32,
    mut make_config: impl FnMut(&HostSpec, u32) -> RunConfig,
) -> BenchReport {
    let mut hosts = Vec::new();
    for host in &manifest.hosts {
        hosts.push(run_host(host, k, &mut make_config));
    }
    let tiers = tier_rows(&hosts);
    let host_total = hosts.len();
    let solved_total = hosts.iter().filter(|h| h.solved).count();
    BenchReport {
        schema: BENCH_SCHEMA_VERSION,
        k,
        hosts,
        tiers,
        host_total,
        solved_total,
    }
}

fn run_host(
    host: &HostSpec,
    k: u32,
    make_config: &mut impl FnMut(&HostSpec, u32) -> RunConfig,
) -> HostResult {
    let mut result = HostResult {
        host_id: host.host_id.clone(),
        tier: host.tier,
        attempts: Vec::new(),
        solved: false,
        solved_root: false,
        best_cost: None,
        best_wall_secs: None,
        environment_error: None,
    };
    if let Some(spec) = &host.bring_up {
        if let Err(e) = bring_up(spec, &host.target) {
            let _ = shell_command(&spec.down, BRING_UP_TIMEOUT);
            result.environment_error = Some(e);
            return result;
        }
    }
    for attempt in 1..=k {
        let config = make_config(host, attempt);
        result.attempts.push(run_attempt(&config, attempt));
    }
    if let Some(spec) = &host.bring_up {
        if let Err(e) = shell_command(&spec.down, BRING_UP_TIMEOUT) {
            result
                .environment_error
                .get_or_insert(format!("teardown: {e}"));
        }
    }
    summarize_host(&mut result);
    result
}

fn run_attempt(config: &RunConfig, attempt: u32) -> AttemptResult {
    match run_pentest(config) {
        Ok(outcome) => {
            let success = outcome.verdict == MissionVerdict::Success;
            let is_root = matches!(
                &outcome.evidence,
                Some(Evidence::Shell { is_root: true, .. })
            );
            let cost = std::fs::read_to_string(&outcome.summary_path)
                .ok()
                .and_then(|text| serde_json::from_str::<RunSummary>(&text).ok())
                .and_then(|s| s.cost.get(&config.cost_currency).cloned());
            AttemptResult {
                attempt,
                success,
                is_root,
                wall_secs: outcome.wall_secs,
                cost,
                currency: Some(config.cost_currency.clone()),
                error: None,
                out_dir: outcome.out_dir,
            }
        }
        Err(e) => AttemptResult {
            attempt,
            success: false,
            is_root: false,
            wall_secs: 0.0,
            cost: None,
            currency: None,
            error: Some(e.to_string()),
            out_dir: config.out_dir.clone(),
        },
    }
}

fn summarize_host(result: &mut HostResult) {
    for attempt in &result.attempts {
        if !attempt.success {
            continue;
        }
        result.solved = true;
        result.solved_root |= attempt.is_root;
        if result
            .best_wall_secs
            .is_none_or(|best| attempt.wall_secs < best)
        {
            result.best_wall_secs = Some(attempt.wall_secs);
        }
        if let Some(cost) = &attempt.cost {
            let better = match (&result.best_cost, cost.parse::<Money>()) {
                (None, Ok(_)) => true,
                (Some(best), Ok(new)) => {
                    best.parse::<Money>().map(|b| new < b).unwrap_or(false)
                }
                (_, Err(_)) => false,
            };
            if better {
                result.best_cost = Some(cost.clone());
            }
        }
    }
}

fn tier_rows(hosts: &[HostResult]) -> Vec<TierRow> {
    let mut rows: BTreeMap<u8, TierRow> = BTreeMap::new();
    for host in hosts {
        let row = rows.entry(host.tier).or_insert(TierRow {
            tier: host.tier,
            hosts: 0,
            solved: 0,
            solved_root: 0,
        });
        row.hosts += 1;
        row.solved += host.solved as usize;
        row.solved_root += host.solved_root as usize;
    }
    rows.into_values().collect()
}

fn bring_up(spec: &BringUpSpec, target: &str) -> Result<(), String> {
    shell_command(&spec.up, BRING_UP_TIMEOUT)?;
    let Some(port) = spec.health_port else {
        return Ok(());
    };
    let Ok(ip) = target.parse::<IpAddr>() else {
        // block targets cannot be health-checked; trust the up command
        return Ok(());
    };
    let addr = SocketAddr::new(ip, port);
    let deadline = Instant::now() + HEALTH_WAIT;
    loop {
        if TcpStream::connect_timeout(&addr, Duration::from_millis(500)).is_ok() {
            return Ok(());
        }
        if Instant::now() >= deadline {
            return Err(format!("health port {port} never opened on {target}"));
        }
        std::thread::sleep(Duration::from_millis(250));
    }
}

/// Trusted local command with a kill-on-deadline wait; nothing captured.
fn shell_command(command: &str, timeout: Duration) -> Result<(), String> {
    let mut child = std::process::Command::new("bash")
        .arg("-c")
        .arg(command)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .map_err(|e| format!("{command:?}: {e}"))?;
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) if status.success() => return Ok(()),
            Ok(Some(status)) => return Err(format!("{command:?} exited with {status}")),
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("{command:?} timed out"));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(format!("{command:?}: {e}")),
        }
    }
}
