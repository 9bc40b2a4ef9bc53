//! Log-derived reporting and audits.
//!
//! The event log is the source of truth for a run. Everything in
//! `summary.json` can be recomputed from it (given the model's prices), which
//! is what `rebuild_summary` does; `verify_summary` proves a stored summary
//! byte-identical to that reconstruction. The audits check the two headline
//! discipline properties: the very first model call carries the one-sentence
//! goal and nothing more, and prompt assembly routed each role only the
//! granularities it is entitled to.

use std::collections::BTreeMap;
use std::path::Path;

use crate::events::{read_log, Event, LoggedEvent};
use crate::gateway::{CostLedger, Money, Role};
use crate::store::RunStore;

use super::bench::BenchReport;
use super::{tree_stats, RunError, RunSummary, SUMMARY_SCHEMA_VERSION};

/// Recomputes the deterministic run summary from `events.log` and the stored
/// memory tree. Token prices are per million, matching the profile that ran
/// the trial; they are the only inputs the log does not carry.
pub fn rebuild_summary(
    run_dir: &Path,
    price_in: Money,
    price_out: Money,
    currency: &str,
) -> Result<RunSummary, RunError> {
    let (events, warnings) = read_log(&run_dir.join("events.log"))?;
    if !warnings.is_empty() {
        return Err(RunError::Config(format!(
            "event log has {} corrupt line(s): {}",
            warnings.len(),
            warnings.join("; ")
        )));
    }

    let mut run_id = None;
    let mut target = None;
    let mut goal_mode = None;
    let mut outcome = None;
    let mut evidence = None;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut phases_planned: u32 = 0;
    let mut instructions: u64 = 0;
    let mut calls: u64 = 0;
    let mut refusals: u64 = 0;
    let mut tokens_in: u64 = 0;
    let mut tokens_out: u64 = 0;
    let mut cost_total = Money::zero();

    for logged in &events {
        *counts.entry(logged.event.kind().to_string()).or_insert(0) += 1;
        match &logged.event {
            Event::RunStarted {
                run_id: id,
                target: t,
                goal_mode: g,
                ..
            } => {
                run_id = Some(id.clone());
                target = Some(t.clone());
                goal_mode = Some(g.clone());
            }
            Event::MissionEnded {
                verdict,
                evidence: ev,
                ..
            } => {
                outcome = Some(verdict.clone());
                evidence = ev.clone();
            }
            Event::PhasePlanned { .. } => phases_planned += 1,
            Event::Executed { .. } => instructions += 1,
            Event::GatewayCall {
                tokens_in: ti,
                tokens_out: to,
                ..
            } => {
                calls += 1;
                tokens_in += ti;
                tokens_out += to;
                cost_total += CostLedger::exchange_cost(price_in, price_out, *ti, *to);
            }
            Event::GatewayRefusal {
                tokens_in: ti,
                tokens_out: to,
                ..
            } => {
                calls += 1;
                refusals += 1;
                tokens_in += ti;
                tokens_out += to;
                cost_total += CostLedger::exchange_cost(price_in, price_out, *ti, *to);
            }
            _ => {}
        }
    }

    let run_id = run_id.ok_or_else(|| RunError::Config("log has no run start".to_string()))?;
    let outcome =
        outcome.ok_or_else(|| RunError::Config("log has no mission end".to_string()))?;

    let mut cost = BTreeMap::new();
    if calls > 0 {
        cost.insert(currency.to_string(), cost_total.render());
    }

    let store = RunStore::open(run_dir)?;
    let tree = store.load_tree()?;

    Ok(RunSummary {
        schema: SUMMARY_SCHEMA_VERSION,
        run_id,
        target: target.unwrap_or_default(),
        goal_mode: goal_mode.unwrap_or_default(),
        outcome,
        evidence,
        phases_planned,
        instructions_executed: instructions,
        gateway_calls: calls,
        refusals,
        tokens_in,
        tokens_out,
        cost,
        tree: tree_stats(&tree),
        events: counts,
    })
}

/// Proves the stored `summary.json` is exactly what the log implies: the
/// reconstruction must match byte for byte. Returns the rebuilt summary.
pub fn verify_summary(
    run_dir: &Path,
    price_in: Money,
    price_out: Money,
    currency: &str,
) -> Result<RunSummary, RunError> {
    let rebuilt = rebuild_summary(run_dir, price_in, price_out, currency)?;
    let stored = std::fs::read_to_string(run_dir.join("summary.json"))?;
    let expected = serde_json::to_string_pretty(&rebuilt)
        .map_err(|e| RunError::Config(format!("summary serialization: {e}")))?
        + "\n";
    if stored != expected {
        let stored_parsed: Result<RunSummary, _> = serde_json::from_str(&stored);
        let detail = match stored_parsed {
            Ok(parsed) => describe_divergence(&parsed, &rebuilt),
            Err(e) => format!("stored summary does not parse: {e}"),
        };
        return Err(RunError::Config(format!(
            "stored summary diverges from the event log: {detail}"
        )));
    }
    Ok(rebuilt)
}

fn describe_divergence(stored: &RunSummary, rebuilt: &RunSummary) -> String {
    let mut diffs = Vec::new();
    let mut check = |field: &str, a: String, b: String| {
        if a != b {
            diffs.push(format!("{field}: stored {a} vs log {b}"));
        }
    };
    check("outcome", stored.outcome.clone(), rebuilt.outcome.clone());
    check(
        "gateway_calls",
        stored.gateway_calls.to_string(),
        rebuilt.gateway_calls.to_string(),
    );
    check(
        "tokens_in",
        stored.tokens_in.to_string(),
        rebuilt.tokens_in.to_string(),
    );
    check(
        "tokens_out",
        stored.tokens_out.to_string(),
        rebuilt.tokens_out.to_string(),
    );
    check(
        "cost",
        format!("{:?}", stored.cost),
        format!("{:?}", rebuilt.cost),
    );
    check(
        "instructions_executed",
        stored.instructions_executed.to_string(),
        rebuilt.instructions_executed.to_string(),
    );
    if diffs.is_empty() {
        "field ordering or formatting".to_string()
    } else {
        diffs.join("; ")
    }
}

/// First-call discipline check.
#[derive(Debug, Clone)]
pub struct LimitedInstructionAudit {
    pub ok: bool,
    /// User content of the first model call, when the log has one.
    pub first_user_content: Option<String>,
    pub violations: Vec<String>,
}

/// Markers that must not appear in the first instruction of a run: anything
/// that would presuppose reconnaissance the agent has not done. The default
/// goal sentences are clean against this list.
pub fn default_deny_patterns() -> Vec<String> {
    [
        r"(?i)\b(sshd|vsftpd|mysql|postfix|dnsmasq|ldap|redis|postgres|postgresql|mosquitto|xrdp|mongodb|nginx|samba|apache|httpd|tomcat|drupal|wordpress|couchdb|goahead|telnet|smb|ftp)\b",
        r"\b\d{1,5}/(?:tcp|udp)\b",
        r"(?i)\bports?\s+\d+",
        r"(?i)\bCVE-\d{4}-\d{1,7}\b",
        r"(?i)\b(password|passwd|credential|username|login)s?\b",
        r"(?:/etc/|/usr/|/var/|/opt/|[A-Za-z]:\\)",
        r"(?i)\bv\d+\.\d+",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn compile_deny_patterns(patterns: &[String]) -> Result<Vec<regex::Regex>, RunError> {
    patterns
        .iter()
        .map(|p| {
            regex::Regex::new(p).map_err(|e| RunError::Config(format!("deny pattern {p:?}: {e}")))
        })
        .collect()
}

/// Checks that the run opened with the one-sentence goal: the first model
/// call must be exactly one system message plus one user message, the user
/// content must equal `expected_user` when given, and no deny pattern may
/// match it.
pub fn audit_limited_instruction(
    events: &[LoggedEvent],
    expected_user: Option<&str>,
    deny: &[regex::Regex],
) -> LimitedInstructionAudit {
    let first = events.iter().find_map(|e| match &e.event {
        Event::GatewayCall { messages, .. } => Some(messages),
        _ => None,
    });
    let Some(messages) = first else {
        return LimitedInstructionAudit {
            ok: false,
            first_user_content: None,
            violations: vec!["log contains no completed model call".to_string()],
        };
    };
    let mut violations = Vec::new();
    if messages.len() != 2 {
        violations.push(format!(
            "first call has {} messages (expected one system plus one user)",
            messages.len()
        ));
    }
    let users: Vec<&str> = messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .collect();
    let content = match users.as_slice() {
        [only] => (*only).to_string(),
        _ => {
            violations.push(format!(
                "first call has {} user messages (expected exactly one)",
                users.len()
            ));
            users.join("\n")
        }
    };
    if let Some(expected) = expected_user {
        if content != expected {
            violations.push(format!(
                "first user message is not the goal sentence: {content:?}"
            ));
        }
    }
    for re in deny {
        if let Some(m) = re.find(&content) {
            violations.push(format!(
                "deny pattern {:?} matched {:?}",
                re.as_str(),
                m.as_str()
            ));
        }
    }
    LimitedInstructionAudit {
        ok: violations.is_empty(),
        first_user_content: Some(content),
        violations,
    }
}

/// Checks the prompt-routing rule over a whole log: planner prompts see only
/// the abstract granularity, instruction prompts only coarse plus the latest
/// fine entry. Returns a violation description per offending event.
pub fn audit_granularity_routing(events: &[LoggedEvent]) -> Vec<String> {
    let mut violations = Vec::new();
    for logged in events {
        if let Event::PromptAssembled {
            role,
            granularities,
            ..
        } = &logged.event
        {
            let allowed: &[&str] = match role.as_str() {
                "reasoner" => &["abstract"],
                "assistant" => &["coarse", "fine_latest"],
                _ => continue,
            };
            for g in granularities {
                if !allowed.contains(&g.as_str()) {
                    violations.push(format!(
                        "event #{}: {role} prompt carries {g:?} (allowed: {allowed:?})",
                        logged.seq
                    ));
                }
            }
        }
    }
    violations
}

/// One line per event, for reading a run back. Not part of any replay
/// comparison, so wall-clock stamps are fine here.
pub fn render_timeline(events: &[LoggedEvent]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for logged in events {
        let detail = match &logged.event {
            Event::RunStarted { run_id, target, goal_mode, .. } => {
                format!("{run_id} against {target} ({goal_mode})")
            }
            Event::GatewayCall { purpose, tokens_in, tokens_out, .. } => {
                format!("[{purpose}] {tokens_in} in / {tokens_out} out")
            }
            Event::GatewayRefusal { purpose, .. } => format!("[{purpose}] refused"),
            Event::GatewayFailure { purpose, error } => format!("[{purpose}] {error}"),
            Event::PromptAssembled { role, purpose, node, granularities, entry_count } => {
                format!("{role}/{purpose} node {node} {granularities:?} over {entry_count} entries")
            }
            Event::PhasePlanned { goal_id, description, node, budget } => {
                format!("goal {goal_id} at node {node} (budget {budget}): {description}")
            }
            Event::PlanMalformed { raw_head } => format!("unparsable plan: {raw_head:?}"),
            Event::Spawn { parent, node, kind, locus } => {
                format!("node {node} under {parent}: {kind} {locus}")
            }
            Event::Record { node, entry, instruction, exit_status, .. } => {
                format!("entry {entry} at node {node} (exit {exit_status:?}): {instruction}")
            }
            Event::Compressed { entry, granularity, degraded } => {
                let tag = if *degraded { " (degraded)" } else { "" };
                format!("entry {entry} -> {granularity}{tag}")
            }
            Event::Activated { node, granularity, entry_count } => {
                format!("node {node} path as {granularity}: {entry_count} entries")
            }
            Event::Prioritized { node, order } => format!("children of {node}: {order:?}"),
            Event::Executed { mode, exit_status, timed_out, truncated, session } => {
                let mut extras = Vec::new();
                if *timed_out {
                    extras.push("timed out");
                }
                if *truncated {
                    extras.push("truncated");
                }
                let extras = if extras.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", extras.join(", "))
                };
                match session {
                    Some(s) => format!("{mode} (exit {exit_status:?}, session {s}){extras}"),
                    None => format!("{mode} (exit {exit_status:?}){extras}"),
                }
            }
            Event::ShellProbe { session, acquired, is_root } => {
                format!("session {session}: acquired={acquired} root={is_root}")
            }
            Event::PhaseVerdict { goal_id, verdict } => format!("goal {goal_id} claims {verdict}"),
            Event::PhaseReported { goal_id, outcome, detail } => match detail {
                Some(d) => format!("goal {goal_id} {outcome}: {d}"),
                None => format!("goal {goal_id} {outcome}"),
            },
            Event::MissionEnded { verdict, outcome, evidence } => match evidence {
                Some(ev) => format!("{verdict} ({outcome}): {ev}"),
                None => format!("{verdict} ({outcome})"),
            },
            Event::Note { text } => text.clone(),
        };
        let _ = writeln!(out, "#{:<4} {:<18} {}", logged.seq, logged.event.kind(), detail);
    }
    out
}

/// Per-tier solved/hosts table for a finished campaign.
pub fn render_bench_table(report: &BenchReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "pass@{} over {} host(s)", report.k, report.host_total);
    let _ = writeln!(out, "{:<6} {:>12} {:>6}", "tier", "solved/hosts", "root");
    for row in &report.tiers {
        let _ = writeln!(
            out,
            "{:<6} {:>12} {:>6}",
            row.tier,
            format!("{}/{}", row.solved, row.hosts),
            row.solved_root
        );
    }
    let root_total: usize = report.tiers.iter().map(|r| r.solved_root).sum();
    let _ = writeln!(
        out,
        "{:<6} {:>12} {:>6}",
        "total",
        format!("{}/{}", report.solved_total, report.host_total),
        root_total
    );
    let _ = writeln!(out, "pass rate: {:.1}%", report.pass_rate() * 100.0);
    out
}
