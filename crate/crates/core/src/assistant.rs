//! Low-level planning: one concrete shell instruction at a time.
//!
//! The assistant sees the active phased goal, coarse summaries of every
//! instruction already executed on the active branch, the full output of the
//! most recent instruction, and at most two exploit manuals. It never sees
//! other branches. Replies that still contain placeholder tokens are sent
//! back once for regeneration; a second offense fails the phase, because an
//! instruction with a `<TARGET>` hole would burn an execution slot on a
//! guaranteed error.

use serde::{Deserialize, Serialize};

use crate::arsenal::{ArsenalRegistry, ExploitQuery};
use crate::compress::Granularity;
use crate::events::Event;
use crate::executor::{ExecMode, Instruction, DEFAULT_TIMEOUT_SECS};
use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelProfile};
use crate::memory::{MemoryTree, NodeId};
use crate::prompts::{fill, line_value, PromptSet};
use crate::reasoner::PhasedGoal;

/// Exploit manuals shown per prompt. Two is enough to compare a native and
/// an external option without drowning the instruction context.
pub const MANUAL_CAP: usize = 2;

/// Placeholder shapes the assistant must never emit: `[TARGET IP]`,
/// `<RHOST>`, and the like. Redirections (`<&3`, `2>&1`) do not match.
pub const DEFAULT_PLACEHOLDER_PATTERN: &str =
    r"\[[A-Za-z][A-Za-z0-9 _-]*\]|<[A-Za-z][A-Za-z0-9 _-]*>";

#[derive(Debug, Clone)]
pub enum AssistantStep {
    Instruction(Instruction),
    /// The model believes the phase goal is met. The evidence text is a
    /// claim; callers verify it before acting on it.
    PhaseSucceeded { evidence_text: String },
    PhaseFailed { reason: String },
}

fn parse_step(text: &str) -> Option<AssistantStep> {
    let verdict = line_value(text, "VERDICT")?.to_ascii_lowercase();
    if verdict.starts_with("succeeded") {
        return Some(AssistantStep::PhaseSucceeded {
            evidence_text: line_value(text, "EVIDENCE").unwrap_or("").to_string(),
        });
    }
    if verdict.starts_with("failed") {
        return Some(AssistantStep::PhaseFailed {
            reason: line_value(text, "REASON").unwrap_or("unspecified").to_string(),
        });
    }
    if !verdict.starts_with("continue") {
        return None;
    }
    let mode = match line_value(text, "MODE").map(str::to_ascii_lowercase) {
        None => ExecMode::Oneshot,
        Some(m) if m.starts_with("oneshot") => ExecMode::Oneshot,
        Some(m) if m.starts_with("background") => ExecMode::Background,
        Some(m) if m.starts_with("session_input") => ExecMode::SessionInput,
        Some(_) => return None,
    };
    let session_ref = line_value(text, "SESSION").map(str::to_string);
    if mode == ExecMode::SessionInput && session_ref.is_none() {
        return None;
    }
    let timeout_secs = line_value(text, "TIMEOUT")
        .and_then(|t| t.trim_end_matches('s').trim().parse::<f64>().ok())
        .filter(|t| *t > 0.0)
        .unwrap_or(DEFAULT_TIMEOUT_SECS);
    let command = instruction_tail(text)?;
    Some(AssistantStep::Instruction(Instruction {
        command,
        mode,
        session_ref,
        timeout_secs,
        intent: line_value(text, "INTENT").unwrap_or("").to_string(),
    }))
}

/// The INSTRUCTION field runs to the end of the reply, so multi-line
/// commands survive.
fn instruction_tail(text: &str) -> Option<String> {
    let mut lines = text.lines();
    let mut command = String::new();
    for line in lines.by_ref() {
        let t = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        if let Some(rest) = t
            .strip_prefix("INSTRUCTION")
            .and_then(|r| r.trim_start().strip_prefix(':'))
        {
            command.push_str(rest.trim());
            break;
        }
    }
    for line in lines {
        command.push('\n');
        command.push_str(line);
    }
    let command = command.trim().to_string();
    if command.is_empty() {
        None
    } else {
        Some(command)
    }
}

/// Branch context for the prompt: every entry as a coarse summary, plus the
/// full fine text of the newest entry only.
fn branch_context(tree: &MemoryTree, node: NodeId) -> Result<(String, String, usize), GatewayError> {
    let coarse = tree
        .activate(node, Granularity::Coarse)
        .map_err(|e| GatewayError::Config(e.to_string()))?;
    let entry_count = coarse.len();
    let coarse_text = if coarse.is_empty() {
        "(nothing executed yet)".to_string()
    } else {
        coarse
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {}", i + 1, r.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let fine = tree
        .activate(node, Granularity::Fine)
        .map_err(|e| GatewayError::Config(e.to_string()))?;
    let latest_fine = fine
        .last()
        .map(|r| r.text.clone())
        .unwrap_or_else(|| "(none yet)".to_string());
    Ok((coarse_text, latest_fine, entry_count))
}

/// Decides the next instruction for the active phase, or ends the phase.
#[allow(clippy::too_many_arguments)]
pub fn next_step(
    goal: &PhasedGoal,
    tree: &MemoryTree,
    node: NodeId,
    used: u32,
    manuals: &[String],
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    placeholder_re: &regex::Regex,
    events: &mut Vec<Event>,
) -> Result<AssistantStep, GatewayError> {
    if used >= goal.budget {
        return Ok(AssistantStep::PhaseFailed {
            reason: format!("instruction budget ({}) exhausted", goal.budget),
        });
    }
    let (coarse_text, latest_fine, entry_count) = branch_context(tree, node)?;
    let manuals_text = if manuals.is_empty() {
        "(none)".to_string()
    } else {
        manuals.join("\n\n")
    };
    let user = fill(
        prompts.assistant_user.trim_end(),
        &[
            ("goal", goal.description.as_str()),
            ("success", goal.success_criteria.as_str()),
            ("used", used.to_string().as_str()),
            ("budget", goal.budget.to_string().as_str()),
            ("coarse", coarse_text.as_str()),
            ("latest_fine", latest_fine.as_str()),
            ("manuals", manuals_text.as_str()),
        ],
    );
    events.push(Event::Activated {
        node: node.0,
        granularity: "coarse".to_string(),
        entry_count,
    });
    events.push(Event::PromptAssembled {
        role: "assistant".to_string(),
        purpose: "instruct".to_string(),
        node: node.0,
        granularities: vec!["coarse".to_string(), "fine_latest".to_string()],
        entry_count,
    });
    let mut messages = vec![
        ChatMessage::system(prompts.assistant_system.trim_end()),
        ChatMessage::user(&user),
    ];
    let exchange = gateway.complete_logged(profile, &messages, "instruct", events)?;
    let mut step = parse_step(&exchange.response_text);
    if step.is_none() {
        messages.push(ChatMessage::assistant(&exchange.response_text));
        messages.push(ChatMessage::user(prompts.reformat.trim_end()));
        let retry = gateway.complete_logged(profile, &messages, "instruct_retry", events)?;
        step = parse_step(&retry.response_text);
        if step.is_none() {
            return Ok(AssistantStep::PhaseFailed {
                reason: "reply did not follow the instruction layout".to_string(),
            });
        }
        messages.pop();
        messages.pop();
        messages.push(ChatMessage::assistant(&retry.response_text));
    } else {
        messages.push(ChatMessage::assistant(&exchange.response_text));
    }

    // placeholder gate: one regeneration, then the phase fails
    if let Some(AssistantStep::Instruction(instr)) = &step {
        if let Some(hit) = placeholder_re.find(&instr.command) {
            let nudge = format!(
                "Your INSTRUCTION contains the placeholder token {}. \
                 Replace every placeholder with a concrete value taken from the \
                 executed-output memory above, then reply again in the same layout.",
                hit.as_str()
            );
            messages.push(ChatMessage::user(&nudge));
            let retry = gateway.complete_logged(profile, &messages, "instruct_deplaceholder", events)?;
            match parse_step(&retry.response_text) {
                Some(AssistantStep::Instruction(again))
                    if placeholder_re.find(&again.command).is_none() =>
                {
                    step = Some(AssistantStep::Instruction(again));
                }
                Some(AssistantStep::PhaseSucceeded { evidence_text }) => {
                    step = Some(AssistantStep::PhaseSucceeded { evidence_text });
                }
                Some(AssistantStep::PhaseFailed { reason }) => {
                    step = Some(AssistantStep::PhaseFailed { reason });
                }
                _ => {
                    step = Some(AssistantStep::PhaseFailed {
                        reason: "instruction kept placeholder tokens after regeneration"
                            .to_string(),
                    });
                }
            }
        }
    }
    Ok(step.expect("step set above"))
}

/// Pulls up to `cap` manuals for the phase's locus: CVE match first, then
/// service match. Each manual is prefixed with its record id so the model
/// can name what it wants to run.
pub fn consult_arsenal(
    registry: &ArsenalRegistry,
    cve: Option<&str>,
    service: Option<(&str, Option<&str>)>,
    cap: usize,
) -> Vec<String> {
    let mut hits = Vec::new();
    if let Some(cve) = cve {
        hits.extend(registry.query(&ExploitQuery::by_cve(cve)));
    }
    if let Some((name, version)) = service {
        for r in registry.query(&ExploitQuery::by_service(name, version)) {
            if !hits.iter().any(|h: &&crate::arsenal::ExploitRecord| {
                h.record_id == r.record_id
            }) {
                hits.push(r);
            }
        }
    }
    hits.into_iter()
        .take(cap)
        .map(|r| format!("### {} ({})\n{}", r.record_id, r.cve_id, r.manual.trim_end()))
        .collect()
}

/// One service the recon phase observed listening on the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceObservation {
    pub name: String,
    pub port: u16,
    #[serde(default)]
    pub version: Option<String>,
}

impl std::fmt::Display for ServiceObservation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.name, self.port)?;
        if let Some(v) = &self.version {
            write!(f, " {v}")?;
        }
        Ok(())
    }
}

/// Asks the model to rate exploitability per service, 0 to 10, and folds the
/// replies to likelihoods in [0, 1]. A service the reply skips or garbles
/// gets 0.5 and is marked degraded rather than silently dropped.
pub fn score_services(
    services: &[ServiceObservation],
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    events: &mut Vec<Event>,
) -> Result<Vec<(ServiceObservation, f64, bool)>, GatewayError> {
    if services.is_empty() {
        return Err(GatewayError::Config(
            "no services to score".to_string(),
        ));
    }
    let listing = services
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let user = fill(prompts.score_user.trim_end(), &[("services", listing.as_str())]);
    let messages = vec![
        ChatMessage::system(prompts.score_system.trim_end()),
        ChatMessage::user(&user),
    ];
    let exchange = gateway.complete_logged(profile, &messages, "score_services", events)?;
    let mut out = Vec::new();
    for s in services {
        let key = format!("{}:{}", s.name, s.port);
        let parsed = exchange.response_text.lines().find_map(|l| {
            let (lhs, rhs) = l.split_once('=')?;
            if lhs.trim() != key {
                return None;
            }
            rhs.trim().parse::<f64>().ok()
        });
        match parsed {
            Some(v) => out.push((s.clone(), (v / 10.0).clamp(0.0, 1.0), false)),
            None => out.push((s.clone(), 0.5, true)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, TranscriptEntry};
    use crate::memory::MemoryTree;

    fn scripted(responses: &[&str]) -> Gateway {
        let entries: Vec<TranscriptEntry> = responses
            .iter()
            .map(|r| TranscriptEntry {
                fingerprint: "*".to_string(),
                response_text: r.to_string(),
                tokens_in: 10,
                tokens_out: 10,
            })
            .collect();
        Gateway::new(Box::new(ScriptedBackend::new(entries).unwrap()))
    }

    fn goal() -> PhasedGoal {
        PhasedGoal {
            goal_id: 1,
            description: "probe the open ports".into(),
            locus: None,
            locus_kind: None,
            success_criteria: "a service banner is known".into(),
            budget: 5,
        }
    }

    fn placeholder_re() -> regex::Regex {
        regex::Regex::new(DEFAULT_PLACEHOLDER_PATTERN).unwrap()
    }

    #[test]
    fn budget_gate_fails_phase_without_a_call() {
        let tree = MemoryTree::init("t");
        let mut gw = scripted(&[]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 5, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        assert!(matches!(step, AssistantStep::PhaseFailed { .. }));
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn continue_reply_parses_into_an_instruction() {
        let tree = MemoryTree::init("t");
        let mut gw = scripted(&[
            "VERDICT: continue\nINTENT: grab the banner\nMODE: oneshot\nTIMEOUT: 30\nINSTRUCTION: exec 3<>/dev/tcp/127.0.0.1/45832; IFS= read -r -t 2 banner <&3; echo \"$banner\"",
        ]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        let AssistantStep::Instruction(instr) = step else {
            panic!("expected instruction");
        };
        assert_eq!(instr.mode, ExecMode::Oneshot);
        assert_eq!(instr.timeout_secs, 30.0);
        assert!(instr.command.contains("/dev/tcp/127.0.0.1/45832"));
        assert_eq!(instr.intent, "grab the banner");
        // redirections in the command are not placeholder hits
        assert!(placeholder_re().find(&instr.command).is_none());
    }

    #[test]
    fn session_input_requires_a_session_field() {
        let tree = MemoryTree::init("t");
        // first reply omits SESSION -> malformed -> reformat retry supplies it
        let mut gw = scripted(&[
            "VERDICT: continue\nMODE: session_input\nINSTRUCTION: id",
            "VERDICT: continue\nMODE: session_input\nSESSION: job-1\nINSTRUCTION: id",
        ]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        let AssistantStep::Instruction(instr) = step else {
            panic!("expected instruction");
        };
        assert_eq!(instr.mode, ExecMode::SessionInput);
        assert_eq!(instr.session_ref.as_deref(), Some("job-1"));
        assert_eq!(gw.calls_made(), 2);
    }

    #[test]
    fn placeholder_instruction_is_regenerated_once() {
        let tree = MemoryTree::init("t");
        let mut gw = scripted(&[
            "VERDICT: continue\nINTENT: x\nINSTRUCTION: curl http://<TARGET_IP>/",
            "VERDICT: continue\nINTENT: x\nINSTRUCTION: curl http://127.0.0.1/",
        ]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        let AssistantStep::Instruction(instr) = step else {
            panic!("expected instruction");
        };
        assert_eq!(instr.command, "curl http://127.0.0.1/");
        assert_eq!(gw.calls_made(), 2);

        // stubborn placeholders fail the phase
        let mut gw = scripted(&[
            "VERDICT: continue\nINSTRUCTION: curl http://<TARGET_IP>/",
            "VERDICT: continue\nINSTRUCTION: curl http://[TARGET IP]/",
        ]);
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        match step {
            AssistantStep::PhaseFailed { reason } => {
                assert!(reason.contains("placeholder"), "{reason}")
            }
            other => panic!("wrong step: {other:?}"),
        }
    }

    #[test]
    fn succeeded_and_failed_verdicts() {
        let tree = MemoryTree::init("t");
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();

        let mut gw = scripted(&["VERDICT: succeeded\nEVIDENCE: shell prompt, session=job-2"]);
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        match step {
            AssistantStep::PhaseSucceeded { evidence_text } => {
                assert!(evidence_text.contains("session=job-2"))
            }
            other => panic!("wrong step: {other:?}"),
        }

        let mut gw = scripted(&["VERDICT: failed\nREASON: service not vulnerable"]);
        let mut events = Vec::new();
        let step = next_step(
            &goal(), &tree, tree.root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        assert!(matches!(step, AssistantStep::PhaseFailed { .. }));
    }

    #[test]
    fn prompt_carries_coarse_history_and_only_latest_fine() {
        let mut tree = MemoryTree::init("t");
        let root = tree.root;
        let e1 = tree
            .record(root, "cmd-one", "i1", b"OLD-RAW-DETAIL".to_vec(), Some(0), 0.1)
            .unwrap();
        tree.set_coarse(e1, "summary-of-one".to_string(), false).unwrap();
        let e2 = tree
            .record(root, "cmd-two", "i2", b"NEW-RAW-DETAIL".to_vec(), Some(0), 0.1)
            .unwrap();
        tree.set_coarse(e2, "summary-of-two".to_string(), false).unwrap();

        let mut gw = scripted(&["VERDICT: continue\nINSTRUCTION: echo hi"]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        next_step(
            &goal(), &tree, root, 0, &[], &mut gw, &profile, &prompts,
            &placeholder_re(), &mut events,
        )
        .unwrap();
        let user_text = events
            .iter()
            .find_map(|e| match e {
                Event::GatewayCall { messages, .. } => messages
                    .iter()
                    .find(|m| matches!(m.role, crate::gateway::Role::User))
                    .map(|m| m.content.clone()),
                _ => None,
            })
            .unwrap();
        assert!(user_text.contains("summary-of-one"));
        assert!(user_text.contains("summary-of-two"));
        assert!(user_text.contains("NEW-RAW-DETAIL"), "latest fine included");
        assert!(!user_text.contains("OLD-RAW-DETAIL"), "older fine excluded");
        let assembled = events
            .iter()
            .find_map(|e| match e {
                Event::PromptAssembled { role, granularities, entry_count, .. }
                    if role == "assistant" =>
                {
                    Some((granularities.clone(), *entry_count))
                }
                _ => None,
            })
            .unwrap();
        assert_eq!(assembled.0, ["coarse", "fine_latest"]);
        assert_eq!(assembled.1, 2);
    }

    #[test]
    fn score_parsing_with_degraded_fallback() {
        let services = vec![
            ServiceObservation { name: "fileserv".into(), port: 45832, version: Some("2.3.1".into()) },
            ServiceObservation { name: "quietsvc".into(), port: 45833, version: None },
        ];
        let mut gw = scripted(&["fileserv:45832 = 9\nsomething unrelated"]);
        let profile = ModelProfile::test_profile("scripted");
        let prompts = PromptSet::builtin();
        let mut events = Vec::new();
        let scored = score_services(&services, &mut gw, &profile, &prompts, &mut events).unwrap();
        assert_eq!(scored[0].1, 0.9);
        assert!(!scored[0].2);
        assert_eq!(scored[1].1, 0.5);
        assert!(scored[1].2, "missing line is degraded");

        // out-of-range scores clamp
        let mut gw = scripted(&["fileserv:45832 = 15\nquietsvc:45833 = -2"]);
        let mut events = Vec::new();
        let scored = score_services(&services, &mut gw, &profile, &prompts, &mut events).unwrap();
        assert_eq!(scored[0].1, 1.0);
        assert_eq!(scored[1].1, 0.0);

        let mut gw = scripted(&[]);
        let mut events = Vec::new();
        assert!(score_services(&[], &mut gw, &profile, &prompts, &mut events).is_err());
    }
}
