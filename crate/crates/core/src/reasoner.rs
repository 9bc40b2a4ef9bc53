//! High-level planning: one phased goal at a time.
//!
//! The planner only ever sees the mission goal, the abstract-granularity
//! narrative of the active branch, and the path guide. Hard rules run before
//! any model call: verified evidence ends the mission, a fully dead tree
//! exhausts it, and a spent phase budget stops it. The model is consulted
//! only when a real decision remains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compress::Granularity;
use crate::events::Event;
use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelProfile};
use crate::memory::{paths, BranchDecision, BranchKind, Locus, MemoryTree, NodeId, NodeStatus};
use crate::prompts::{fill, line_value, PromptSet};

pub const DEFAULT_PHASE_INSTR_BUDGET: u32 = 15;
pub const DEFAULT_FLAG_PATTERN: &str = r"flag\{[^}]*\}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    AcquireShell,
    CaptureFlag,
}

impl std::fmt::Display for GoalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GoalMode::AcquireShell => "acquire_shell",
            GoalMode::CaptureFlag => "capture_flag",
        })
    }
}

/// Verified proof that the mission goal was reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Shell { session: String, is_root: bool },
    Flag { value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionVerdict {
    InProgress,
    Success,
    Exhausted,
    BudgetExceeded,
}

impl std::fmt::Display for MissionVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MissionVerdict::InProgress => "in_progress",
            MissionVerdict::Success => "success",
            MissionVerdict::Exhausted => "exhausted",
            MissionVerdict::BudgetExceeded => "budget_exceeded",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionState {
    pub goal_mode: GoalMode,
    pub target: String,
    pub verdict: MissionVerdict,
    pub evidence: Option<Evidence>,
    pub phases_planned: u32,
    /// Regex a captured flag must match before it counts as evidence.
    pub flag_pattern: String,
}

impl MissionState {
    pub fn new(goal_mode: GoalMode, target: &str) -> MissionState {
        MissionState {
            goal_mode,
            target: target.to_string(),
            verdict: MissionVerdict::InProgress,
            evidence: None,
            phases_planned: 0,
            flag_pattern: DEFAULT_FLAG_PATTERN.to_string(),
        }
    }

    /// The one-sentence mission statement. This is also the entire user
    /// content of the very first model call of a run.
    pub fn goal_sentence(&self, prompts: &PromptSet) -> String {
        let template = match self.goal_mode {
            GoalMode::AcquireShell => &prompts.goal_shell,
            GoalMode::CaptureFlag => &prompts.goal_flag,
        };
        fill(template.trim_end(), &[("target", &self.target)])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhasedGoal {
    pub goal_id: u64,
    pub description: String,
    /// Branch the phase anchors to; `None` keeps the current node.
    pub locus: Option<Locus>,
    pub locus_kind: Option<BranchKind>,
    pub success_criteria: String,
    /// Max instructions the low-level loop may spend on this phase.
    pub budget: u32,
}

#[derive(Debug, Clone)]
pub enum PlanDecision {
    Goal(PhasedGoal),
    /// Claimed or verified mission completion. Callers must verify the
    /// evidence before treating the mission as won.
    Done { evidence: Option<Evidence> },
    Exhausted { reason: String },
    BudgetExceeded,
    Malformed { raw: String },
}

/// Result of running one phase to completion.
#[derive(Debug, Clone)]
pub enum PhaseOutcome {
    Succeeded { evidence: Option<Evidence> },
    Failed { reason: String },
}

impl PhaseOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            PhaseOutcome::Succeeded { .. } => "succeeded",
            PhaseOutcome::Failed { .. } => "failed",
        }
    }
}

/// A path is dead once any node on it is exhausted; the tree is exhausted
/// when every root-to-leaf path is dead.
pub fn tree_exhausted(tree: &MemoryTree) -> bool {
    paths::enumerate(tree).iter().all(|p| {
        p.nodes
            .iter()
            .any(|n| tree.nodes[n].status == NodeStatus::Exhausted)
    })
}

fn head(s: &str, n: usize) -> String {
    let mut end = n.min(s.len());
    while end > 0 && !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

/// Parses a `kind=...; host=...; port=...` locus line. Unknown keys are
/// ignored; a bad port drops the port rather than the whole locus.
pub fn parse_locus_line(line: &str) -> (Option<BranchKind>, Locus) {
    let mut locus = Locus::default();
    let mut kind = None;
    for part in line.split(';') {
        let Some((k, v)) = part.split_once('=') else {
            continue;
        };
        let k = k.trim().to_ascii_lowercase();
        let v = v.trim().trim_matches(['<', '>']).to_string();
        if v.is_empty() {
            continue;
        }
        match k.as_str() {
            "kind" => {
                kind = match v.as_str() {
                    "target_host" => Some(BranchKind::TargetHost),
                    "service" => Some(BranchKind::Service),
                    "entry_point" => Some(BranchKind::EntryPoint),
                    "exploit" => Some(BranchKind::Exploit),
                    _ => None,
                }
            }
            "host" => locus.host = Some(v),
            "port" => locus.port = v.parse().ok(),
            "service" => locus.service = Some(v),
            "version" => locus.version = Some(v),
            "entry" => locus.entry = Some(v),
            "exploit" => locus.exploit = Some(v),
            _ => {}
        }
    }
    (kind, locus)
}

fn parse_plan_reply(
    text: &str,
    mission: &MissionState,
    default_budget: u32,
    next_goal_id: u64,
) -> Option<PlanDecision> {
    let verdict = line_value(text, "VERDICT")?.to_ascii_lowercase();
    if verdict.starts_with("done") {
        let raw = line_value(text, "EVIDENCE").unwrap_or("");
        let evidence = claimed_evidence(mission, raw);
        return Some(PlanDecision::Done { evidence });
    }
    if verdict.starts_with("exhausted") {
        let reason = line_value(text, "REASON").unwrap_or("no branches left").to_string();
        return Some(PlanDecision::Exhausted { reason });
    }
    if !verdict.starts_with("continue") {
        return None;
    }
    let description = line_value(text, "GOAL")?.to_string();
    if description.is_empty() {
        return None;
    }
    let success_criteria = line_value(text, "SUCCESS").unwrap_or("").to_string();
    let (locus_kind, locus) = match line_value(text, "LOCUS") {
        Some(l) => {
            let (k, loc) = parse_locus_line(l);
            (k, if loc == Locus::default() { None } else { Some(loc) })
        }
        None => (None, None),
    };
    let budget = line_value(text, "BUDGET")
        .and_then(|b| b.parse::<u32>().ok())
        .map(|b| b.clamp(1, default_budget))
        .unwrap_or(default_budget);
    Some(PlanDecision::Goal(PhasedGoal {
        goal_id: next_goal_id,
        description,
        locus,
        locus_kind,
        success_criteria,
        budget,
    }))
}

/// Interprets a free-text evidence claim against the mission mode. Shell
/// claims need a session reference; flag claims must contain a string
/// matching the flag pattern.
pub fn claimed_evidence(mission: &MissionState, raw: &str) -> Option<Evidence> {
    match mission.goal_mode {
        GoalMode::AcquireShell => session_in_text(raw).map(|session| Evidence::Shell {
            session,
            is_root: false,
        }),
        GoalMode::CaptureFlag => flag_in_text(&mission.flag_pattern, raw)
            .map(|value| Evidence::Flag { value }),
    }
}

pub fn session_in_text(text: &str) -> Option<String> {
    let re = regex::Regex::new(r"session\s*=\s*([A-Za-z0-9_-]+)").unwrap();
    re.captures(text).map(|c| c[1].to_string())
}

pub fn flag_in_text(pattern: &str, text: &str) -> Option<String> {
    let re = regex::Regex::new(pattern).ok()?;
    re.find(text).map(|m| m.as_str().to_string())
}

/// Decides the next move. Rule precedence: verified evidence, dead tree,
/// spent budget, then the model. `focus` is the node whose path supplies the
/// progress narrative.
#[allow(clippy::too_many_arguments)]
pub fn plan_next(
    mission: &MissionState,
    tree: &MemoryTree,
    focus: NodeId,
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    phases_remaining: u32,
    default_budget: u32,
    events: &mut Vec<Event>,
) -> Result<PlanDecision, GatewayError> {
    if let Some(ev) = &mission.evidence {
        return Ok(PlanDecision::Done {
            evidence: Some(ev.clone()),
        });
    }
    if tree_exhausted(tree) {
        return Ok(PlanDecision::Exhausted {
            reason: "every explored branch is exhausted".to_string(),
        });
    }
    if phases_remaining == 0 {
        return Ok(PlanDecision::BudgetExceeded);
    }

    let goal = mission.goal_sentence(prompts);
    let first_call = mission.phases_planned == 0 && tree.entries.is_empty();
    let renderings = tree
        .activate(focus, Granularity::Abstract)
        .map_err(|e| GatewayError::Config(e.to_string()))?;
    let user = if first_call {
        goal.clone()
    } else {
        let narrative = if renderings.is_empty() {
            "(nothing yet)".to_string()
        } else {
            renderings
                .iter()
                .map(|r| r.text.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        };
        fill(
            prompts.reasoner_user.trim_end(),
            &[
                ("goal", goal.as_str()),
                ("abstract", narrative.as_str()),
                ("path_guide", paths::render_path_guide(tree, focus).as_str()),
            ],
        )
    };
    events.push(Event::Activated {
        node: focus.0,
        granularity: Granularity::Abstract.to_string(),
        entry_count: renderings.len(),
    });
    events.push(Event::PromptAssembled {
        role: "reasoner".to_string(),
        purpose: "plan".to_string(),
        node: focus.0,
        granularities: vec![Granularity::Abstract.to_string()],
        entry_count: if first_call { 0 } else { renderings.len() },
    });
    let mut messages = vec![
        ChatMessage::system(prompts.reasoner_system.trim_end()),
        ChatMessage::user(&user),
    ];
    let exchange = gateway.complete_logged(profile, &messages, "plan", events)?;
    let next_goal_id = mission.phases_planned as u64 + 1;
    if let Some(d) = parse_plan_reply(&exchange.response_text, mission, default_budget, next_goal_id)
    {
        return Ok(d);
    }
    // one reformat nudge, then give up on this reply
    messages.push(ChatMessage::assistant(&exchange.response_text));
    messages.push(ChatMessage::user(prompts.reformat.trim_end()));
    let retry = gateway.complete_logged(profile, &messages, "plan_retry", events)?;
    match parse_plan_reply(&retry.response_text, mission, default_budget, next_goal_id) {
        Some(d) => Ok(d),
        None => {
            events.push(Event::PlanMalformed {
                raw_head: head(&exchange.response_text, 200),
            });
            Ok(PlanDecision::Malformed {
                raw: head(&exchange.response_text, 200),
            })
        }
    }
}

/// Folds a finished phase back into mission and tree state. Success marks
/// the node and, with verified evidence, the mission; failure burns one of
/// the node's retries and exhausts it when none remain.
pub fn receive_phase_report(
    mission: &mut MissionState,
    tree: &mut MemoryTree,
    node: NodeId,
    outcome: &PhaseOutcome,
    retries: &mut BTreeMap<NodeId, u32>,
    retries_per_node: u32,
) {
    match outcome {
        PhaseOutcome::Succeeded { evidence } => {
            let _ = tree.set_status(node, NodeStatus::Succeeded);
            if let Some(ev) = evidence {
                mission.evidence = Some(ev.clone());
                mission.verdict = MissionVerdict::Success;
            }
        }
        PhaseOutcome::Failed { .. } => {
            let spent = retries.entry(node).or_insert(0);
            *spent += 1;
            if *spent >= retries_per_node && node != tree.root {
                let _ = tree.set_status(node, NodeStatus::Exhausted);
            }
        }
    }
}

/// Expands a locus into the branch chain under the root, reusing nodes that
/// already carry the same decision. Levels absent from the locus are
/// skipped. Returns the deepest node, which is where the phase anchors.
pub fn anchor_locus(
    tree: &mut MemoryTree,
    locus: &Locus,
    events: &mut Vec<Event>,
) -> Result<NodeId, crate::memory::TreeError> {
    let mut current = tree.root;
    let mut chain: Vec<(BranchKind, Locus)> = Vec::new();
    if locus.service.is_some() || locus.port.is_some() {
        chain.push((
            BranchKind::Service,
            Locus {
                host: locus.host.clone(),
                port: locus.port,
                service: locus.service.clone(),
                version: locus.version.clone(),
                ..Locus::default()
            },
        ));
    }
    if locus.entry.is_some() {
        let mut l = chain.last().map(|(_, l)| l.clone()).unwrap_or_else(|| Locus {
            host: locus.host.clone(),
            ..Locus::default()
        });
        l.entry = locus.entry.clone();
        chain.push((BranchKind::EntryPoint, l));
    }
    if locus.exploit.is_some() {
        let mut l = chain.last().map(|(_, l)| l.clone()).unwrap_or_else(|| Locus {
            host: locus.host.clone(),
            ..Locus::default()
        });
        l.exploit = locus.exploit.clone();
        chain.push((BranchKind::Exploit, l));
    }
    for (kind, locus) in chain {
        let before: Vec<NodeId> = tree.node(current)?.children.clone();
        let child = tree.spawn_child(
            current,
            BranchDecision {
                kind,
                locus: locus.clone(),
            },
        )?;
        if !before.contains(&child) {
            events.push(Event::Spawn {
                parent: current.0,
                node: child.0,
                kind: kind.to_string(),
                locus: locus.to_string(),
            });
        }
        current = child;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, TranscriptEntry};

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

    fn fixture() -> (MissionState, MemoryTree, ModelProfile, PromptSet) {
        (
            MissionState::new(GoalMode::AcquireShell, "10.10.1.0/24"),
            MemoryTree::init("10.10.1.0/24"),
            ModelProfile::test_profile("scripted"),
            PromptSet::builtin(),
        )
    }

    #[test]
    fn first_call_user_content_is_exactly_the_goal_sentence() {
        let (mission, tree, profile, prompts) = fixture();
        let mut gw = scripted(&["VERDICT: continue\nGOAL: map the subnet\nSUCCESS: a host list"]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::Goal(_)));
        let call = events
            .iter()
            .find_map(|e| match e {
                Event::GatewayCall { messages, .. } => Some(messages.clone()),
                _ => None,
            })
            .unwrap();
        let user: Vec<_> = call
            .iter()
            .filter(|m| matches!(m.role, crate::gateway::Role::User))
            .collect();
        assert_eq!(user.len(), 1);
        assert_eq!(
            user[0].content,
            "Discover the target machine within 10.10.1.0/24 and try to get a system shell on it."
        );
    }

    #[test]
    fn later_calls_use_abstract_narrative_and_path_guide() {
        let (mut mission, mut tree, profile, prompts) = fixture();
        mission.phases_planned = 1;
        let e = tree
            .record(
                tree.root,
                "nmap-ish probe",
                "find hosts",
                b"45832/tcp open".to_vec(),
                Some(0),
                1.0,
            )
            .unwrap();
        tree.set_abstract_fragment(e, "found one open service".to_string(), false)
            .unwrap();
        let mut gw = scripted(&[
            "VERDICT: continue\nGOAL: inspect the service\nLOCUS: kind=service; host=10.10.1.5; port=45832; service=fileserv\nSUCCESS: banner known\nBUDGET: 4",
        ]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        let PlanDecision::Goal(goal) = d else {
            panic!("expected a goal")
        };
        assert_eq!(goal.budget, 4);
        assert_eq!(goal.locus_kind, Some(BranchKind::Service));
        let locus = goal.locus.unwrap();
        assert_eq!(locus.port, Some(45832));
        assert_eq!(locus.service.as_deref(), Some("fileserv"));
        // prompt carried the abstract text, not the raw output
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
        assert!(user_text.contains("found one open service"));
        assert!(!user_text.contains("45832/tcp open"));
        assert!(user_text.contains("path 1:"));
        // audit trail says the reasoner saw abstract granularity only
        let assembled = events
            .iter()
            .find_map(|e| match e {
                Event::PromptAssembled { role, granularities, .. } if role == "reasoner" => {
                    Some(granularities.clone())
                }
                _ => None,
            })
            .unwrap();
        assert_eq!(assembled, ["abstract"]);
    }

    #[test]
    fn verified_evidence_short_circuits_without_a_call() {
        let (mut mission, tree, profile, prompts) = fixture();
        mission.evidence = Some(Evidence::Shell {
            session: "job-1".into(),
            is_root: true,
        });
        let mut gw = scripted(&[]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::Done { evidence: Some(_) }));
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn dead_tree_short_circuits_to_exhausted() {
        let (mission, mut tree, profile, prompts) = fixture();
        let child = tree
            .spawn_child(
                tree.root,
                BranchDecision {
                    kind: BranchKind::Service,
                    locus: Locus::host("10.10.1.5"),
                },
            )
            .unwrap();
        tree.set_status(child, NodeStatus::Exhausted).unwrap();
        assert!(tree_exhausted(&tree));
        let mut gw = scripted(&[]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::Exhausted { .. }));
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn live_sibling_keeps_tree_alive() {
        let (_, mut tree, _, _) = fixture();
        let a = tree
            .spawn_child(
                tree.root,
                BranchDecision {
                    kind: BranchKind::Service,
                    locus: Locus { port: Some(1), ..Locus::host("h") },
                },
            )
            .unwrap();
        tree.spawn_child(
            tree.root,
            BranchDecision {
                kind: BranchKind::Service,
                locus: Locus { port: Some(2), ..Locus::host("h") },
            },
        )
        .unwrap();
        tree.set_status(a, NodeStatus::Exhausted).unwrap();
        assert!(!tree_exhausted(&tree));
    }

    #[test]
    fn spent_phase_budget_short_circuits() {
        let (mission, tree, profile, prompts) = fixture();
        let mut gw = scripted(&[]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 0, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::BudgetExceeded));
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn malformed_reply_gets_one_reformat_retry() {
        let (mission, tree, profile, prompts) = fixture();
        let mut gw = scripted(&[
            "sure, let me think about this...",
            "VERDICT: continue\nGOAL: scan\nSUCCESS: hosts found",
        ]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::Goal(_)));
        assert_eq!(gw.calls_made(), 2);

        // both replies malformed -> Malformed decision + event
        let mut gw = scripted(&["nope", "still nope"]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        assert!(matches!(d, PlanDecision::Malformed { .. }));
        assert!(events.iter().any(|e| matches!(e, Event::PlanMalformed { .. })));
    }

    #[test]
    fn model_done_claim_carries_unverified_evidence() {
        let (mission, tree, profile, prompts) = fixture();
        let mut gw = scripted(&["VERDICT: done\nEVIDENCE: interactive shell, session=job-3"]);
        let mut events = Vec::new();
        let d = plan_next(
            &mission, &tree, tree.root, &mut gw, &profile, &prompts, 5, 15, &mut events,
        )
        .unwrap();
        match d {
            PlanDecision::Done {
                evidence: Some(Evidence::Shell { session, is_root }),
            } => {
                assert_eq!(session, "job-3");
                assert!(!is_root, "claims are never pre-verified");
            }
            other => panic!("wrong decision: {other:?}"),
        }
    }

    #[test]
    fn flag_evidence_must_match_the_pattern() {
        let mission = MissionState::new(GoalMode::CaptureFlag, "t");
        assert_eq!(
            claimed_evidence(&mission, "found flag{abc-123} in /root"),
            Some(Evidence::Flag {
                value: "flag{abc-123}".into()
            })
        );
        assert_eq!(claimed_evidence(&mission, "found something flag-like"), None);
    }

    #[test]
    fn phase_failure_exhausts_node_after_retries() {
        let (mut mission, mut tree, _, _) = fixture();
        let node = tree
            .spawn_child(
                tree.root,
                BranchDecision {
                    kind: BranchKind::Service,
                    locus: Locus::host("h"),
                },
            )
            .unwrap();
        let mut retries = BTreeMap::new();
        let fail = PhaseOutcome::Failed { reason: "no luck".into() };
        receive_phase_report(&mut mission, &mut tree, node, &fail, &mut retries, 2);
        assert_ne!(tree.node(node).unwrap().status, NodeStatus::Exhausted);
        receive_phase_report(&mut mission, &mut tree, node, &fail, &mut retries, 2);
        assert_eq!(tree.node(node).unwrap().status, NodeStatus::Exhausted);
        assert_eq!(mission.verdict, MissionVerdict::InProgress);
    }

    #[test]
    fn phase_success_with_evidence_wins_the_mission() {
        let (mut mission, mut tree, _, _) = fixture();
        let mut retries = BTreeMap::new();
        let ok = PhaseOutcome::Succeeded {
            evidence: Some(Evidence::Shell {
                session: "job-1".into(),
                is_root: true,
            }),
        };
        let root = tree.root;
        receive_phase_report(&mut mission, &mut tree, root, &ok, &mut retries, 2);
        assert_eq!(mission.verdict, MissionVerdict::Success);
        assert_eq!(
            tree.node(tree.root).unwrap().status,
            NodeStatus::Succeeded
        );
    }

    #[test]
    fn anchor_builds_and_reuses_the_branch_chain() {
        let (_, mut tree, _, _) = fixture();
        let mut events = Vec::new();
        let locus = Locus {
            host: Some("10.10.1.5".into()),
            port: Some(45832),
            service: Some("fileserv".into()),
            version: Some("2.3.1".into()),
            entry: Some("diag-command".into()),
            exploit: Some("cve-2001-0001-poc".into()),
            ..Locus::default()
        };
        let node = anchor_locus(&mut tree, &locus, &mut events).unwrap();
        let path = tree.path_to(node).unwrap();
        assert_eq!(path.len(), 4); // root -> service -> entry -> exploit
        let kinds: Vec<BranchKind> = path
            .iter()
            .map(|n| tree.node(*n).unwrap().branch.kind)
            .collect();
        assert_eq!(
            kinds,
            [
                BranchKind::TargetHost,
                BranchKind::Service,
                BranchKind::EntryPoint,
                BranchKind::Exploit
            ]
        );
        assert_eq!(events.len(), 3, "three spawn events");
        // anchoring again reuses every node, no new spawns
        let mut events2 = Vec::new();
        let again = anchor_locus(&mut tree, &locus, &mut events2).unwrap();
        assert_eq!(again, node);
        assert!(events2.is_empty());
        // a service-only locus reuses the service node
        let service_only = Locus {
            host: Some("10.10.1.5".into()),
            port: Some(45832),
            service: Some("fileserv".into()),
            version: Some("2.3.1".into()),
            ..Locus::default()
        };
        let svc = anchor_locus(&mut tree, &service_only, &mut events2).unwrap();
        assert_eq!(tree.path_to(svc).unwrap().len(), 2);
        assert_eq!(tree.path_to(node).unwrap()[1], svc);
    }
}
