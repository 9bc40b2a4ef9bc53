//! Coarse and abstract summarization through the gateway.
//!
//! Both summarizers degrade instead of failing: a gateway error leaves the
//! entry with a deterministic fallback rendering and a `degraded` flag, and
//! the error is handed back to the caller so refusals still get counted.

use crate::events::Event;
use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelProfile};
use crate::prompts::{fill, PromptSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub text: String,
    pub degraded: bool,
}

/// Messages for one coarse-summary call. Exposed so replay tooling can
/// reproduce fingerprints.
pub fn coarse_messages(
    prompts: &PromptSet,
    instruction: &str,
    intent: &str,
    fine: &str,
    exit_status: Option<i32>,
) -> Vec<ChatMessage> {
    let exit = match exit_status {
        Some(n) => n.to_string(),
        None => "none".to_string(),
    };
    vec![
        ChatMessage::system(prompts.coarse_system.trim_end()),
        ChatMessage::user(fill(
            prompts.coarse_user.trim_end(),
            &[
                ("instruction", instruction),
                ("intent", intent),
                ("exit_status", &exit),
                ("fine", fine),
            ],
        )),
    ]
}

/// Messages for one abstract-fold call.
pub fn abstract_messages(
    prompts: &PromptSet,
    previous_abstract: Option<&str>,
    new_coarse: &[String],
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(prompts.abstract_system.trim_end()),
        ChatMessage::user(fill(
            prompts.abstract_user.trim_end(),
            &[
                ("previous_abstract", previous_abstract.unwrap_or("(none)")),
                ("new_coarse", &new_coarse.join("\n")),
            ],
        )),
    ]
}

/// Instruction/outcome overview of one entry, capped at `budget` characters.
///
/// Empty output short-circuits to a fixed template without a model call. Any
/// gateway error yields the deterministic fallback plus the error itself.
pub fn summarize_coarse(
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    instruction: &str,
    intent: &str,
    fine: &str,
    exit_status: Option<i32>,
    budget: usize,
    events: &mut Vec<Event>,
) -> (SummaryOutcome, Option<GatewayError>) {
    if fine.trim().is_empty() {
        let exit = match exit_status {
            Some(n) => n.to_string(),
            None => "none".to_string(),
        };
        return (
            SummaryOutcome {
                text: truncate_chars(&format!("command produced no output (exit {exit})"), budget),
                degraded: false,
            },
            None,
        );
    }
    let messages = coarse_messages(prompts, instruction, intent, fine, exit_status);
    match gateway.complete_logged(profile, &messages, "summarize_coarse", events) {
        Ok(exchange) => (
            SummaryOutcome {
                text: truncate_chars(exchange.response_text.trim(), budget),
                degraded: false,
            },
            None,
        ),
        Err(err) => (
            SummaryOutcome {
                text: fallback_coarse(fine, budget),
                degraded: true,
            },
            Some(err),
        ),
    }
}

/// Folds the previous narrative and newly arrived coarse entries into one
/// stage-wise progress account, capped at `budget` characters.
///
/// No new entries means no model call: the previous narrative stands, and a
/// fresh mission with nothing recorded gets a fixed placeholder.
pub fn summarize_abstract(
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    previous_abstract: Option<&str>,
    new_coarse: &[String],
    budget: usize,
    events: &mut Vec<Event>,
) -> (SummaryOutcome, Option<GatewayError>) {
    if new_coarse.is_empty() {
        let text = match previous_abstract {
            Some(prev) => prev.to_string(),
            None => "no actions taken yet".to_string(),
        };
        return (
            SummaryOutcome {
                text: truncate_chars(&text, budget),
                degraded: false,
            },
            None,
        );
    }
    let messages = abstract_messages(prompts, previous_abstract, new_coarse);
    match gateway.complete_logged(profile, &messages, "summarize_abstract", events) {
        Ok(exchange) => (
            SummaryOutcome {
                text: truncate_chars(exchange.response_text.trim(), budget),
                degraded: false,
            },
            None,
        ),
        Err(err) => {
            let mut lines: Vec<&str> = Vec::new();
            if let Some(prev) = previous_abstract {
                lines.push(prev);
            }
            lines.extend(new_coarse.iter().map(|s| s.as_str()));
            (
                SummaryOutcome {
                    text: truncate_chars(&lines.join("\n"), budget),
                    degraded: true,
                },
                Some(err),
            )
        }
    }
}

/// Degraded-mode coarse rendering: the first and last lines of the fine text,
/// clamped to the budget.
pub fn fallback_coarse(fine: &str, budget: usize) -> String {
    let lines: Vec<&str> = fine.lines().collect();
    let text = if lines.len() <= 4 {
        fine.trim_end().to_string()
    } else {
        format!(
            "{}\n{}\n[...]\n{}\n{}",
            lines[0],
            lines[1],
            lines[lines.len() - 2],
            lines[lines.len() - 1]
        )
    };
    truncate_chars(&text, budget)
}

fn truncate_chars(s: &str, budget: usize) -> String {
    if s.chars().count() <= budget {
        return s.to_string();
    }
    s.chars().take(budget).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::{ScriptedBackend, TranscriptEntry, WILDCARD};
    use crate::gateway::{fingerprint, Gateway};

    fn scripted(entries: Vec<TranscriptEntry>) -> Gateway {
        Gateway::new(Box::new(ScriptedBackend::new(entries).unwrap()))
    }

    fn wildcard(text: &str) -> TranscriptEntry {
        TranscriptEntry {
            fingerprint: WILDCARD.into(),
            response_text: text.into(),
            tokens_in: 50,
            tokens_out: 10,
        }
    }

    #[test]
    fn coarse_uses_scripted_summary() {
        let mut gw = scripted(vec![wildcard(
            "Port scan of 10.0.0.5: 22/ssh, 8080/http open",
        )]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) = summarize_coarse(
            &mut gw,
            &p,
            &prompts,
            "nmap -sV 10.0.0.5",
            "enumerate services",
            "PORT   STATE SERVICE\n22/tcp open ssh\n8080/tcp open http",
            Some(0),
            512,
            &mut Vec::new(),
        );
        assert!(err.is_none());
        assert!(!out.degraded);
        assert_eq!(out.text, "Port scan of 10.0.0.5: 22/ssh, 8080/http open");
    }

    #[test]
    fn coarse_respects_budget() {
        let mut gw = scripted(vec![wildcard(&"x".repeat(2000))]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, _) =
            summarize_coarse(&mut gw, &p, &prompts, "cmd", "why", "some output", Some(0), 512, &mut Vec::new());
        assert_eq!(out.text.chars().count(), 512);
    }

    #[test]
    fn empty_fine_short_circuits_without_model_call() {
        let mut gw = scripted(vec![]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) =
            summarize_coarse(&mut gw, &p, &prompts, "true", "check", "   \n", Some(3), 512, &mut Vec::new());
        assert!(err.is_none());
        assert_eq!(out.text, "command produced no output (exit 3)");
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn backend_failure_degrades_to_fine_excerpt() {
        let mut gw = scripted(vec![]); // every call misses
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let fine = "l1\nl2\nl3\nl4\nl5\nl6";
        let (out, err) =
            summarize_coarse(&mut gw, &p, &prompts, "cmd", "why", fine, Some(0), 512, &mut Vec::new());
        assert!(out.degraded);
        assert!(matches!(err, Some(GatewayError::TranscriptMiss(_))));
        assert_eq!(out.text, "l1\nl2\n[...]\nl5\nl6");
    }

    #[test]
    fn refusal_during_summary_degrades_and_reports() {
        let mut gw = scripted(vec![wildcard("I'm sorry, but I can't assist with that.")]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) =
            summarize_coarse(&mut gw, &p, &prompts, "cmd", "why", "output here", Some(0), 512, &mut Vec::new());
        assert!(out.degraded);
        assert!(matches!(err, Some(GatewayError::Refusal(_))));
    }

    #[test]
    fn abstract_folds_previous_and_new() {
        let mut gw = scripted(vec![wildcard(
            "Scanned host; ssh+http found; exploit attempt failed (timeout)",
        )]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) = summarize_abstract(
            &mut gw,
            &p,
            &prompts,
            Some("Scanned host; ssh+http found"),
            &["exploit attempt timed out".to_string()],
            1024,
            &mut Vec::new(),
        );
        assert!(err.is_none());
        assert!(out.text.contains("failed"));
    }

    #[test]
    fn abstract_with_no_entries_is_fixed_text() {
        let mut gw = scripted(vec![]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) = summarize_abstract(&mut gw, &p, &prompts, None, &[], 1024, &mut Vec::new());
        assert!(err.is_none());
        assert_eq!(out.text, "no actions taken yet");
        assert_eq!(gw.calls_made(), 0);
    }

    #[test]
    fn abstract_unchanged_when_nothing_new() {
        let mut gw = scripted(vec![]);
        let p = ModelProfile::test_profile("m");
        let prompts = PromptSet::builtin();
        let (out, err) =
            summarize_abstract(&mut gw, &p, &prompts, Some("progress so far"), &[], 1024, &mut Vec::new());
        assert!(err.is_none());
        assert_eq!(out.text, "progress so far");
        assert_eq!(gw.calls_made(), 0, "caching rule: no backend call");
    }

    #[test]
    fn scripted_replay_is_deterministic_by_fingerprint() {
        let prompts = PromptSet::builtin();
        let messages = coarse_messages(&prompts, "id", "who am i", "uid=0(root)", Some(0));
        let entry = TranscriptEntry {
            fingerprint: fingerprint(&messages),
            response_text: "Ran id; confirmed root".into(),
            tokens_in: 40,
            tokens_out: 8,
        };
        for _ in 0..2 {
            let mut gw = scripted(vec![entry.clone()]);
            let p = ModelProfile::test_profile("m");
            let (out, err) = summarize_coarse(
                &mut gw,
                &p,
                &prompts,
                "id",
                "who am i",
                "uid=0(root)",
                Some(0),
                512,
                &mut Vec::new(),
            );
            assert!(err.is_none());
            assert_eq!(out.text, "Ran id; confirmed root");
        }
    }
}
