//! Turns raw proof-of-concept repositories into descriptors.
//!
//! Stage order: snapshot the repo (pure file inspection), filter out
//! candidates that cannot work unattended, classify the delivery type, then
//! extract the twelve-field descriptor. The last three stages consult a
//! model; every parse failure has a conservative fallback so one bad reply
//! cannot wedge a batch ingest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExploitType, Ued};
use crate::gateway::{ChatMessage, Gateway, GatewayError, ModelProfile};
use crate::prompts::{fill, PromptSet};

const README_CAP: usize = 4096;
const EXCERPT_CAP: usize = 2048;
const EXCERPT_FILES: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRepo {
    pub path: PathBuf,
    pub cve_id: String,
    /// Relative paths, sorted, .git excluded.
    pub files: Vec<String>,
    pub extension_histogram: BTreeMap<String, usize>,
    pub readme: Option<String>,
    /// Heads of the most code-like files, for classification prompts.
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    /// Why it was kept or dropped: "ok", "front_end_interaction",
    /// "windows_target", "not_rce", or "unparsable".
    pub trait_label: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("descriptor reply was not the required JSON object: {0}")]
    BadJson(String),
    #[error("descriptor reply used keys outside the schema: {0:?}")]
    UnknownKeys(Vec<String>),
    #[error("descriptor is missing required fields for this exploit type: {0:?}")]
    DescriptorIncomplete(Vec<String>),
    #[error("usage example references undeclared placeholder {0}")]
    UndeclaredPlaceholder(String),
    #[error("io: {0}")]
    Io(String),
}

fn clip(s: &str, cap: usize) -> String {
    if s.len() <= cap {
        return s.to_string();
    }
    let mut end = cap;
    while end > 0 && !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Pure file inspection; no model involved.
pub fn snapshot_repo(path: &Path, cve_id: &str) -> Result<CandidateRepo, PipelineError> {
    let mut files = Vec::new();
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(path)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
    {
        let entry = entry.map_err(|e| PipelineError::Io(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(path)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        let ext = entry
            .path()
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_else(|| "(none)".into());
        *histogram.entry(ext.to_string()).or_insert(0) += 1;
        files.push(rel);
    }
    files.sort();

    let readme = files
        .iter()
        .find(|f| f.to_ascii_lowercase().starts_with("readme"))
        .and_then(|f| std::fs::read_to_string(path.join(f)).ok())
        .map(|t| clip(&t, README_CAP));

    let code_exts = ["py", "rb", "sh", "c", "go", "js", "pl", "php", "http", "txt"];
    let mut excerpt = String::new();
    let mut taken = 0;
    for f in &files {
        if taken == EXCERPT_FILES {
            break;
        }
        let lower = f.to_ascii_lowercase();
        if lower.starts_with("readme") {
            continue;
        }
        let ext = lower.rsplit('.').next().unwrap_or("");
        if !code_exts.contains(&ext) {
            continue;
        }
        if let Ok(text) = std::fs::read_to_string(path.join(f)) {
            excerpt.push_str(&format!("--- {f} ---\n{}\n", clip(&text, EXCERPT_CAP)));
            taken += 1;
        }
    }

    Ok(CandidateRepo {
        path: path.to_path_buf(),
        cve_id: cve_id.to_string(),
        files,
        extension_histogram: histogram,
        readme,
        excerpt,
    })
}

fn line_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let l = l.trim();
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(':'))
            .map(str::trim)
    })
}

fn file_listing(c: &CandidateRepo) -> String {
    let mut s = c.files.join("\n");
    if s.is_empty() {
        s = "(no files)".to_string();
    }
    s
}

/// Asks the model whether each candidate can run unattended against a
/// network service. Unparsable replies drop the candidate.
pub fn filter_candidates(
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    candidates: &[CandidateRepo],
) -> Vec<(CandidateRepo, FilterVerdict)> {
    let mut out = Vec::new();
    for c in candidates {
        let user = fill(
            prompts.arsenal_filter.trim_end(),
            &[
                ("cve", &c.cve_id),
                ("files", &file_listing(c)),
                ("readme", c.readme.as_deref().unwrap_or("(no readme)")),
            ],
        );
        let messages = vec![ChatMessage::user(&user)];
        let verdict = match gateway.complete(profile, &messages) {
            Ok(exchange) => {
                let keep = line_value(&exchange.response_text, "KEEP")
                    .map(|v| v.eq_ignore_ascii_case("yes"));
                let label = line_value(&exchange.response_text, "TRAIT")
                    .unwrap_or("unparsable")
                    .to_string();
                match keep {
                    Some(k) => FilterVerdict {
                        keep: k,
                        trait_label: label,
                    },
                    None => FilterVerdict {
                        keep: false,
                        trait_label: "unparsable".to_string(),
                    },
                }
            }
            Err(_) => FilterVerdict {
                keep: false,
                trait_label: "unparsable".to_string(),
            },
        };
        out.push((c.clone(), verdict));
    }
    out
}

/// Classifies the delivery type. An unparsable reply degrades to `Script`,
/// the type whose packaging assumes the least about the attack box.
pub fn classify_exploit(
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    candidate: &CandidateRepo,
) -> Result<(ExploitType, bool), GatewayError> {
    let user = fill(
        prompts.arsenal_classify.trim_end(),
        &[("excerpt", &candidate.excerpt)],
    );
    let messages = vec![ChatMessage::user(&user)];
    let exchange = gateway.complete(profile, &messages)?;
    let parsed = line_value(&exchange.response_text, "TYPE").and_then(|v| {
        match v.to_ascii_lowercase().as_str() {
            "packet" => Some(ExploitType::Packet),
            "commandline" => Some(ExploitType::Commandline),
            "script" => Some(ExploitType::Script),
            _ => None,
        }
    });
    match parsed {
        Some(t) => Ok((t, false)),
        None => Ok((ExploitType::Script, true)),
    }
}

fn strip_code_fences(s: &str) -> &str {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        // drop the info string ("json") on the fence line
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or(rest);
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    t
}

const UED_KEYS: [&str; 12] = [
    "language",
    "language_version",
    "base_image",
    "system_dependencies",
    "code_dependencies",
    "main_script",
    "parameter_files",
    "docker_config",
    "setup_steps",
    "exploit_steps",
    "parameters",
    "usage_example",
];

fn parse_ued_json(text: &str) -> Result<Ued, PipelineError> {
    let body = strip_code_fences(text);
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| PipelineError::BadJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| PipelineError::BadJson("top level is not an object".to_string()))?;
    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| !UED_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(PipelineError::UnknownKeys(unknown));
    }
    serde_json::from_value(value).map_err(|e| PipelineError::BadJson(e.to_string()))
}

/// Placeholder tokens that look like `<NAME>` inside the usage example.
fn usage_placeholders(usage: &str) -> Vec<String> {
    let re = regex::Regex::new(r"<[A-Za-z][A-Za-z0-9_-]*>").unwrap();
    re.find_iter(usage).map(|m| m.as_str().to_string()).collect()
}

fn validate_ued(ued: &Ued, exploit_type: ExploitType) -> Result<(), PipelineError> {
    if exploit_type == ExploitType::Script {
        let mut missing = Vec::new();
        if ued.language.trim().is_empty() {
            missing.push("language".to_string());
        }
        if ued.base_image.trim().is_empty() {
            missing.push("base_image".to_string());
        }
        if ued.main_script.path.trim().is_empty() {
            missing.push("main_script".to_string());
        }
        if !missing.is_empty() {
            return Err(PipelineError::DescriptorIncomplete(missing));
        }
    }
    let declared: Vec<String> = ued
        .parameters
        .iter()
        .map(|p| {
            if p.placeholder.is_empty() {
                format!("<{}>", p.name)
            } else {
                p.placeholder.clone()
            }
        })
        .collect();
    for token in usage_placeholders(&ued.usage_example) {
        if !declared.iter().any(|d| d.eq_ignore_ascii_case(&token)) {
            return Err(PipelineError::UndeclaredPlaceholder(token));
        }
    }
    Ok(())
}

/// Extracts the descriptor. One reformat retry on a malformed reply, then
/// the candidate fails ingestion.
pub fn build_ued(
    gateway: &mut Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    candidate: &CandidateRepo,
    exploit_type: ExploitType,
) -> Result<Ued, PipelineError> {
    let user = fill(
        prompts.arsenal_ued.trim_end(),
        &[
            ("cve", &candidate.cve_id),
            ("exploit_type", &exploit_type.to_string()),
            ("files", &file_listing(candidate)),
            ("readme", candidate.readme.as_deref().unwrap_or("(no readme)")),
            ("excerpt", &candidate.excerpt),
        ],
    );
    let mut messages = vec![ChatMessage::user(&user)];
    let exchange = gateway.complete(profile, &messages)?;
    let first = parse_ued_json(&exchange.response_text);
    let ued = match first {
        Ok(u) => u,
        Err(PipelineError::Gateway(e)) => return Err(PipelineError::Gateway(e)),
        Err(first_err) => {
            messages.push(ChatMessage::assistant(&exchange.response_text));
            messages.push(ChatMessage::user(prompts.reformat.trim_end()));
            let retry = gateway.complete(profile, &messages)?;
            parse_ued_json(&retry.response_text).map_err(|_| first_err)?
        }
    };
    validate_ued(&ued, exploit_type)?;
    Ok(ued)
}
