//! Prompt templates as data.
//!
//! Every model-facing prompt lives in a plain-text template file with
//! `{name}` placeholders. The compiled-in defaults come from the `prompts/`
//! directory of this crate; a run can override any subset by pointing its
//! config at a directory holding files with the same names. Tests pin
//! scripted transcripts, not prompt wording, so templates can evolve without
//! breaking replay fixtures that were recorded against them.

use std::collections::BTreeMap;
use std::path::Path;

macro_rules! template_files {
    ($(($field:ident, $file:literal)),+ $(,)?) => {
        /// The full prompt set used by one run.
        #[derive(Debug, Clone)]
        pub struct PromptSet {
            $(pub $field: String,)+
        }

        impl PromptSet {
            /// Compiled-in defaults.
            pub fn builtin() -> Self {
                PromptSet {
                    $($field: include_str!(concat!("../prompts/", $file)).to_string(),)+
                }
            }

            /// Builtin set with per-file overrides read from `dir`.
            pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
                let mut set = PromptSet::builtin();
                $(
                    let p = dir.join($file);
                    if p.is_file() {
                        set.$field = std::fs::read_to_string(&p)?;
                    }
                )+
                Ok(set)
            }

            /// File names recognized by `from_dir`.
            pub fn file_names() -> &'static [&'static str] {
                &[$($file),+]
            }
        }
    };
}

template_files![
    (goal_shell, "goal_shell.txt"),
    (goal_flag, "goal_flag.txt"),
    (reasoner_system, "reasoner_system.txt"),
    (reasoner_user, "reasoner_user.txt"),
    (assistant_system, "assistant_system.txt"),
    (assistant_user, "assistant_user.txt"),
    (coarse_system, "coarse_system.txt"),
    (coarse_user, "coarse_user.txt"),
    (abstract_system, "abstract_system.txt"),
    (abstract_user, "abstract_user.txt"),
    (score_system, "score_system.txt"),
    (score_user, "score_user.txt"),
    (reformat, "reformat.txt"),
    (arsenal_filter, "arsenal_filter.txt"),
    (arsenal_classify, "arsenal_classify.txt"),
    (arsenal_ued, "arsenal_ued.txt"),
];

/// First `KEY: value` line in a structured reply; tolerates leading
/// whitespace and markdown emphasis around the key.
pub fn line_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let l = l.trim().trim_start_matches(['*', '#', '-', ' ']);
        l.strip_prefix(key)
            .and_then(|rest| rest.trim_start().strip_prefix(':'))
            .map(str::trim)
    })
}

/// Replaces each `{key}` occurrence with its value. Unlisted placeholders are
/// left as-is so a missing substitution is visible in the assembled prompt.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// `fill` over an ordered map, for callers that build substitutions
/// incrementally.
pub fn fill_map(template: &str, values: &BTreeMap<&str, String>) -> String {
    let pairs: Vec<(&str, &str)> = values.iter().map(|(k, v)| (*k, v.as_str())).collect();
    fill(template, &pairs)
}
