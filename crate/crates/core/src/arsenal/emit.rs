//! Renders the two artifacts every arsenal record ships with: a container
//! build recipe (script exploits only) and a run manual. Rendering is a pure
//! function of the descriptor, so identical descriptors yield byte-identical
//! artifacts.

use super::{ExploitType, ServiceKey, Ued};

/// Package manager install line for the base image family.
fn system_dep_line(base_image: &str, deps: &[String]) -> String {
    let joined = deps.join(" ");
    if base_image.contains("alpine") {
        format!("RUN apk add --no-cache {joined}")
    } else {
        format!(
            "RUN apt-get update && apt-get install -y --no-install-recommends {joined} \
             && rm -rf /var/lib/apt/lists/*"
        )
    }
}

fn code_dep_line(language: &str, deps: &[String]) -> String {
    let joined = deps.join(" ");
    match language.to_ascii_lowercase().as_str() {
        "python" | "python2" | "python3" => format!("RUN pip install --no-cache-dir {joined}"),
        "ruby" => format!("RUN gem install {joined}"),
        "node" | "nodejs" | "javascript" => format!("RUN npm install -g {joined}"),
        "go" | "golang" => "RUN go mod download".to_string(),
        other => format!("# unhandled dependency manager for language {other:?}: {joined}"),
    }
}

fn exec_form(parts: &[String]) -> String {
    let quoted: Vec<String> = parts
        .iter()
        .map(|p| format!("\"{}\"", p.replace('\\', "\\\\").replace('"', "\\\"")))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// Emits the build recipe for a script exploit. The base image is the one
/// field nothing can be inferred around, so its absence is an error rather
/// than a blank line.
pub fn render_dockerfile(ued: &Ued) -> Result<String, String> {
    if ued.base_image.trim().is_empty() {
        return Err("descriptor has no base_image; cannot emit a build recipe".to_string());
    }
    let workdir = ued
        .docker_config
        .as_ref()
        .map(|d| d.workdir.as_str())
        .filter(|w| !w.trim().is_empty())
        .unwrap_or("/app");
    let mut lines = vec![format!("FROM {}", ued.base_image.trim())];
    if !ued.system_dependencies.is_empty() {
        lines.push(system_dep_line(&ued.base_image, &ued.system_dependencies));
    }
    lines.push(format!("WORKDIR {workdir}"));
    lines.push("COPY . .".to_string());
    if !ued.code_dependencies.is_empty() {
        lines.push(code_dep_line(&ued.language, &ued.code_dependencies));
    }
    let entrypoint: Vec<String> = match ued.docker_config.as_ref() {
        Some(d) if !d.entrypoint.is_empty() => d.entrypoint.clone(),
        _ => {
            let mut ep = Vec::new();
            if !ued.main_script.executor.trim().is_empty() {
                ep.push(ued.main_script.executor.trim().to_string());
            }
            if !ued.main_script.path.trim().is_empty() {
                ep.push(ued.main_script.path.trim().to_string());
            }
            ep
        }
    };
    if !entrypoint.is_empty() {
        lines.push(format!("ENTRYPOINT {}", exec_form(&entrypoint)));
    }
    if let Some(d) = ued.docker_config.as_ref() {
        if !d.default_command.trim().is_empty() {
            lines.push(format!(
                "CMD {}",
                exec_form(&["sh".to_string(), "-c".to_string(), d.default_command.clone()])
            ));
        }
    }
    let mut out = lines.join("\n");
    out.push('\n');
    Ok(out)
}

fn numbered(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Emits the fixed-structure run manual. Sections always appear in the same
/// order; empty sections say so explicitly instead of vanishing, so manuals
/// stay diffable across records.
pub fn render_manual(
    cve_id: &str,
    exploit_type: ExploitType,
    service: &ServiceKey,
    ued: &Ued,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {cve_id} ({exploit_type})\n\n"));
    out.push_str(&format!(
        "Affected: {} {}\n\n",
        service.name, service.version_range
    ));

    out.push_str("## Purpose\n");
    if ued.main_script.metadata.trim().is_empty() {
        out.push_str(&format!(
            "{} exploit for {cve_id} against {}.\n",
            exploit_type, service.name
        ));
    } else {
        out.push_str(ued.main_script.metadata.trim());
        out.push('\n');
    }
    out.push('\n');

    out.push_str("## Setup\n");
    if ued.setup_steps.is_empty() {
        out.push_str("No setup required.\n");
    } else {
        out.push_str(&numbered(&ued.setup_steps));
        out.push('\n');
    }
    out.push('\n');

    out.push_str("## Exploit steps\n");
    if ued.exploit_steps.is_empty() {
        out.push_str("None recorded.\n");
    } else {
        out.push_str(&numbered(&ued.exploit_steps));
        out.push('\n');
    }
    out.push('\n');

    out.push_str("## Parameters\n");
    if ued.parameters.is_empty() {
        out.push_str("None.\n");
    } else {
        out.push_str("| name | placeholder | default | description |\n");
        out.push_str("|------|-------------|---------|-------------|\n");
        for p in &ued.parameters {
            let placeholder = if p.placeholder.is_empty() {
                format!("<{}>", p.name)
            } else {
                p.placeholder.clone()
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                p.name,
                placeholder,
                p.default.as_deref().unwrap_or("(required)"),
                p.description
            ));
        }
    }
    out.push('\n');

    out.push_str("## Usage\n");
    if ued.usage_example.trim().is_empty() {
        out.push_str("No usage example recorded.\n");
    } else {
        out.push_str("    ");
        out.push_str(ued.usage_example.trim());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arsenal::{DockerConfig, MainScript, ParameterSpec};

    fn script_ued() -> Ued {
        Ued {
            language: "python".into(),
            language_version: "3.11".into(),
            base_image: "python:3.11-slim".into(),
            system_dependencies: vec!["curl".into()],
            code_dependencies: vec!["requests".into()],
            main_script: MainScript {
                path: "exploit.py".into(),
                executor: "python3".into(),
                metadata: "Sends a crafted request to gain code execution.".into(),
            },
            parameter_files: vec![],
            docker_config: None,
            setup_steps: vec!["Confirm the service is reachable.".into()],
            exploit_steps: vec!["Run the script against the target.".into()],
            parameters: vec![ParameterSpec {
                name: "rhost".into(),
                placeholder: "<RHOST>".into(),
                description: "target address".into(),
                default: None,
            }],
            usage_example: "python3 exploit.py <RHOST>".into(),
        }
    }

    #[test]
    fn dockerfile_golden() {
        let got = render_dockerfile(&script_ued()).unwrap();
        let want = "\
FROM python:3.11-slim
RUN apt-get update && apt-get install -y --no-install-recommends curl && rm -rf /var/lib/apt/lists/*
WORKDIR /app
COPY . .
RUN pip install --no-cache-dir requests
ENTRYPOINT [\"python3\", \"exploit.py\"]
";
        assert_eq!(got, want);
    }

    #[test]
    fn alpine_uses_apk() {
        let mut ued = script_ued();
        ued.base_image = "alpine:3.19".into();
        let df = render_dockerfile(&ued).unwrap();
        assert!(df.contains("apk add --no-cache curl"));
        assert!(!df.contains("apt-get"));
    }

    #[test]
    fn missing_base_image_is_an_error() {
        let mut ued = script_ued();
        ued.base_image.clear();
        assert!(render_dockerfile(&ued).is_err());
    }

    #[test]
    fn explicit_docker_config_wins() {
        let mut ued = script_ued();
        ued.docker_config = Some(DockerConfig {
            workdir: "/poc".into(),
            entrypoint: vec!["python3".into(), "run.py".into()],
            default_command: "python3 run.py <RHOST>".into(),
        });
        let df = render_dockerfile(&ued).unwrap();
        assert!(df.contains("WORKDIR /poc"));
        assert!(df.contains("ENTRYPOINT [\"python3\", \"run.py\"]"));
        assert!(df.contains("CMD [\"sh\", \"-c\", \"python3 run.py <RHOST>\"]"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let ued = script_ued();
        let service = ServiceKey::new("demo", "1.2.x");
        let a = render_manual("CVE-2099-0001", ExploitType::Script, &service, &ued);
        let b = render_manual("CVE-2099-0001", ExploitType::Script, &service, &ued);
        assert_eq!(a, b);
        assert_eq!(
            render_dockerfile(&ued).unwrap(),
            render_dockerfile(&ued).unwrap()
        );
    }

    #[test]
    fn manual_has_all_sections_in_order() {
        let ued = script_ued();
        let service = ServiceKey::new("demo", "*");
        let m = render_manual("CVE-2099-0001", ExploitType::Script, &service, &ued);
        let idx = |needle: &str| m.find(needle).unwrap_or_else(|| panic!("missing {needle}"));
        assert!(idx("# CVE-2099-0001") < idx("## Purpose"));
        assert!(idx("## Purpose") < idx("## Setup"));
        assert!(idx("## Setup") < idx("## Exploit steps"));
        assert!(idx("## Exploit steps") < idx("## Parameters"));
        assert!(idx("## Parameters") < idx("## Usage"));
        assert!(m.contains("| rhost | <RHOST> | (required) | target address |"));
        assert!(m.contains("    python3 exploit.py <RHOST>"));
    }

    #[test]
    fn empty_sections_are_labeled_not_dropped() {
        let ued = Ued {
            usage_example: "nc host 80 < payload.bin".into(),
            ..Ued::default()
        };
        let service = ServiceKey::new("demo", "*");
        let m = render_manual("CVE-2099-0002", ExploitType::Packet, &service, &ued);
        assert!(m.contains("No setup required."));
        assert!(m.contains("None recorded."));
        assert!(m.contains("None.\n"));
    }
}
