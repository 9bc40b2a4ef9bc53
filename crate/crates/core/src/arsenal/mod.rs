//! The exploit arsenal: a local registry of vetted, packaged exploits.
//!
//! Raw proof-of-concept repos are filtered, classified by delivery type, and
//! distilled into a twelve-field descriptor that is rich enough to emit both
//! a container build recipe and a human-readable run manual. Built records
//! are indexed by CVE and by affected service so the agent can pull a
//! ready-to-fire exploit once it knows what is listening.

pub mod emit;
pub mod pipeline;
pub mod registry;
pub mod version;

pub use emit::{render_dockerfile, render_manual};
pub use pipeline::{
    build_ued, classify_exploit, filter_candidates, snapshot_repo, CandidateRepo, FilterVerdict,
    PipelineError,
};
pub use registry::{ArsenalRegistry, ExploitQuery, ImportOutcome};
pub use version::{Version, VersionRange};

use serde::{Deserialize, Serialize};

/// How the exploit reaches the target; decides what artifacts get emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploitType {
    /// Crafted bytes or requests sent straight at the service.
    Packet,
    /// Code with its own runtime and dependencies; runs containerized.
    Script,
    /// A one-liner over tools already on the attack box.
    Commandline,
}

impl ExploitType {
    /// Which artifacts a record of this type must carry.
    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            ExploitType::Script => &["manual", "dockerfile"],
            ExploitType::Packet | ExploitType::Commandline => &["manual"],
        }
    }
}

impl std::fmt::Display for ExploitType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExploitType::Packet => "packet",
            ExploitType::Script => "script",
            ExploitType::Commandline => "commandline",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MainScript {
    #[serde(default)]
    pub path: String,
    /// Interpreter or binary that runs the entry file ("python3", "bash").
    #[serde(default)]
    pub executor: String,
    #[serde(default)]
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DockerConfig {
    #[serde(default)]
    pub workdir: String,
    #[serde(default)]
    pub entrypoint: Vec<String>,
    #[serde(default)]
    pub default_command: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    /// Token to substitute in commands, e.g. "<RHOST>". Empty means
    /// "<name>".
    #[serde(default)]
    pub placeholder: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub default: Option<String>,
}

/// The unified exploit descriptor. Every field can be blank; completeness
/// requirements depend on the exploit type and are checked downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Ued {
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub language_version: String,
    #[serde(default)]
    pub base_image: String,
    #[serde(default)]
    pub system_dependencies: Vec<String>,
    #[serde(default)]
    pub code_dependencies: Vec<String>,
    #[serde(default)]
    pub main_script: MainScript,
    #[serde(default)]
    pub parameter_files: Vec<String>,
    #[serde(default)]
    pub docker_config: Option<DockerConfig>,
    #[serde(default)]
    pub setup_steps: Vec<String>,
    #[serde(default)]
    pub exploit_steps: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub usage_example: String,
}

/// One descriptor field, for ablation and completeness reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Language,
    LanguageVersion,
    BaseImage,
    SystemDependencies,
    CodeDependencies,
    MainScript,
    ParameterFiles,
    DockerConfig,
    SetupSteps,
    ExploitSteps,
    Parameters,
    UsageExample,
}

impl Dimension {
    pub const ALL: [Dimension; 12] = [
        Dimension::Language,
        Dimension::LanguageVersion,
        Dimension::BaseImage,
        Dimension::SystemDependencies,
        Dimension::CodeDependencies,
        Dimension::MainScript,
        Dimension::ParameterFiles,
        Dimension::DockerConfig,
        Dimension::SetupSteps,
        Dimension::ExploitSteps,
        Dimension::Parameters,
        Dimension::UsageExample,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Dimension::Language => "language",
            Dimension::LanguageVersion => "language_version",
            Dimension::BaseImage => "base_image",
            Dimension::SystemDependencies => "system_dependencies",
            Dimension::CodeDependencies => "code_dependencies",
            Dimension::MainScript => "main_script",
            Dimension::ParameterFiles => "parameter_files",
            Dimension::DockerConfig => "docker_config",
            Dimension::SetupSteps => "setup_steps",
            Dimension::ExploitSteps => "exploit_steps",
            Dimension::Parameters => "parameters",
            Dimension::UsageExample => "usage_example",
        }
    }

    /// Clears this field, for single-dimension ablation runs.
    pub fn blank(&self, ued: &mut Ued) {
        match self {
            Dimension::Language => ued.language.clear(),
            Dimension::LanguageVersion => ued.language_version.clear(),
            Dimension::BaseImage => ued.base_image.clear(),
            Dimension::SystemDependencies => ued.system_dependencies.clear(),
            Dimension::CodeDependencies => ued.code_dependencies.clear(),
            Dimension::MainScript => ued.main_script = MainScript::default(),
            Dimension::ParameterFiles => ued.parameter_files.clear(),
            Dimension::DockerConfig => ued.docker_config = None,
            Dimension::SetupSteps => ued.setup_steps.clear(),
            Dimension::ExploitSteps => ued.exploit_steps.clear(),
            Dimension::Parameters => ued.parameters.clear(),
            Dimension::UsageExample => ued.usage_example.clear(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// A local proof-of-concept repository that was ingested.
    Repo { path: String },
    /// A module reference inside an installed tool (no ingestion needed).
    ExternalTool { tool: String, module_path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum BuildStatus {
    /// Nothing to build (packet, commandline, external tool).
    #[default]
    NotApplicable,
    Built,
    Failed {
        reason: String,
    },
}

/// Which service and version span an exploit applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceKey {
    pub name: String,
    pub version_range: VersionRange,
}

impl ServiceKey {
    pub fn new(name: &str, range: &str) -> ServiceKey {
        ServiceKey {
            name: name.to_ascii_lowercase(),
            version_range: range.parse().unwrap_or_else(|_| VersionRange::any()),
        }
    }
}

pub const DEFAULT_NATIVE_RANK: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitRecord {
    /// Stable id, also the registry directory name and image tag suffix.
    pub record_id: String,
    pub cve_id: String,
    pub source: Source,
    pub exploit_type: ExploitType,
    #[serde(default)]
    pub ued: Option<Ued>,
    /// Rendered build recipe for script exploits.
    #[serde(default)]
    pub dockerfile: Option<String>,
    pub manual: String,
    #[serde(default)]
    pub build_status: BuildStatus,
    /// Lower fires first when several exploits match one service.
    #[serde(default = "default_rank")]
    pub rank: u32,
    pub affected_service: ServiceKey,
}

fn default_rank() -> u32 {
    DEFAULT_NATIVE_RANK
}

impl ExploitRecord {
    /// Artifacts that must be present for the record to be servable.
    pub fn missing_artifacts(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        for artifact in self.exploit_type.outputs() {
            let present = match *artifact {
                "manual" => !self.manual.trim().is_empty(),
                "dockerfile" => self
                    .dockerfile
                    .as_ref()
                    .is_some_and(|d| !d.trim().is_empty()),
                _ => true,
            };
            if !present {
                missing.push(*artifact);
            }
        }
        missing
    }
}
