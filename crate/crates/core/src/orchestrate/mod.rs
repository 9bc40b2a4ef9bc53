//! Mission loop: one full trial against one target.
//!
//! `run_pentest` wires the planner, instruction generator, executor, memory
//! tree, and gateway together, appends every step to the run's event log, and
//! leaves two files behind: `summary.json`, which is deterministic given the
//! same transcript and config, and `report.txt` for humans. The [`bench`]
//! harness repeats trials across a host manifest; [`report`] rebuilds
//! summaries from event logs and audits them.

pub mod bench;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arsenal::ArsenalRegistry;
use crate::assistant::{self, AssistantStep, ServiceObservation, MANUAL_CAP};
use crate::compress::{summarize_abstract, summarize_coarse, Budgets, Granularity};
use crate::events::{Event, EventLog, EVENT_SCHEMA_VERSION};
use crate::executor::{ChannelSpec, Cidr, ExecError, ExecutionResult, Executor, Instruction};
use crate::gateway::{
    load_profiles, ChatBackend, Gateway, GatewayError, HttpBackend, ModelProfile, Money,
    ScriptedBackend,
};
use crate::memory::{Locus, MemoryTree, NodeId, NodeStatus};
use crate::prompts::PromptSet;
use crate::reasoner::{
    anchor_locus, claimed_evidence, plan_next, receive_phase_report, Evidence, GoalMode,
    MissionState, MissionVerdict, PhaseOutcome, PhasedGoal, PlanDecision,
};
use crate::store::RunStore;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Everything one trial needs, loadable from a TOML file. Every field has a
/// default so configs only state what differs; `validate` catches the ones
/// that genuinely cannot be defaulted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// IP address or CIDR block the mission statement names.
    pub target: String,
    pub goal_mode: GoalMode,
    /// Key into the profiles file.
    pub profile_name: String,
    pub channel: ChannelSpec,
    /// CIDR blocks the executor may touch. Must cover `target`.
    pub allowlist: Vec<String>,
    /// Max phases the planner may spend.
    pub phase_budget: u32,
    /// Max instructions per phase.
    pub instr_budget: u32,
    pub wall_clock_cap_secs: Option<f64>,
    pub out_dir: PathBuf,
    /// Recorded transcript for replay; absent means live HTTP.
    pub transcript: Option<PathBuf>,
    pub profiles_path: PathBuf,
    /// Directory of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
    /// Exploit registry consulted for manuals; absent disables lookups.
    pub registry_dir: Option<PathBuf>,
    /// Seconds a session gets to produce output after stdin input.
    pub settle_secs: f64,
    /// Failed phases tolerated per node before it is written off.
    pub retries_per_node: u32,
    pub seed: u64,
    pub container_cli: String,
    /// Explicit run id; the default is derived from the config itself.
    pub run_id: Option<String>,
    pub flag_pattern: Option<String>,
    /// Decimal cost cap in `cost_currency`; the run stops once exceeded.
    pub max_cost: Option<String>,
    pub cost_currency: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target: String::new(),
            goal_mode: GoalMode::AcquireShell,
            profile_name: "default".to_string(),
            channel: ChannelSpec::Local,
            allowlist: Vec::new(),
            phase_budget: 40,
            instr_budget: 15,
            wall_clock_cap_secs: None,
            out_dir: PathBuf::new(),
            transcript: None,
            profiles_path: PathBuf::new(),
            prompts_dir: None,
            registry_dir: None,
            settle_secs: 5.0,
            retries_per_node: 2,
            seed: 0,
            container_cli: "docker".to_string(),
            run_id: None,
            flag_pattern: None,
            max_cost: None,
            cost_currency: "RMB".to_string(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let missing = |what: &str| RunError::Config(format!("{what} is required"));
        if self.target.trim().is_empty() {
            return Err(missing("target"));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(missing("out_dir"));
        }
        if self.profiles_path.as_os_str().is_empty() {
            return Err(missing("profiles_path"));
        }
        if self.allowlist.is_empty() {
            return Err(RunError::Config(
                "allowlist must list at least one CIDR block".to_string(),
            ));
        }
        if self.phase_budget == 0 || self.instr_budget == 0 {
            return Err(RunError::Config(
                "phase_budget and instr_budget must be at least 1".to_string(),
            ));
        }
        if !self.settle_secs.is_finite() || self.settle_secs < 0.0 {
            return Err(RunError::Config("settle_secs must be non-negative".to_string()));
        }
        Ok(())
    }

    /// Explicit id, or a digest of the config with the fields that vary
    /// between identical reruns (output directory, the id itself) blanked, so
    /// replaying the same trial into a fresh directory keeps its identity.
    pub fn resolved_run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.run_id = None;
        let encoded = serde_json::to_string(&canonical).unwrap_or_default();
        let digest = Sha256::digest(encoded.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("run-{}", &hex[..12])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("executor: {0}")]
    Exec(#[from] ExecError),
}

/// Process exit code a finished trial maps to. Errors (`RunError`) are a
/// fourth code, handled by the caller.
pub fn exit_code(verdict: MissionVerdict) -> i32 {
    match verdict {
        MissionVerdict::Success => 0,
        MissionVerdict::Exhausted => 2,
        MissionVerdict::BudgetExceeded => 3,
        MissionVerdict::InProgress => 4,
    }
}

pub fn evidence_label(evidence: &Evidence) -> String {
    match evidence {
        Evidence::Shell { session, is_root } => {
            format!("shell session={session} root={is_root}")
        }
        Evidence::Flag { value } => format!("flag {value}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TreeStats {
    pub nodes: usize,
    pub entries: usize,
    pub max_depth: usize,
    pub paths: usize,
}

pub fn tree_stats(tree: &MemoryTree) -> TreeStats {
    let paths = tree.enumerate_paths();
    let max_depth = paths
        .iter()
        .map(|p| p.nodes.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    TreeStats {
        nodes: tree.nodes.len(),
        entries: tree.entries.len(),
        max_depth,
        paths: paths.len(),
    }
}

/// The machine-readable result of a trial. Contains nothing wall-clock
/// dependent: replaying the same transcript and config must reproduce it
/// byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunSummary {
    pub schema: u32,
    pub run_id: String,
    pub target: String,
    pub goal_mode: String,
    pub outcome: String,
    pub evidence: Option<String>,
    pub phases_planned: u32,
    pub instructions_executed: u64,
    pub gateway_calls: u64,
    pub refusals: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Exact decimal cost per currency code.
    pub cost: BTreeMap<String, String>,
    pub tree: TreeStats,
    /// Event-kind histogram of the run log.
    pub events: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub verdict: MissionVerdict,
    pub evidence: Option<Evidence>,
    pub phases_planned: u32,
    pub instructions_executed: u64,
    pub gateway_calls: u64,
    pub refusals: u64,
    pub wall_secs: f64,
    pub out_dir: PathBuf,
    pub summary_path: PathBuf,
}

struct Engine<'a> {
    config: &'a RunConfig,
    mission: MissionState,
    tree: MemoryTree,
    gateway: Gateway,
    exec: Executor,
    prompts: PromptSet,
    profile: ModelProfile,
    registry: Option<ArsenalRegistry>,
    log: EventLog,
    budgets: Budgets,
    placeholder_re: regex::Regex,
    flag_re: regex::Regex,
    started: Instant,
    max_cost: Option<Money>,
    phases_used: u32,
    instructions: u64,
    refusals: u64,
    retries: BTreeMap<NodeId, u32>,
    focus: NodeId,
    event_counts: BTreeMap<String, u64>,
}

pub fn run_pentest(config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let run_id = config.resolved_run_id();

    let profiles = load_profiles(&config.profiles_path)?;
    let profile = profiles.get(&config.profile_name).cloned().ok_or_else(|| {
        RunError::Config(format!(
            "profile {:?} not found in {}",
            config.profile_name,
            config.profiles_path.display()
        ))
    })?;
    let prompts = match &config.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    };
    let backend: Box<dyn ChatBackend> = match &config.transcript {
        Some(path) => Box::new(
            ScriptedBackend::from_file(path)
                .map_err(|e| RunError::Config(format!("transcript: {e}")))?,
        ),
        None => Box::new(HttpBackend::new()),
    };
    let gateway = Gateway::new(backend);

    let allowlist = parse_allowlist(&config.allowlist)?;
    let mut exec = Executor::new(&config.target, &allowlist, config.channel.clone(), config.seed)
        .map_err(|e| RunError::Config(e.to_string()))?;
    exec.settle_secs = config.settle_secs;
    exec.container_cli = config.container_cli.clone();

    let registry = match &config.registry_dir {
        Some(dir) => Some(
            ArsenalRegistry::open(dir).map_err(|e| RunError::Config(format!("registry: {e}")))?,
        ),
        None => None,
    };
    let max_cost = match &config.max_cost {
        Some(text) => Some(
            text.parse::<Money>()
                .map_err(|e| RunError::Config(format!("max_cost: {e}")))?,
        ),
        None => None,
    };

    let mut mission = MissionState::new(config.goal_mode, &config.target);
    if let Some(pattern) = &config.flag_pattern {
        mission.flag_pattern = pattern.clone();
    }
    let flag_re = regex::Regex::new(&mission.flag_pattern)
        .map_err(|e| RunError::Config(format!("flag_pattern: {e}")))?;

    let store = RunStore::create(&config.out_dir)?;
    let log = EventLog::create(&store.events_path())?;
    let tree = MemoryTree::init(&config.target);
    let focus = tree.root;

    let mut engine = Engine {
        config,
        mission,
        tree,
        gateway,
        exec,
        prompts,
        profile,
        registry,
        log,
        budgets: Budgets::default(),
        placeholder_re: regex::Regex::new(assistant::DEFAULT_PLACEHOLDER_PATTERN)
            .expect("builtin placeholder pattern"),
        flag_re,
        started: Instant::now(),
        max_cost,
        phases_used: 0,
        instructions: 0,
        refusals: 0,
        retries: BTreeMap::new(),
        focus,
        event_counts: BTreeMap::new(),
    };

    engine.emit(Event::RunStarted {
        schema: EVENT_SCHEMA_VERSION,
        run_id: run_id.clone(),
        target: config.target.clone(),
        goal_mode: config.goal_mode.to_string(),
        limited_instruction: true,
    })?;

    engine.mission_loop()?;
    engine.exec.shutdown();

    engine.emit(Event::MissionEnded {
        verdict: engine.mission.verdict.to_string(),
        outcome: mission_outcome_label(&engine.mission),
        evidence: engine.mission.evidence.as_ref().map(evidence_label),
    })?;

    store.save_tree(&engine.tree)?;
    let summary = engine.build_summary(&run_id);
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| RunError::Config(format!("summary serialization: {e}")))?;
    std::fs::write(store.summary_path(), summary_json + "\n")?;
    let wall_secs = engine.started.elapsed().as_secs_f64();
    std::fs::write(store.report_path(), engine.human_report(&summary, wall_secs))?;

    Ok(RunOutcome {
        run_id,
        verdict: engine.mission.verdict,
        evidence: engine.mission.evidence.clone(),
        phases_planned: engine.mission.phases_planned,
        instructions_executed: engine.instructions,
        gateway_calls: summary.gateway_calls,
        refusals: engine.refusals,
        wall_secs,
        out_dir: config.out_dir.clone(),
        summary_path: store.summary_path(),
    })
}

fn mission_outcome_label(mission: &MissionState) -> String {
    match (&mission.verdict, &mission.evidence) {
        (MissionVerdict::Success, Some(Evidence::Shell { .. })) => "shell_acquired",
        (MissionVerdict::Success, Some(Evidence::Flag { .. })) => "flag_captured",
        (MissionVerdict::Success, None) => "success",
        (MissionVerdict::Exhausted, _) => "tree_exhausted",
        (MissionVerdict::BudgetExceeded, _) => "budget_exceeded",
        (MissionVerdict::InProgress, _) => "aborted",
    }
    .to_string()
}

fn parse_allowlist(specs: &[String]) -> Result<Vec<Cidr>, RunError> {
    specs
        .iter()
        .map(|s| {
            s.parse::<Cidr>()
                .map_err(|e| RunError::Config(format!("allowlist entry {s:?}: {e}")))
        })
        .collect()
}

fn looks_like_cve(id: &str) -> bool {
    let upper = id.to_ascii_uppercase();
    match upper.strip_prefix("CVE-") {
        Some(rest) => {
            !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit() || c == '-')
        }
        None => false,
    }
}

impl Engine<'_> {
    fn emit(&mut self, event: Event) -> Result<(), RunError> {
        *self.event_counts.entry(event.kind().to_string()).or_insert(0) += 1;
        self.log.append(event)?;
        Ok(())
    }

    fn emit_all(&mut self, events: Vec<Event>) -> Result<(), RunError> {
        for event in events {
            self.emit(event)?;
        }
        Ok(())
    }

    fn note_refusal(&mut self, err: &Option<GatewayError>) {
        if matches!(err, Some(GatewayError::Refusal(_))) {
            self.refusals += 1;
        }
    }

    fn over_wall_cap(&self) -> bool {
        self.config
            .wall_clock_cap_secs
            .is_some_and(|cap| self.started.elapsed().as_secs_f64() >= cap)
    }

    fn over_cost_cap(&self) -> bool {
        self.max_cost
            .is_some_and(|cap| self.gateway.ledger.total_cost_in(&self.config.cost_currency) > cap)
    }

    fn mission_loop(&mut self) -> Result<(), RunError> {
        while self.mission.verdict == MissionVerdict::InProgress {
            if self.over_wall_cap() {
                self.mission.verdict = MissionVerdict::BudgetExceeded;
                self.emit(Event::Note {
                    text: "wall-clock cap reached".to_string(),
                })?;
                break;
            }
            if self.over_cost_cap() {
                self.mission.verdict = MissionVerdict::BudgetExceeded;
                self.emit(Event::Note {
                    text: "cost cap reached".to_string(),
                })?;
                break;
            }

            let remaining = self.config.phase_budget.saturating_sub(self.phases_used);
            let mut evbuf = Vec::new();
            let decision = plan_next(
                &self.mission,
                &self.tree,
                self.focus,
                &mut self.gateway,
                &self.profile,
                &self.prompts,
                remaining,
                self.config.instr_budget,
                &mut evbuf,
            );
            self.emit_all(evbuf)?;
            let decision = match decision {
                Ok(d) => d,
                Err(GatewayError::Refusal(_)) => {
                    self.refusals += 1;
                    self.phases_used += 1;
                    continue;
                }
                Err(e) => return Err(RunError::Gateway(e)),
            };

            match decision {
                PlanDecision::Done { evidence } => {
                    if self.mission.evidence.is_some() {
                        self.mission.verdict = MissionVerdict::Success;
                        break;
                    }
                    // a completion claim burns a phase whether or not it holds
                    self.phases_used += 1;
                    match self.verify_claim(evidence)? {
                        Some(proof) => {
                            self.mission.evidence = Some(proof);
                            self.mission.verdict = MissionVerdict::Success;
                            break;
                        }
                        None => {
                            self.emit(Event::Note {
                                text: "completion claim did not verify".to_string(),
                            })?;
                            let outcome = PhaseOutcome::Failed {
                                reason: "unverified completion claim".to_string(),
                            };
                            receive_phase_report(
                                &mut self.mission,
                                &mut self.tree,
                                self.focus,
                                &outcome,
                                &mut self.retries,
                                self.config.retries_per_node,
                            );
                        }
                    }
                }
                PlanDecision::Goal(goal) => {
                    self.phases_used += 1;
                    self.mission.phases_planned += 1;
                    let node = match &goal.locus {
                        Some(locus) => {
                            let mut evbuf = Vec::new();
                            let anchored = anchor_locus(&mut self.tree, locus, &mut evbuf)
                                .map_err(|e| RunError::Config(format!("anchor: {e}")))?;
                            self.emit_all(evbuf)?;
                            anchored
                        }
                        None => self.focus,
                    };
                    self.focus = node;
                    if self.tree.nodes[&node].status == NodeStatus::Unexplored {
                        let _ = self.tree.set_status(node, NodeStatus::Active);
                    }
                    self.emit(Event::PhasePlanned {
                        goal_id: goal.goal_id,
                        description: goal.description.clone(),
                        node: node.0,
                        budget: goal.budget,
                    })?;
                    let outcome = self.run_phase(&goal, node)?;
                    let detail = match &outcome {
                        PhaseOutcome::Failed { reason } => Some(reason.clone()),
                        PhaseOutcome::Succeeded { evidence } => {
                            evidence.as_ref().map(evidence_label)
                        }
                    };
                    self.emit(Event::PhaseReported {
                        goal_id: goal.goal_id,
                        outcome: outcome.label().to_string(),
                        detail,
                    })?;
                    receive_phase_report(
                        &mut self.mission,
                        &mut self.tree,
                        node,
                        &outcome,
                        &mut self.retries,
                        self.config.retries_per_node,
                    );
                    self.score_children_hook()?;
                }
                PlanDecision::Malformed { .. } => {
                    // PlanMalformed is already on the log; burn the phase
                    self.phases_used += 1;
                }
                PlanDecision::Exhausted { reason } => {
                    self.mission.verdict = MissionVerdict::Exhausted;
                    self.emit(Event::Note {
                        text: format!("exhausted: {reason}"),
                    })?;
                    break;
                }
                PlanDecision::BudgetExceeded => {
                    self.mission.verdict = MissionVerdict::BudgetExceeded;
                    break;
                }
            }
        }
        Ok(())
    }

    fn run_phase(&mut self, goal: &PhasedGoal, node: NodeId) -> Result<PhaseOutcome, RunError> {
        let mut used: u32 = 0;
        loop {
            if self.over_wall_cap() || self.over_cost_cap() {
                return Ok(PhaseOutcome::Failed {
                    reason: "run budget reached".to_string(),
                });
            }
            let manuals = self.manuals_for(node);
            let mut evbuf = Vec::new();
            let step = assistant::next_step(
                goal,
                &self.tree,
                node,
                used,
                &manuals,
                &mut self.gateway,
                &self.profile,
                &self.prompts,
                &self.placeholder_re,
                &mut evbuf,
            );
            self.emit_all(evbuf)?;
            let step = match step {
                Ok(s) => s,
                Err(GatewayError::Refusal(_)) => {
                    self.refusals += 1;
                    used += 1;
                    continue;
                }
                Err(e) => return Err(RunError::Gateway(e)),
            };
            match step {
                AssistantStep::PhaseFailed { reason } => {
                    self.emit(Event::PhaseVerdict {
                        goal_id: goal.goal_id,
                        verdict: "failed".to_string(),
                    })?;
                    return Ok(PhaseOutcome::Failed { reason });
                }
                AssistantStep::PhaseSucceeded { evidence_text } => {
                    self.emit(Event::PhaseVerdict {
                        goal_id: goal.goal_id,
                        verdict: "succeeded".to_string(),
                    })?;
                    return self.adjudicate_success_claim(&evidence_text);
                }
                AssistantStep::Instruction(instr) => {
                    used += 1;
                    self.execute_and_record(node, &instr)?;
                }
            }
        }
    }

    /// The instruction generator says the phase goal is met. Shell claims are
    /// probed on the named session; flags count only when the pattern appears
    /// in output the executor actually captured. A claim that names no
    /// evidence is a plain phase completion (recon phases end this way).
    fn adjudicate_success_claim(&mut self, evidence_text: &str) -> Result<PhaseOutcome, RunError> {
        let claim = claimed_evidence(&self.mission, evidence_text);
        match self.mission.goal_mode {
            GoalMode::AcquireShell => match claim {
                Some(Evidence::Shell { session, .. }) => match self.probe_shell(&session)? {
                    Some(proof) => Ok(PhaseOutcome::Succeeded {
                        evidence: Some(proof),
                    }),
                    None => Ok(PhaseOutcome::Failed {
                        reason: format!("claimed session {session} failed the shell probe"),
                    }),
                },
                _ => Ok(PhaseOutcome::Succeeded { evidence: None }),
            },
            GoalMode::CaptureFlag => match self.witnessed_flag() {
                Some(value) => Ok(PhaseOutcome::Succeeded {
                    evidence: Some(Evidence::Flag { value }),
                }),
                None if claim.is_some() => Ok(PhaseOutcome::Failed {
                    reason: "claimed flag not present in any captured output".to_string(),
                }),
                None => Ok(PhaseOutcome::Succeeded { evidence: None }),
            },
        }
    }

    /// Mission-completion claim from the planner. Same evidence rules as
    /// phase claims, but with nothing parseable there is nothing to verify.
    fn verify_claim(&mut self, claim: Option<Evidence>) -> Result<Option<Evidence>, RunError> {
        match self.mission.goal_mode {
            GoalMode::AcquireShell => match claim {
                Some(Evidence::Shell { session, .. }) => self.probe_shell(&session),
                _ => Ok(None),
            },
            GoalMode::CaptureFlag => Ok(self
                .witnessed_flag()
                .map(|value| Evidence::Flag { value })),
        }
    }

    fn probe_shell(&mut self, session: &str) -> Result<Option<Evidence>, RunError> {
        let verdict = match self.exec.verify_shell(session) {
            Ok(v) => v,
            Err(ExecError::UnknownSession(_)) | Err(ExecError::SessionClosed(_)) => {
                self.emit(Event::Note {
                    text: format!("claimed session {session} is not open"),
                })?;
                return Ok(None);
            }
            Err(e) => return Err(RunError::Exec(e)),
        };
        self.emit(Event::ShellProbe {
            session: verdict.session_ref.clone(),
            acquired: verdict.acquired,
            is_root: verdict.is_root,
        })?;
        if !verdict.acquired {
            return Ok(None);
        }
        // pin the probe transcript to the tree; templated summary, no model
        let entry = self
            .tree
            .record(
                self.focus,
                &format!("(shell probe on {})", verdict.session_ref),
                "verify the claimed shell answers commands",
                verdict.probe_transcript.clone().into_bytes(),
                None,
                0.0,
            )
            .map_err(|e| RunError::Config(format!("record: {e}")))?;
        self.emit(Event::Record {
            node: self.focus.0,
            entry: entry.0,
            instruction: format!("(shell probe on {})", verdict.session_ref),
            exit_status: None,
            truncated: false,
            timed_out: false,
        })?;
        let coarse = format!(
            "shell probe on session {}: command echo confirmed, root={}",
            verdict.session_ref, verdict.is_root
        );
        self.tree
            .set_coarse(entry, coarse, false)
            .map_err(|e| RunError::Config(format!("set_coarse: {e}")))?;
        self.emit(Event::Compressed {
            entry: entry.0,
            granularity: Granularity::Coarse.to_string(),
            degraded: false,
        })?;
        Ok(Some(Evidence::Shell {
            session: verdict.session_ref,
            is_root: verdict.is_root,
        }))
    }

    fn witnessed_flag(&self) -> Option<String> {
        self.tree
            .entries
            .values()
            .find_map(|e| self.flag_re.find(&e.fine).map(|m| m.as_str().to_string()))
    }

    fn execute_and_record(&mut self, node: NodeId, instr: &Instruction) -> Result<(), RunError> {
        self.instructions += 1;
        let result = match self.exec.execute(instr) {
            Ok(r) => r,
            Err(e @ ExecError::TargetNotAllowed { .. }) => return Err(RunError::Exec(e)),
            Err(e @ ExecError::BadTarget(_)) => return Err(RunError::Exec(e)),
            // recoverable executor trouble becomes output the agent can read
            Err(e) => ExecutionResult {
                raw_output: format!("[executor error: {e}]").into_bytes(),
                exit_status: None,
                wall_time_secs: 0.0,
                truncated: false,
                timed_out: false,
                session_ref: instr.session_ref.clone(),
            },
        };
        let ExecutionResult {
            raw_output,
            exit_status,
            wall_time_secs,
            truncated,
            timed_out,
            session_ref,
        } = result;
        self.emit(Event::Executed {
            mode: instr.mode.to_string(),
            exit_status,
            timed_out,
            truncated,
            session: session_ref,
        })?;
        let entry = self
            .tree
            .record(node, &instr.command, &instr.intent, raw_output, exit_status, wall_time_secs)
            .map_err(|e| RunError::Config(format!("record: {e}")))?;
        self.emit(Event::Record {
            node: node.0,
            entry: entry.0,
            instruction: instr.command.clone(),
            exit_status,
            truncated,
            timed_out,
        })?;

        let (fine, seq) = {
            let e = self.tree.entry(entry).expect("entry just recorded");
            (e.fine.clone(), e.seq)
        };
        let mut evbuf = Vec::new();
        let (coarse, err) = summarize_coarse(
            &mut self.gateway,
            &self.profile,
            &self.prompts,
            &instr.command,
            &instr.intent,
            &fine,
            exit_status,
            self.budgets.coarse_chars,
            &mut evbuf,
        );
        self.emit_all(evbuf)?;
        self.note_refusal(&err);
        self.tree
            .set_coarse(entry, coarse.text.clone(), coarse.degraded)
            .map_err(|e| RunError::Config(format!("set_coarse: {e}")))?;
        self.emit(Event::Compressed {
            entry: entry.0,
            granularity: Granularity::Coarse.to_string(),
            degraded: coarse.degraded,
        })?;

        let previous = self.prev_abstract_on_path(node, seq);
        let mut evbuf = Vec::new();
        let (folded, err) = summarize_abstract(
            &mut self.gateway,
            &self.profile,
            &self.prompts,
            previous.as_deref(),
            &[coarse.text],
            self.budgets.abstract_chars,
            &mut evbuf,
        );
        self.emit_all(evbuf)?;
        self.note_refusal(&err);
        self.tree
            .set_abstract_fragment(entry, folded.text, folded.degraded)
            .map_err(|e| RunError::Config(format!("set_abstract_fragment: {e}")))?;
        self.emit(Event::Compressed {
            entry: entry.0,
            granularity: Granularity::Abstract.to_string(),
            degraded: folded.degraded,
        })?;
        Ok(())
    }

    /// Most recent abstract fragment on the root-to-node path before `seq`;
    /// the incremental fold extends it with the newest coarse summary.
    fn prev_abstract_on_path(&self, node: NodeId, seq: u64) -> Option<String> {
        let path = self.tree.path_to(node).ok()?;
        let mut best: Option<(u64, &str)> = None;
        for n in &path {
            for id in &self.tree.nodes[n].entries {
                let entry = &self.tree.entries[id];
                if entry.seq >= seq {
                    continue;
                }
                if let Some(fragment) = &entry.abstract_fragment {
                    if best.is_none_or(|(s, _)| entry.seq > s) {
                        best = Some((entry.seq, fragment));
                    }
                }
            }
        }
        best.map(|(_, text)| text.to_string())
    }

    fn manuals_for(&self, node: NodeId) -> Vec<String> {
        let Some(registry) = &self.registry else {
            return Vec::new();
        };
        let locus = &self.tree.nodes[&node].branch.locus;
        let cve = locus.exploit.as_deref().filter(|id| looks_like_cve(id));
        let service = locus
            .service
            .as_deref()
            .map(|name| (name, locus.version.as_deref()));
        assistant::consult_arsenal(registry, cve, service, MANUAL_CAP)
    }

    /// Once the root has at least two service branches and any of them is
    /// still unscored, ask for vulnerability likelihoods and reorder the
    /// children. Advisory: scoring trouble never stops the mission.
    fn score_children_hook(&mut self) -> Result<(), RunError> {
        let root = self.tree.root;
        let children = self.tree.nodes[&root].children.clone();
        if children.len() < 2 {
            return Ok(());
        }
        let unscored = children.iter().any(|c| {
            let n = &self.tree.nodes[c];
            n.priority_score.is_none() && !n.status.is_terminal()
        });
        if !unscored {
            return Ok(());
        }
        let mut pairs: Vec<(Locus, ServiceObservation)> = Vec::new();
        for c in &children {
            let locus = self.tree.nodes[c].branch.locus.clone();
            if let Some(name) = locus.service.clone() {
                let observation = ServiceObservation {
                    name,
                    port: locus.port.unwrap_or(0),
                    version: locus.version.clone(),
                };
                pairs.push((locus, observation));
            }
        }
        if pairs.len() < 2 {
            return Ok(());
        }
        let observations: Vec<ServiceObservation> =
            pairs.iter().map(|(_, o)| o.clone()).collect();
        let mut evbuf = Vec::new();
        let scored = assistant::score_services(
            &observations,
            &mut self.gateway,
            &self.profile,
            &self.prompts,
            &mut evbuf,
        );
        self.emit_all(evbuf)?;
        let scored = match scored {
            Ok(s) => s,
            Err(GatewayError::Refusal(_)) => {
                self.refusals += 1;
                return Ok(());
            }
            Err(_) => return Ok(()),
        };
        let mut order: Vec<(usize, f64)> = scored
            .iter()
            .enumerate()
            .map(|(i, (_, likelihood, _))| (i, *likelihood))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut scores: BTreeMap<Locus, (f64, u32)> = BTreeMap::new();
        for (rank, (idx, likelihood)) in order.iter().enumerate() {
            scores.insert(pairs[*idx].0.clone(), (*likelihood, rank as u32));
        }
        let new_order = self
            .tree
            .prioritize_children(root, &scores)
            .map_err(|e| RunError::Config(format!("prioritize: {e}")))?;
        self.emit(Event::Prioritized {
            node: root.0,
            order: new_order.iter().map(|n| n.0).collect(),
        })?;
        Ok(())
    }

    fn build_summary(&self, run_id: &str) -> RunSummary {
        let ledger = self.gateway.ledger.report();
        RunSummary {
            schema: SUMMARY_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            target: self.config.target.clone(),
            goal_mode: self.mission.goal_mode.to_string(),
            outcome: self.mission.verdict.to_string(),
            evidence: self.mission.evidence.as_ref().map(evidence_label),
            phases_planned: self.mission.phases_planned,
            instructions_executed: self.instructions,
            gateway_calls: ledger.total_calls,
            refusals: self.refusals,
            tokens_in: ledger.total_tokens_in,
            tokens_out: ledger.total_tokens_out,
            cost: ledger
                .cost_by_currency
                .iter()
                .map(|(k, v)| (k.clone(), v.render()))
                .collect(),
            tree: tree_stats(&self.tree),
            events: self.event_counts.clone(),
        }
    }

    fn human_report(&self, summary: &RunSummary, wall_secs: f64) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "run {}", summary.run_id);
        let _ = writeln!(out, "target {} ({})", summary.target, summary.goal_mode);
        match &summary.evidence {
            Some(ev) => {
                let _ = writeln!(out, "outcome: {} ({ev})", summary.outcome);
            }
            None => {
                let _ = writeln!(out, "outcome: {}", summary.outcome);
            }
        }
        let _ = writeln!(
            out,
            "phases planned: {}, instructions executed: {}",
            summary.phases_planned, summary.instructions_executed
        );
        let _ = writeln!(
            out,
            "model calls: {} ({} refused), tokens {} in / {} out",
            summary.gateway_calls, summary.refusals, summary.tokens_in, summary.tokens_out
        );
        for (currency, amount) in &summary.cost {
            let _ = writeln!(out, "cost: {amount} {currency}");
        }
        let _ = writeln!(
            out,
            "tree: {} nodes, {} entries, max depth {}, {} paths",
            summary.tree.nodes, summary.tree.entries, summary.tree.max_depth, summary.tree.paths
        );
        let _ = writeln!(out, "wall time: {wall_secs:.1}s");
        out
    }
}
