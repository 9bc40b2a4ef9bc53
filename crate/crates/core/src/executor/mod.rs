//! Runs agent instructions on the attack box.
//!
//! Three modes: one-shot commands with a hard wall-clock kill, long-lived
//! background jobs, and line input to a running job's stdin. All process
//! output (stdout and stderr merged, arrival order) is captured through a
//! bounded head+tail buffer. The executor refuses to start unless the
//! configured target lies inside the network allowlist.

pub mod capture;
pub mod cidr;

pub use capture::{CappedBuffer, DEFAULT_RAW_CAP};
pub use cidr::{load_allowlist, target_allowed, Cidr};

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arsenal::{BuildStatus, ExploitRecord, ExploitType};

pub const DEFAULT_TIMEOUT_SECS: f64 = 180.0;
pub const DEFAULT_SETTLE_SECS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Oneshot,
    Background,
    SessionInput,
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExecMode::Oneshot => "oneshot",
            ExecMode::Background => "background",
            ExecMode::SessionInput => "session_input",
        };
        f.write_str(s)
    }
}

/// One action the agent asked for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instruction {
    pub command: String,
    pub mode: ExecMode,
    /// Required for `SessionInput`; ignored otherwise.
    #[serde(default)]
    pub session_ref: Option<String>,
    pub timeout_secs: f64,
    /// What the agent wants this command to achieve, in its own words.
    pub intent: String,
}

impl Instruction {
    pub fn oneshot(command: impl Into<String>, intent: impl Into<String>) -> Instruction {
        Instruction {
            command: command.into(),
            mode: ExecMode::Oneshot,
            session_ref: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            intent: intent.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub raw_output: Vec<u8>,
    /// Process exit code when it exited on its own; `None` for running
    /// background jobs and killed-on-timeout commands.
    pub exit_status: Option<i32>,
    pub wall_time_secs: f64,
    pub truncated: bool,
    pub timed_out: bool,
    pub session_ref: Option<String>,
}

/// Result of probing a session for an interactive shell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShellVerdict {
    pub acquired: bool,
    pub is_root: bool,
    pub probe_transcript: String,
    pub session_ref: String,
}

/// Where commands run. `Remote` wraps every command in an ssh invocation;
/// the key path comes from the named environment variable so key material
/// never sits in config files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    #[default]
    Local,
    Remote {
        host: String,
        user: String,
        #[serde(default = "default_ssh_port")]
        port: u16,
        key_env: String,
    },
}

fn default_ssh_port() -> u16 {
    22
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("target {target} is not covered by the allowlist")]
    TargetNotAllowed { target: String },
    #[error("bad target or allowlist: {0}")]
    BadTarget(String),
    #[error("no such session: {0}")]
    UnknownSession(String),
    #[error("session {0} no longer accepts input")]
    SessionClosed(String),
    #[error("failed to start process: {0}")]
    Spawn(String),
    #[error("exploit parameter {0} has no value and no default")]
    ParameterMissing(String),
    #[error("exploit image not available: {0}")]
    ImageMissing(String),
    #[error("exploit record has no runnable command")]
    NoCommand,
    #[error("environment variable {0} (ssh key path) is not set")]
    KeyEnvMissing(String),
}

#[derive(Debug)]
struct Job {
    child: Child,
    stdin: Option<ChildStdin>,
    pending: Arc<Mutex<CappedBuffer>>,
    readers: Vec<JoinHandle<()>>,
    command: String,
}

#[derive(Debug)]
pub struct Executor {
    channel: ChannelSpec,
    target: String,
    pub settle_secs: f64,
    pub raw_cap: usize,
    pub container_cli: String,
    jobs: HashMap<String, Job>,
    next_job: u64,
    rng: ChaCha8Rng,
}

impl Executor {
    /// Fails unless `target` (address or subnet) is fully inside the
    /// allowlist. This check is the only gate between the agent and the
    /// network, so it runs at construction, not per command.
    pub fn new(
        target: &str,
        allowlist: &[Cidr],
        channel: ChannelSpec,
        seed: u64,
    ) -> Result<Executor, ExecError> {
        match target_allowed(target, allowlist) {
            Ok(true) => {}
            Ok(false) => {
                return Err(ExecError::TargetNotAllowed {
                    target: target.to_string(),
                })
            }
            Err(e) => return Err(ExecError::BadTarget(e)),
        }
        Ok(Executor {
            channel,
            target: target.to_string(),
            settle_secs: DEFAULT_SETTLE_SECS,
            raw_cap: DEFAULT_RAW_CAP,
            container_cli: "docker".to_string(),
            jobs: HashMap::new(),
            next_job: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn execute(&mut self, instr: &Instruction) -> Result<ExecutionResult, ExecError> {
        match instr.mode {
            ExecMode::Oneshot => self.oneshot(&instr.command, instr.timeout_secs),
            ExecMode::Background => self.background(&instr.command),
            ExecMode::SessionInput => {
                let session = instr
                    .session_ref
                    .as_deref()
                    .ok_or_else(|| ExecError::UnknownSession("<none>".to_string()))?;
                self.session_input(session, &instr.command, instr.timeout_secs)
            }
        }
    }

    fn build_command(&self, command: &str) -> Result<Command, ExecError> {
        match &self.channel {
            ChannelSpec::Local => {
                let mut c = Command::new("bash");
                c.arg("-c").arg(command);
                Ok(c)
            }
            ChannelSpec::Remote {
                host,
                user,
                port,
                key_env,
            } => {
                let key = std::env::var(key_env)
                    .map_err(|_| ExecError::KeyEnvMissing(key_env.clone()))?;
                let mut c = Command::new("ssh");
                c.arg("-o")
                    .arg("BatchMode=yes")
                    .arg("-o")
                    .arg("StrictHostKeyChecking=accept-new")
                    .arg("-i")
                    .arg(key)
                    .arg("-p")
                    .arg(port.to_string())
                    .arg(format!("{user}@{host}"))
                    .arg(command);
                Ok(c)
            }
        }
    }

    /// Child plus its capture plumbing: stdin handle (when piped), the shared
    /// merged-output buffer, and the drain threads to join before reading it.
    fn spawn_with_readers(&self, command: &str, want_stdin: bool) -> Result<Spawned, ExecError> {
        let mut cmd = self.build_command(command)?;
        cmd.stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .stdin(if want_stdin { Stdio::piped() } else { Stdio::null() })
            .process_group(0);
        let mut child = cmd.spawn().map_err(|e| ExecError::Spawn(e.to_string()))?;
        let stdin = if want_stdin { child.stdin.take() } else { None };
        let buf = Arc::new(Mutex::new(CappedBuffer::new(self.raw_cap)));
        let mut readers = Vec::new();
        for pipe in [
            child.stdout.take().map(|p| Box::new(p) as Box<dyn Read + Send>),
            child.stderr.take().map(|p| Box::new(p) as Box<dyn Read + Send>),
        ]
        .into_iter()
        .flatten()
        {
            let buf = Arc::clone(&buf);
            readers.push(std::thread::spawn(move || {
                let mut pipe = pipe;
                let mut chunk = [0u8; 8192];
                loop {
                    match pipe.read(&mut chunk) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => buf.lock().unwrap().push(&chunk[..n]),
                    }
                }
            }));
        }
        Ok((child, stdin, buf, readers))
    }

    fn oneshot(&mut self, command: &str, timeout_secs: f64) -> Result<ExecutionResult, ExecError> {
        let start = Instant::now();
        let (mut child, _, buf, readers) = self.spawn_with_readers(command, false)?;
        let deadline = start + Duration::from_secs_f64(timeout_secs.max(0.0));
        let mut timed_out = false;
        let exit_status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status.code(),
                Ok(None) => {
                    if Instant::now() >= deadline {
                        timed_out = true;
                        kill_group(&child);
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(ExecError::Spawn(e.to_string())),
            }
        };
        for r in readers {
            let _ = r.join();
        }
        let buf = Arc::try_unwrap(buf)
            .expect("readers joined")
            .into_inner()
            .unwrap();
        let truncated = buf.truncated();
        Ok(ExecutionResult {
            raw_output: buf.into_bytes(),
            exit_status,
            wall_time_secs: start.elapsed().as_secs_f64(),
            truncated,
            timed_out,
            session_ref: None,
        })
    }

    fn background(&mut self, command: &str) -> Result<ExecutionResult, ExecError> {
        let start = Instant::now();
        let (child, stdin, pending, readers) = self.spawn_with_readers(command, true)?;
        self.next_job += 1;
        let id = format!("job-{}", self.next_job);
        self.jobs.insert(
            id.clone(),
            Job {
                child,
                stdin,
                pending,
                readers,
                command: command.to_string(),
            },
        );
        Ok(ExecutionResult {
            raw_output: format!("[background job {id} started: {command}]").into_bytes(),
            exit_status: None,
            wall_time_secs: start.elapsed().as_secs_f64(),
            truncated: false,
            timed_out: false,
            session_ref: Some(id),
        })
    }

    /// Writes one line to the job's stdin, waits out the settle window, then
    /// drains whatever the job printed in the meantime.
    fn session_input(
        &mut self,
        session: &str,
        line: &str,
        timeout_secs: f64,
    ) -> Result<ExecutionResult, ExecError> {
        let settle = self.settle_secs.min(timeout_secs.max(0.0));
        let job = self
            .jobs
            .get_mut(session)
            .ok_or_else(|| ExecError::UnknownSession(session.to_string()))?;
        let start = Instant::now();
        let mut input_failed = false;
        match job.stdin.as_mut() {
            Some(stdin) => {
                let payload = format!("{line}\n");
                if stdin.write_all(payload.as_bytes()).is_err() || stdin.flush().is_err() {
                    input_failed = true;
                    job.stdin = None;
                }
            }
            None => input_failed = true,
        }
        std::thread::sleep(Duration::from_secs_f64(settle));
        let drained = {
            let mut guard = job.pending.lock().unwrap();
            std::mem::replace(&mut *guard, CappedBuffer::new(self.raw_cap))
        };
        let truncated = drained.truncated();
        let mut raw_output = drained.into_bytes();
        if input_failed {
            raw_output
                .extend_from_slice(format!("\n[session {session}: stdin closed]").as_bytes());
        }
        let exit_status = match job.child.try_wait() {
            Ok(Some(status)) => status.code(),
            _ => None,
        };
        Ok(ExecutionResult {
            raw_output,
            exit_status,
            wall_time_secs: start.elapsed().as_secs_f64(),
            truncated,
            timed_out: false,
            session_ref: Some(session.to_string()),
        })
    }

    /// Sends a marker probe through the session and inspects the echo. A
    /// shell is acquired when the marker comes back together with `id`
    /// output; root when the uid is 0. The random marker defeats matching
    /// against the probe command itself being echoed.
    pub fn verify_shell(&mut self, session: &str) -> Result<ShellVerdict, ExecError> {
        let nonce: String = (0..8)
            .map(|_| {
                let v: u8 = self.rng.gen_range(0..16);
                char::from_digit(v as u32, 16).unwrap()
            })
            .collect();
        let marker = format!("SHELLPROBE-{nonce}");
        let probe = format!("echo {marker}; id");
        let result = self.session_input(session, &probe, self.settle_secs)?;
        let transcript = crate::compress::normalize(&result.raw_output);
        let acquired = transcript.contains(&marker) && transcript.contains("uid=");
        let is_root = acquired && transcript.contains("uid=0(");
        Ok(ShellVerdict {
            acquired,
            is_root,
            probe_transcript: transcript,
            session_ref: session.to_string(),
        })
    }

    pub fn session_alive(&mut self, session: &str) -> bool {
        match self.jobs.get_mut(session) {
            Some(job) => matches!(job.child.try_wait(), Ok(None)),
            None => false,
        }
    }

    pub fn sessions(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.jobs.keys().map(|s| s.as_str()).collect();
        v.sort();
        v
    }

    /// Runs a packaged exploit from the arsenal. Parameters are filled from
    /// `args`, falling back to declared defaults; script exploits run inside
    /// their built container image.
    pub fn run_arsenal_exploit(
        &mut self,
        record: &ExploitRecord,
        args: &BTreeMap<String, String>,
        timeout_secs: f64,
    ) -> Result<ExecutionResult, ExecError> {
        let ued = record.ued.as_ref();
        let mut template = String::new();
        if let Some(u) = ued {
            if let Some(dc) = &u.docker_config {
                if !dc.default_command.trim().is_empty() {
                    template = dc.default_command.clone();
                }
            }
            if template.is_empty() {
                template = u.usage_example.clone();
            }
        }
        if template.trim().is_empty() {
            return Err(ExecError::NoCommand);
        }
        if let Some(u) = ued {
            for p in &u.parameters {
                let value = match args.get(&p.name) {
                    Some(v) => v.clone(),
                    None => match &p.default {
                        Some(d) => d.clone(),
                        None => return Err(ExecError::ParameterMissing(p.name.clone())),
                    },
                };
                let placeholder = if p.placeholder.is_empty() {
                    format!("<{}>", p.name)
                } else {
                    p.placeholder.clone()
                };
                template = template.replace(&placeholder, &value);
            }
        }
        let command = if record.exploit_type == ExploitType::Script {
            if record.build_status != BuildStatus::Built {
                return Err(ExecError::ImageMissing(record.record_id.clone()));
            }
            if template.starts_with(&self.container_cli) {
                template
            } else {
                format!(
                    "{} run --rm arsenal/{} {}",
                    self.container_cli, record.record_id, template
                )
            }
        } else {
            template
        };
        let result = self.oneshot(&command, timeout_secs)?;
        if record.exploit_type == ExploitType::Script {
            let text = String::from_utf8_lossy(&result.raw_output);
            if result.exit_status == Some(125) || text.contains("Unable to find image") {
                return Err(ExecError::ImageMissing(record.record_id.clone()));
            }
        }
        Ok(result)
    }

    /// Kills every background job's process group. Called on drop too.
    pub fn shutdown(&mut self) {
        for (_, mut job) in self.jobs.drain() {
            kill_group(&job.child);
            let _ = job.child.wait();
            for r in job.readers.drain(..) {
                let _ = r.join();
            }
            let _ = job.command;
        }
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn kill_group(child: &Child) {
    // Child was spawned with process_group(0), so its pgid equals its pid.
    unsafe {
        libc::killpg(child.id() as i32, libc::SIGKILL);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local() -> Executor {
        let allow = vec!["127.0.0.0/8".parse().unwrap()];
        let mut ex = Executor::new("127.0.0.1", &allow, ChannelSpec::Local, 7).unwrap();
        ex.settle_secs = 0.2;
        ex
    }

    #[test]
    fn allowlist_interlock_blocks_out_of_scope_targets() {
        let allow = vec!["10.10.0.0/16".parse().unwrap()];
        let err = Executor::new("192.168.1.5", &allow, ChannelSpec::Local, 0).unwrap_err();
        assert!(matches!(err, ExecError::TargetNotAllowed { .. }));
        assert!(Executor::new("10.10.3.4", &allow, ChannelSpec::Local, 0).is_ok());
    }

    #[test]
    fn oneshot_captures_merged_output_and_exit() {
        let mut ex = local();
        let r = ex
            .execute(&Instruction::oneshot("echo out; echo err >&2; exit 3", "t"))
            .unwrap();
        let text = String::from_utf8(r.raw_output).unwrap();
        assert!(text.contains("out"));
        assert!(text.contains("err"));
        assert_eq!(r.exit_status, Some(3));
        assert!(!r.timed_out);
        assert!(!r.truncated);
    }

    #[test]
    fn oneshot_timeout_kills_whole_process_group() {
        let mut ex = local();
        let mut instr = Instruction::oneshot("sleep 30 & sleep 30; echo never", "t");
        instr.timeout_secs = 0.3;
        let start = Instant::now();
        let r = ex.execute(&instr).unwrap();
        assert!(r.timed_out);
        assert_eq!(r.exit_status, None);
        assert!(start.elapsed() < Duration::from_secs(5), "kill was prompt");
        // the grandchild sleep must be gone too: pgid of a dead group is free,
        // easiest observable assertion is that we returned quickly above
        assert!(!String::from_utf8_lossy(&r.raw_output).contains("never"));
    }

    #[test]
    fn huge_output_is_truncated_with_marker() {
        let mut ex = local();
        ex.raw_cap = 4096;
        let r = ex
            .execute(&Instruction::oneshot("yes abcdefgh | head -c 100000", "t"))
            .unwrap();
        assert!(r.truncated);
        let text = String::from_utf8_lossy(&r.raw_output);
        assert!(text.contains("bytes omitted"));
        assert!(r.raw_output.len() < 5000);
    }

    #[test]
    fn background_session_roundtrip_and_probe() {
        let mut ex = local();
        let started = ex
            .execute(&Instruction {
                command: "bash -i 2>&1 || bash 2>&1".into(),
                mode: ExecMode::Background,
                session_ref: None,
                timeout_secs: 30.0,
                intent: "t".into(),
            })
            .unwrap();
        let session = started.session_ref.clone().unwrap();
        assert_eq!(session, "job-1");
        assert!(String::from_utf8_lossy(&started.raw_output).contains("background job job-1"));

        let r = ex
            .execute(&Instruction {
                command: "echo ping-$((20+3))".into(),
                mode: ExecMode::SessionInput,
                session_ref: Some(session.clone()),
                timeout_secs: 5.0,
                intent: "t".into(),
            })
            .unwrap();
        assert!(String::from_utf8_lossy(&r.raw_output).contains("ping-23"));

        let verdict = ex.verify_shell(&session).unwrap();
        assert!(verdict.acquired, "transcript: {}", verdict.probe_transcript);
        // sandbox runs as root, so the probe sees uid=0
        assert!(verdict.probe_transcript.contains("uid="));
        ex.shutdown();
    }

    #[test]
    fn probe_on_non_shell_session_is_rejected() {
        let mut ex = local();
        // cat echoes the probe line itself but never runs `id`
        let started = ex
            .execute(&Instruction {
                command: "grep --line-buffered -v uid=".into(),
                mode: ExecMode::Background,
                session_ref: None,
                timeout_secs: 30.0,
                intent: "t".into(),
            })
            .unwrap();
        let session = started.session_ref.unwrap();
        let verdict = ex.verify_shell(&session).unwrap();
        assert!(!verdict.acquired);
        assert!(!verdict.is_root);
        ex.shutdown();
    }

    #[test]
    fn unknown_session_is_an_error() {
        let mut ex = local();
        let err = ex.session_input("job-99", "hi", 1.0).unwrap_err();
        assert!(matches!(err, ExecError::UnknownSession(_)));
    }

    #[test]
    fn probe_nonce_is_deterministic_per_seed() {
        let allow = vec!["127.0.0.0/8".parse().unwrap()];
        let mk = |seed| {
            let mut ex = Executor::new("127.0.0.1", &allow, ChannelSpec::Local, seed).unwrap();
            ex.settle_secs = 0.1;
            let started = ex.execute(&Instruction {
                command: "cat".into(),
                mode: ExecMode::Background,
                session_ref: None,
                timeout_secs: 5.0,
                intent: "t".into(),
            });
            let session = started.unwrap().session_ref.unwrap();
            let v = ex.verify_shell(&session).unwrap();
            ex.shutdown();
            v.probe_transcript
        };
        assert_eq!(mk(42), mk(42));
        assert_ne!(mk(42), mk(43));
    }
}
