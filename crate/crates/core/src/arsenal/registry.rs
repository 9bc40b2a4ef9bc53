//! On-disk exploit registry.
//!
//! Layout under the registry root:
//!   index.json                   summaries, kept sorted by record id
//!   records/<id>/record.json     full record
//!   records/<id>/manual.md
//!   records/<id>/Dockerfile      script exploits only
//!   records/<id>/context/        build context copied from the source repo
//!
//! Every mutation rewrites index.json, so a registry is always openable from
//! the index alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BuildStatus, ExploitRecord, ExploitType, ServiceKey, Source};

pub const REGISTRY_SCHEMA: u32 = 1;
pub const DEFAULT_BUILD_TIMEOUT_SECS: f64 = 300.0;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("io: {0}")]
    Io(String),
    #[error("registry is corrupt: {0}")]
    Corrupt(String),
    #[error("no such record: {0}")]
    UnknownRecord(String),
    #[error("container runtime {0:?} is not available")]
    RuntimeUnavailable(String),
}

impl From<std::io::Error> for RegistryError {
    fn from(e: std::io::Error) -> Self {
        RegistryError::Io(e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    schema: u32,
    record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExploitQuery {
    #[serde(default)]
    pub cve: Option<String>,
    #[serde(default)]
    pub service: Option<String>,
    #[serde(default)]
    pub version: Option<String>,
}

impl ExploitQuery {
    pub fn by_cve(cve: &str) -> ExploitQuery {
        ExploitQuery {
            cve: Some(cve.to_string()),
            ..Default::default()
        }
    }

    pub fn by_service(name: &str, version: Option<&str>) -> ExploitQuery {
        ExploitQuery {
            service: Some(name.to_string()),
            version: version.map(str::to_string),
            ..Default::default()
        }
    }
}

#[derive(Debug, Default)]
pub struct ImportOutcome {
    pub imported: Vec<String>,
    pub warnings: Vec<String>,
}

pub struct ArsenalRegistry {
    root: PathBuf,
    records: BTreeMap<String, ExploitRecord>,
}

impl ArsenalRegistry {
    pub fn create(root: &Path) -> Result<ArsenalRegistry, RegistryError> {
        std::fs::create_dir_all(root.join("records"))?;
        let reg = ArsenalRegistry {
            root: root.to_path_buf(),
            records: BTreeMap::new(),
        };
        reg.write_index()?;
        Ok(reg)
    }

    pub fn open(root: &Path) -> Result<ArsenalRegistry, RegistryError> {
        let index_path = root.join("index.json");
        let text = std::fs::read_to_string(&index_path)
            .map_err(|e| RegistryError::Io(format!("{}: {e}", index_path.display())))?;
        let index: Index =
            serde_json::from_str(&text).map_err(|e| RegistryError::Corrupt(e.to_string()))?;
        if index.schema != REGISTRY_SCHEMA {
            return Err(RegistryError::Corrupt(format!(
                "unsupported schema {}",
                index.schema
            )));
        }
        let mut records = BTreeMap::new();
        for id in index.record_ids {
            let path = root.join("records").join(&id).join("record.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", path.display())))?;
            let record: ExploitRecord =
                serde_json::from_str(&text).map_err(|e| RegistryError::Corrupt(e.to_string()))?;
            if record.record_id != id {
                return Err(RegistryError::Corrupt(format!(
                    "record {} claims id {}",
                    id, record.record_id
                )));
            }
            records.insert(id, record);
        }
        Ok(ArsenalRegistry {
            root: root.to_path_buf(),
            records,
        })
    }

    /// Opens an existing registry, or creates an empty one when the root has
    /// no index yet.
    pub fn open_or_create(root: &Path) -> Result<ArsenalRegistry, RegistryError> {
        if root.join("index.json").is_file() {
            ArsenalRegistry::open(root)
        } else {
            ArsenalRegistry::create(root)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ExploitRecord> {
        self.records.get(record_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ExploitRecord> {
        self.records.values()
    }

    fn record_dir(&self, id: &str) -> PathBuf {
        self.root.join("records").join(id)
    }

    pub fn dockerfile_path(&self, id: &str) -> PathBuf {
        self.record_dir(id).join("Dockerfile")
    }

    pub fn context_dir(&self, id: &str) -> PathBuf {
        self.record_dir(id).join("context")
    }

    fn write_index(&self) -> Result<(), RegistryError> {
        let index = Index {
            schema: REGISTRY_SCHEMA,
            record_ids: self.records.keys().cloned().collect(),
        };
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(self.root.join("index.json"), text)?;
        Ok(())
    }

    fn persist_record(&self, record: &ExploitRecord) -> Result<(), RegistryError> {
        let dir = self.record_dir(&record.record_id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("record.json"),
            serde_json::to_string_pretty(record).expect("record serializes"),
        )?;
        std::fs::write(dir.join("manual.md"), &record.manual)?;
        if let Some(df) = &record.dockerfile {
            std::fs::write(dir.join("Dockerfile"), df)?;
        }
        Ok(())
    }

    /// Adds or replaces a record. `context_src` is the source repo tree to
    /// copy as the build context (script exploits).
    pub fn add_record(
        &mut self,
        record: ExploitRecord,
        context_src: Option<&Path>,
    ) -> Result<(), RegistryError> {
        self.persist_record(&record)?;
        if let Some(src) = context_src {
            let dst = self.context_dir(&record.record_id);
            copy_tree(src, &dst)?;
        }
        self.records.insert(record.record_id.clone(), record);
        self.write_index()
    }

    pub fn set_build_status(
        &mut self,
        record_id: &str,
        status: BuildStatus,
    ) -> Result<(), RegistryError> {
        let record = self
            .records
            .get_mut(record_id)
            .ok_or_else(|| RegistryError::UnknownRecord(record_id.to_string()))?;
        record.build_status = status;
        let snapshot = record.clone();
        self.persist_record(&snapshot)
    }

    /// Matches by CVE id when given, otherwise by service name plus version
    /// containment. Results are ordered by rank, ties by record id.
    pub fn query(&self, q: &ExploitQuery) -> Vec<&ExploitRecord> {
        let mut hits: Vec<&ExploitRecord> = self
            .records
            .values()
            .filter(|r| {
                if let Some(cve) = &q.cve {
                    return r.cve_id.eq_ignore_ascii_case(cve);
                }
                if let Some(service) = &q.service {
                    if r.affected_service.name != service.to_ascii_lowercase() {
                        return false;
                    }
                    if let Some(version) = &q.version {
                        return r.affected_service.version_range.matches_str(version)
                            || *version == "*";
                    }
                    return true;
                }
                true
            })
            .collect();
        hits.sort_by(|a, b| a.rank.cmp(&b.rank).then(a.record_id.cmp(&b.record_id)));
        hits
    }

    /// Imports module references from an installed tool's catalog (TOML).
    /// Malformed rows are skipped with a warning; a (cve, module) pair seen
    /// twice keeps the first row.
    pub fn import_external_tool(&mut self, catalog: &Path) -> Result<ImportOutcome, RegistryError> {
        #[derive(Deserialize)]
        struct Catalog {
            tool: String,
            #[serde(default)]
            exploit: Vec<toml::Value>,
        }
        #[derive(Deserialize)]
        struct Row {
            module_path: String,
            cve_id: String,
            #[serde(default = "default_ext_rank")]
            rank: u32,
            service: String,
            #[serde(default)]
            version_range: Option<String>,
            #[serde(default)]
            manual: Option<String>,
        }
        fn default_ext_rank() -> u32 {
            10
        }

        let text = std::fs::read_to_string(catalog)
            .map_err(|e| RegistryError::Io(format!("{}: {e}", catalog.display())))?;
        let parsed: Catalog =
            toml::from_str(&text).map_err(|e| RegistryError::Corrupt(e.to_string()))?;
        let mut outcome = ImportOutcome::default();
        let mut seen: Vec<(String, String)> = Vec::new();
        for (i, raw) in parsed.exploit.into_iter().enumerate() {
            let row: Row = match raw.try_into() {
                Ok(r) => r,
                Err(e) => {
                    outcome
                        .warnings
                        .push(format!("exploit row {}: skipped ({e})", i + 1));
                    continue;
                }
            };
            let key = (row.cve_id.to_ascii_lowercase(), row.module_path.clone());
            if seen.contains(&key) {
                outcome.warnings.push(format!(
                    "exploit row {}: duplicate of {} via {}, first row wins",
                    i + 1,
                    row.cve_id,
                    row.module_path
                ));
                continue;
            }
            seen.push(key);
            let module_tail = row
                .module_path
                .rsplit('/')
                .next()
                .unwrap_or(&row.module_path);
            let record_id = sanitize_id(&format!(
                "{}-{}-{}",
                row.cve_id, parsed.tool, module_tail
            ));
            let manual = row.manual.unwrap_or_else(|| {
                format!(
                    "Launch the {} module `{}` against {} (affected versions: {}).\n",
                    parsed.tool,
                    row.module_path,
                    row.service,
                    row.version_range.as_deref().unwrap_or("*")
                )
            });
            let record = ExploitRecord {
                record_id: record_id.clone(),
                cve_id: row.cve_id,
                source: Source::ExternalTool {
                    tool: parsed.tool.clone(),
                    module_path: row.module_path,
                },
                exploit_type: ExploitType::Commandline,
                ued: None,
                dockerfile: None,
                manual,
                build_status: BuildStatus::NotApplicable,
                rank: row.rank,
                affected_service: ServiceKey::new(
                    &row.service,
                    row.version_range.as_deref().unwrap_or("*"),
                ),
            };
            self.add_record(record, None)?;
            outcome.imported.push(record_id);
        }
        Ok(outcome)
    }

    /// Builds the record's container image and stores the outcome on the
    /// record. A missing runtime binary is an environment error, not a
    /// build failure.
    pub fn validate_build(
        &mut self,
        record_id: &str,
        container_cli: &str,
        timeout_secs: f64,
    ) -> Result<BuildStatus, RegistryError> {
        let record = self
            .records
            .get(record_id)
            .ok_or_else(|| RegistryError::UnknownRecord(record_id.to_string()))?;
        if record.exploit_type != ExploitType::Script {
            return Ok(BuildStatus::NotApplicable);
        }
        let dockerfile = self.dockerfile_path(record_id);
        let context = self.context_dir(record_id);
        let tag = format!("arsenal/{record_id}");
        let output = run_with_timeout(
            Command::new(container_cli)
                .arg("build")
                .arg("-t")
                .arg(&tag)
                .arg("-f")
                .arg(&dockerfile)
                .arg(&context),
            timeout_secs,
        );
        let status = match output {
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RegistryError::RuntimeUnavailable(container_cli.to_string()))
            }
            Err(e) => BuildStatus::Failed {
                reason: e.to_string(),
            },
            Ok((Some(0), _)) => BuildStatus::Built,
            Ok((code, text)) => {
                let tail: String = {
                    let lines: Vec<&str> = text.lines().collect();
                    let start = lines.len().saturating_sub(5);
                    lines[start..].join("\n")
                };
                BuildStatus::Failed {
                    reason: format!("exit {:?}: {}", code, tail),
                }
            }
        };
        self.set_build_status(record_id, status.clone())?;
        Ok(status)
    }
}

fn sanitize_id(raw: &str) -> String {
    raw.to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn copy_tree(src: &Path, dst: &Path) -> Result<(), RegistryError> {
    for entry in walkdir::WalkDir::new(src)
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
    {
        let entry = entry.map_err(|e| RegistryError::Io(e.to_string()))?;
        let rel = entry.path().strip_prefix(src).unwrap();
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Runs a command, merging stdout and stderr, killing it at the deadline.
fn run_with_timeout(
    cmd: &mut Command,
    timeout_secs: f64,
) -> std::io::Result<(Option<i32>, String)> {
    use std::io::Read;
    cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn()?;
    let mut stdout = child.stdout.take().unwrap();
    let mut stderr = child.stderr.take().unwrap();
    let out_handle = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });
    let err_handle = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });
    let deadline = Instant::now() + Duration::from_secs_f64(timeout_secs.max(0.0));
    let code = loop {
        match child.try_wait()? {
            Some(status) => break status.code(),
            None => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    };
    let mut text = out_handle.join().unwrap_or_default();
    text.push_str(&err_handle.join().unwrap_or_default());
    Ok((code, text))
}
