//! Container CLI stand-in. Speaks enough of the docker surface for the
//! arsenal pipeline: `build` validates a Dockerfile against a fixed base
//! image catalog and materializes COPY'd files into a local image store,
//! `run` executes the stored entrypoint from that store, `images` lists what
//! was built. No daemon, no network, no isolation; the point is validating
//! build recipes and exercising the run path hermetically.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const KNOWN_IMAGES: &[&str] = &[
    "alpine:3.18",
    "alpine:3.19",
    "debian:bullseye-slim",
    "debian:bookworm-slim",
    "ubuntu:20.04",
    "ubuntu:22.04",
    "python:2.7-slim",
    "python:3.9-slim",
    "python:3.11-slim",
    "node:20-slim",
    "ruby:3.2-slim",
];

#[derive(Parser)]
#[command(name = "dockstub", about = "Hermetic docker stand-in for tests")]
struct Cli {
    /// Image store directory; defaults to $DOCKSTUB_STATE, then a
    /// dockstub-state directory next to this executable.
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a Dockerfile and store the resulting image.
    Build {
        #[arg(short = 't', long = "tag")]
        tag: String,
        /// Dockerfile path; defaults to CONTEXT/Dockerfile.
        #[arg(short = 'f', long = "file")]
        file: Option<PathBuf>,
        context: PathBuf,
    },
    /// Execute a stored image's entrypoint.
    Run {
        #[arg(long)]
        rm: bool,
        #[arg(short = 'i', long)]
        interactive: bool,
        #[arg(short = 't', long)]
        tty: bool,
        #[arg(long)]
        network: Option<String>,
        #[arg(short = 'e', long = "env")]
        env: Vec<String>,
        tag: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        cmd: Vec<String>,
    },
    /// List stored images.
    Images,
}

#[derive(Serialize, Deserialize)]
struct ImageMeta {
    tag: String,
    image_id: String,
    workdir: String,
    env: BTreeMap<String, String>,
    entrypoint: Vec<String>,
    cmd: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let state = resolve_state(cli.state);
    match cli.cmd {
        Cmd::Build { tag, file, context } => build(&state, &tag, file.as_deref(), &context),
        Cmd::Run { env, tag, cmd, .. } => run(&state, &tag, &env, &cmd),
        Cmd::Images => images(&state),
    }
}

fn resolve_state(flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    if let Ok(p) = std::env::var("DOCKSTUB_STATE") {
        return PathBuf::from(p);
    }
    std::env::current_exe()
        .ok()
        .and_then(|e| e.parent().map(|d| d.join("dockstub-state")))
        .unwrap_or_else(|| PathBuf::from("dockstub-state"))
}

fn fail(msg: &str) -> ExitCode {
    eprintln!("{msg}");
    ExitCode::from(1)
}

fn image_dir(state: &Path, tag: &str) -> PathBuf {
    let sanitized: String = tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    state.join("images").join(sanitized)
}

// ---- build ----------------------------------------------------------------

struct BuildState {
    fs: PathBuf,
    workdir: String,
    env: BTreeMap<String, String>,
    entrypoint: Vec<String>,
    cmd: Vec<String>,
}

fn build(state: &Path, tag: &str, file: Option<&Path>, context: &Path) -> ExitCode {
    if !context.is_dir() {
        return fail(&format!(
            "unable to prepare context: {} not found",
            context.display()
        ));
    }
    let dockerfile = file
        .map(Path::to_path_buf)
        .unwrap_or_else(|| context.join("Dockerfile"));
    let text = match std::fs::read_to_string(&dockerfile) {
        Ok(t) => t,
        Err(_) => {
            return fail(&format!(
                "unable to prepare context: {} not found",
                dockerfile.display()
            ))
        }
    };
    let lines = logical_lines(&text);
    if lines.is_empty() {
        return fail("Error: Dockerfile contains no instructions");
    }

    let dir = image_dir(state, tag);
    let fs_root = dir.join("fs");
    let _ = std::fs::remove_dir_all(&dir);
    if let Err(e) = std::fs::create_dir_all(&fs_root) {
        return fail(&format!("image store unavailable: {e}"));
    }

    let mut bs = BuildState {
        fs: fs_root,
        workdir: "/".to_string(),
        env: BTreeMap::new(),
        entrypoint: Vec::new(),
        cmd: Vec::new(),
    };
    let total = lines.len();
    for (i, line) in lines.iter().enumerate() {
        println!("Step {}/{} : {}", i + 1, total, line);
        let (verb, rest) = match line.split_once(char::is_whitespace) {
            Some((v, r)) => (v.to_ascii_uppercase(), r.trim()),
            None => (line.to_ascii_uppercase(), ""),
        };
        if i == 0 && verb != "FROM" {
            let _ = std::fs::remove_dir_all(&dir);
            return fail("Error: Dockerfile must begin with FROM");
        }
        let step = apply_instruction(&mut bs, &verb, rest, context, i == 0);
        if let Err(msg) = step {
            let _ = std::fs::remove_dir_all(&dir);
            return fail(&msg);
        }
    }

    let image_id = fingerprint(&text, &bs.fs);
    let meta = ImageMeta {
        tag: tag.to_string(),
        image_id: image_id.clone(),
        workdir: bs.workdir,
        env: bs.env,
        entrypoint: bs.entrypoint,
        cmd: bs.cmd,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    if let Err(e) = std::fs::write(dir.join("meta.json"), meta_json + "\n") {
        return fail(&format!("image store unavailable: {e}"));
    }
    println!("Successfully built {image_id}");
    println!("Successfully tagged {tag}");
    ExitCode::SUCCESS
}

fn apply_instruction(
    bs: &mut BuildState,
    verb: &str,
    rest: &str,
    context: &Path,
    first: bool,
) -> Result<(), String> {
    match verb {
        "FROM" => {
            if !first {
                // multi-stage builds are out of scope
                return Err("Error: only single-stage builds are supported".to_string());
            }
            let image = rest
                .split_whitespace()
                .find(|t| !t.starts_with("--"))
                .unwrap_or_default();
            if !KNOWN_IMAGES.contains(&image) {
                return Err(format!("ERROR: failed to solve: {image}: not found"));
            }
            Ok(())
        }
        "RUN" | "EXPOSE" | "LABEL" | "USER" | "ARG" | "SHELL" | "VOLUME" | "STOPSIGNAL"
        | "HEALTHCHECK" | "MAINTAINER" => Ok(()),
        "WORKDIR" => {
            bs.workdir = resolve_container_path(&bs.workdir, rest);
            Ok(())
        }
        "ENV" => {
            parse_env(rest, &mut bs.env);
            Ok(())
        }
        "COPY" | "ADD" => copy_into_image(bs, rest, context),
        "ENTRYPOINT" => {
            bs.entrypoint = parse_exec_form(rest);
            Ok(())
        }
        "CMD" => {
            bs.cmd = parse_exec_form(rest);
            Ok(())
        }
        other => Err(format!("Error: unknown instruction: {other}")),
    }
}

/// Joins backslash-continued lines and drops comments and blanks.
fn logical_lines(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for raw in text.lines() {
        let line = raw.trim_end();
        if pending.is_empty() && (line.trim().is_empty() || line.trim_start().starts_with('#')) {
            continue;
        }
        if let Some(stripped) = line.strip_suffix('\\') {
            pending.push_str(stripped);
            pending.push(' ');
        } else {
            pending.push_str(line);
            out.push(pending.split_whitespace().collect::<Vec<_>>().join(" "));
            pending.clear();
        }
    }
    if !pending.is_empty() {
        out.push(pending.split_whitespace().collect::<Vec<_>>().join(" "));
    }
    out
}

fn resolve_container_path(cwd: &str, path: &str) -> String {
    let joined = if path.starts_with('/') {
        path.to_string()
    } else if cwd.ends_with('/') {
        format!("{cwd}{path}")
    } else {
        format!("{cwd}/{path}")
    };
    // normalize ./ and duplicate slashes; .. is not supported in image paths
    let parts: Vec<&str> = joined.split('/').filter(|p| !p.is_empty() && *p != ".").collect();
    format!("/{}", parts.join("/"))
}

fn parse_env(rest: &str, env: &mut BTreeMap<String, String>) {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.iter().all(|t| t.contains('=')) {
        for t in &tokens {
            if let Some((k, v)) = t.split_once('=') {
                env.insert(k.to_string(), v.trim_matches('"').to_string());
            }
        }
    } else if let Some((k, v)) = rest.split_once(char::is_whitespace) {
        env.insert(k.to_string(), v.trim().trim_matches('"').to_string());
    }
}

/// Exec-form JSON array, or shell form wrapped the way docker does it.
fn parse_exec_form(rest: &str) -> Vec<String> {
    let trimmed = rest.trim();
    if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<String>>(trimmed)
            .unwrap_or_else(|_| vec!["/bin/sh".into(), "-c".into(), trimmed.to_string()])
    } else {
        vec!["/bin/sh".into(), "-c".into(), trimmed.to_string()]
    }
}

fn copy_into_image(bs: &mut BuildState, rest: &str, context: &Path) -> Result<(), String> {
    let args: Vec<&str> = rest
        .split_whitespace()
        .filter(|t| !t.starts_with("--"))
        .collect();
    if args.len() < 2 {
        return Err("COPY failed: needs at least one source and a destination".to_string());
    }
    let (sources, dest) = args.split_at(args.len() - 1);
    let dest_container = resolve_container_path(&bs.workdir, dest[0]);
    let dest_root = bs.fs.join(dest_container.trim_start_matches('/'));
    // "." and trailing-slash destinations are directories; so is any
    // destination receiving more than one source
    let dest_is_dir = dest[0] == "." || dest[0].ends_with('/') || sources.len() > 1;
    for src in sources {
        if src.starts_with('/') || src.split('/').any(|p| p == "..") {
            return Err(format!(
                "COPY failed: forbidden path outside the build context: {src}"
            ));
        }
        let from = if *src == "." { context.to_path_buf() } else { context.join(src) };
        if !from.exists() {
            return Err(format!("COPY failed: stat {src}: file does not exist"));
        }
        let target = if from.is_file() && dest_is_dir {
            dest_root.join(from.file_name().unwrap_or_default())
        } else {
            dest_root.clone()
        };
        copy_tree(&from, &target).map_err(|e| format!("COPY failed: {src}: {e}"))?;
    }
    Ok(())
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    if from.is_dir() {
        std::fs::create_dir_all(to)?;
        for entry in std::fs::read_dir(from)? {
            let entry = entry?;
            copy_tree(&entry.path(), &to.join(entry.file_name()))?;
        }
    } else {
        if let Some(parent) = to.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::copy(from, to)?;
    }
    Ok(())
}

/// Digest of the recipe plus everything copied in, so rebuilding identical
/// inputs reports the identical image id.
fn fingerprint(dockerfile: &str, fs_root: &Path) -> String {
    let mut hasher = Sha256::new();
    hasher.update(dockerfile.as_bytes());
    let mut files = Vec::new();
    collect_files(fs_root, fs_root, &mut files);
    files.sort();
    for rel in files {
        hasher.update(rel.as_bytes());
        if let Ok(bytes) = std::fs::read(fs_root.join(&rel)) {
            hasher.update(&bytes);
        }
    }
    hex::encode(&hasher.finalize()[..6])
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().into_owned());
        }
    }
}

// ---- run ------------------------------------------------------------------

fn run(state: &Path, tag: &str, env_flags: &[String], extra: &[String]) -> ExitCode {
    let meta_path = image_dir(state, tag).join("meta.json");
    let Ok(meta_text) = std::fs::read_to_string(&meta_path) else {
        let shown = if tag.contains(':') { tag.to_string() } else { format!("{tag}:latest") };
        eprintln!("Unable to find image '{shown}' locally");
        eprintln!(
            "dockstub: Error response from daemon: pull access denied for {tag}, repository does not exist"
        );
        return ExitCode::from(125);
    };
    let meta: ImageMeta = match serde_json::from_str(&meta_text) {
        Ok(m) => m,
        Err(e) => return fail(&format!("corrupt image metadata for {tag}: {e}")),
    };

    let mut argv = meta.entrypoint.clone();
    if extra.is_empty() {
        argv.extend(meta.cmd.iter().cloned());
    } else {
        argv.extend(extra.iter().cloned());
    }
    if argv.is_empty() {
        eprintln!("dockstub: Error response from daemon: no command specified");
        return ExitCode::from(125);
    }

    let fs_root = image_dir(state, tag).join("fs");
    let cwd = fs_root.join(meta.workdir.trim_start_matches('/'));
    let _ = std::fs::create_dir_all(&cwd);

    let mut env = meta.env.clone();
    for pair in env_flags {
        if let Some((k, v)) = pair.split_once('=') {
            env.insert(k.to_string(), v.to_string());
        }
    }

    match exec_argv(&argv, &cwd, &env) {
        Ok(code) => ExitCode::from(code.min(255) as u8),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            // slim python images ship `python`; the host here may not
            if argv[0] == "python" {
                let mut retry = argv.clone();
                retry[0] = "python3".to_string();
                if let Ok(code) = exec_argv(&retry, &cwd, &env) {
                    return ExitCode::from(code.min(255) as u8);
                }
            }
            eprintln!("exec: {}: executable file not found in $PATH", argv[0]);
            ExitCode::from(127)
        }
        Err(e) => fail(&format!("dockstub: {e}")),
    }
}

fn exec_argv(
    argv: &[String],
    cwd: &Path,
    env: &BTreeMap<String, String>,
) -> std::io::Result<i32> {
    let status = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(cwd)
        .envs(env)
        .status()?;
    Ok(status.code().unwrap_or(1))
}

// ---- images ---------------------------------------------------------------

fn images(state: &Path) -> ExitCode {
    let mut rows = Vec::new();
    if let Ok(entries) = std::fs::read_dir(state.join("images")) {
        for entry in entries.flatten() {
            let meta_path = entry.path().join("meta.json");
            let Ok(text) = std::fs::read_to_string(&meta_path) else { continue };
            if let Ok(meta) = serde_json::from_str::<ImageMeta>(&text) {
                let (repo, tag) = match meta.tag.rsplit_once(':') {
                    Some((r, t)) => (r.to_string(), t.to_string()),
                    None => (meta.tag.clone(), "latest".to_string()),
                };
                rows.push((repo, tag, meta.image_id));
            }
        }
    }
    rows.sort();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "{:<40} {:<12} {}", "REPOSITORY", "TAG", "IMAGE ID");
    for (repo, tag, id) in rows {
        let _ = writeln!(out, "{repo:<40} {tag:<12} {id}");
    }
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuations_fold_into_one_instruction() {
        let lines = logical_lines("FROM alpine:3.19\n# note\nRUN apk add \\\n    curl\n");
        assert_eq!(lines, vec!["FROM alpine:3.19", "RUN apk add curl"]);
    }

    #[test]
    fn exec_and_shell_forms_both_parse() {
        assert_eq!(
            parse_exec_form("[\"python3\", \"exploit.py\"]"),
            vec!["python3", "exploit.py"]
        );
        assert_eq!(
            parse_exec_form("python3 exploit.py"),
            vec!["/bin/sh", "-c", "python3 exploit.py"]
        );
    }

    #[test]
    fn container_paths_normalize() {
        assert_eq!(resolve_container_path("/", "app"), "/app");
        assert_eq!(resolve_container_path("/app", "."), "/app");
        assert_eq!(resolve_container_path("/app", "/poc"), "/poc");
        assert_eq!(resolve_container_path("/app", "sub/dir"), "/app/sub/dir");
    }

    #[test]
    fn env_lines_accept_both_spellings() {
        let mut env = BTreeMap::new();
        parse_env("A=1 B=two", &mut env);
        parse_env("PATH /usr/bin", &mut env);
        assert_eq!(env.get("A").unwrap(), "1");
        assert_eq!(env.get("B").unwrap(), "two");
        assert_eq!(env.get("PATH").unwrap(), "/usr/bin");
    }
}
