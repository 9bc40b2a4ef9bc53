use std::path::Path;
use std::process::{Command, Output};

fn dockstub(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dockstub"))
        .env("DOCKSTUB_STATE", state)
        .args(args)
        .output()
        .expect("dockstub spawns")
}

fn write_context(dir: &Path, dockerfile: &str) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("Dockerfile"), dockerfile).unwrap();
    std::fs::write(dir.join("exploit.py"), "import sys\nprint('poc ran', sys.argv[1:])\n").unwrap();
    std::fs::write(dir.join("requirements.txt"), "requests\n").unwrap();
}

const GOOD: &str = "\
FROM python:3.11-slim
WORKDIR /app
COPY . .
RUN pip install --no-cache-dir -r requirements.txt
ENTRYPOINT [\"python\", \"exploit.py\"]
";

#[test]
fn build_run_images_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let ctx = tmp.path().join("ctx");
    write_context(&ctx, GOOD);

    let built = dockstub(&state, &["build", "-t", "arsenal/demo", ctx.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&built.stdout);
    assert!(built.status.success(), "stderr: {}", String::from_utf8_lossy(&built.stderr));
    assert!(stdout.contains("Step 1/5 : FROM python:3.11-slim"), "{stdout}");
    assert!(stdout.contains("Successfully tagged arsenal/demo"), "{stdout}");

    // same inputs, same image id
    let again = dockstub(&state, &["build", "-t", "arsenal/demo", ctx.to_str().unwrap()]);
    assert_eq!(built.stdout, again.stdout);

    let ran = dockstub(&state, &["run", "--rm", "arsenal/demo", "--target", "127.0.0.1"]);
    assert!(ran.status.success(), "stderr: {}", String::from_utf8_lossy(&ran.stderr));
    let ran_out = String::from_utf8_lossy(&ran.stdout);
    assert!(ran_out.contains("poc ran"), "{ran_out}");
    assert!(ran_out.contains("127.0.0.1"), "{ran_out}");

    let listed = dockstub(&state, &["images"]);
    let table = String::from_utf8_lossy(&listed.stdout);
    assert!(table.contains("arsenal/demo"), "{table}");
}

#[test]
fn running_an_unbuilt_tag_fails_like_a_missing_image() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let out = dockstub(&state, &["run", "--rm", "arsenal/ghost", "true"]);
    assert_eq!(out.status.code(), Some(125));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Unable to find image 'arsenal/ghost:latest' locally"), "{err}");
}

#[test]
fn unknown_base_image_fails_the_build() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let ctx = tmp.path().join("ctx");
    write_context(&ctx, "FROM python:4.0-slim\nCOPY . .\n");
    let out = dockstub(&state, &["build", "-t", "arsenal/bad", ctx.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("failed to solve: python:4.0-slim: not found"), "{err}");
    // nothing half-built left behind
    let missing = dockstub(&state, &["run", "arsenal/bad", "true"]);
    assert_eq!(missing.status.code(), Some(125));
}

#[test]
fn copy_of_a_missing_file_fails_the_build() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let ctx = tmp.path().join("ctx");
    std::fs::create_dir_all(&ctx).unwrap();
    std::fs::write(
        ctx.join("Dockerfile"),
        "FROM alpine:3.19\nCOPY nonexistent.bin /app/\n",
    )
    .unwrap();
    let out = dockstub(&state, &["build", "-t", "arsenal/hole", ctx.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stat nonexistent.bin: file does not exist"), "{err}");
}

#[test]
fn entrypoint_args_append_docker_style() {
    let tmp = tempfile::tempdir().unwrap();
    let state = tmp.path().join("state");
    let ctx = tmp.path().join("ctx");
    std::fs::create_dir_all(&ctx).unwrap();
    std::fs::write(
        ctx.join("Dockerfile"),
        "FROM alpine:3.19\nWORKDIR /work\nENV GREETING=hello\nENTRYPOINT [\"sh\", \"-c\", \"echo $GREETING $0 $@\"]\nCMD [\"default\"]\n",
    )
    .unwrap();
    let built = dockstub(&state, &["build", "-t", "arsenal/echo", ctx.to_str().unwrap()]);
    assert!(built.status.success());

    // no extra args: stored CMD applies
    let default_run = dockstub(&state, &["run", "arsenal/echo"]);
    assert!(String::from_utf8_lossy(&default_run.stdout).contains("hello default"));

    // extra args replace CMD
    let custom = dockstub(&state, &["run", "arsenal/echo", "custom", "args"]);
    assert!(String::from_utf8_lossy(&custom.stdout).contains("hello custom args"));
}
