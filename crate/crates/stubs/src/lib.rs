//! Spawn and locate helpers for the fixture binaries. Integration tests in
//! other crates use these to stand up a listening target service or a
//! container CLI stand-in without shelling out to hand-written scripts.

use std::io;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

/// Greeting the vulnerable service sends on connect.
pub const VULN_BANNER: &str = "220 StubFileService 2.3.1 ready";
pub const VULN_SERVICE: &str = "StubFileService";
pub const VULN_VERSION: &str = "2.3.1";
/// Reply to a DIAG line, sent just before the shell is wired to the socket.
pub const DIAG_ACK: &str = "250 spawning diagnostic shell";

/// Finds a workspace binary, building it when the test run has not produced
/// it yet (single-package test invocations). `package` is the cargo package
/// that owns the binary.
pub fn locate_bin(name: &str, package: &str) -> io::Result<PathBuf> {
    if let Some(found) = find_existing(name) {
        return Ok(found);
    }
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".to_string());
    let mut cmd = Command::new(cargo);
    cmd.args(["build", "-p", package, "--bin", name])
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if let Ok(dir) = std::env::var("CARGO_MANIFEST_DIR") {
        cmd.current_dir(dir);
    }
    let status = cmd.status()?;
    if !status.success() {
        return Err(io::Error::other(format!("cargo build for {name} failed")));
    }
    find_existing(name)
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("binary {name} not found after build")))
}

fn find_existing(name: &str) -> Option<PathBuf> {
    let mut dirs = Vec::new();
    if let Ok(exe) = std::env::current_exe() {
        if let Some(dir) = exe.parent() {
            dirs.push(dir.to_path_buf());
            // test binaries live one level down in deps/
            if dir.file_name().is_some_and(|n| n == "deps") {
                if let Some(up) = dir.parent() {
                    dirs.push(up.to_path_buf());
                }
            }
        }
    }
    if let Ok(md) = std::env::var("CARGO_MANIFEST_DIR") {
        dirs.push(Path::new(&md).join("..").join("..").join("target").join("debug"));
    }
    dirs.into_iter().map(|d| d.join(name)).find(|p| p.is_file())
}

/// Polls until something accepts on 127.0.0.1:`port` or the timeout runs out.
pub fn wait_for_port(port: u16, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if TcpStream::connect_timeout(
            &std::net::SocketAddr::from(([127, 0, 0, 1], port)),
            Duration::from_millis(300),
        )
        .is_ok()
        {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(40));
    }
}

/// A spawned fixture service; killed when dropped.
pub struct ServiceGuard {
    child: Child,
    pub port: u16,
}

impl Drop for ServiceGuard {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_service(args: &[String], port: u16) -> io::Result<ServiceGuard> {
    let bin = locate_bin("stub-target", "pentest-stubs")?;
    let child = Command::new(bin)
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()?;
    let guard = ServiceGuard { child, port };
    if !wait_for_port(port, Duration::from_secs(15)) {
        return Err(io::Error::new(
            io::ErrorKind::TimedOut,
            format!("stub service never opened port {port}"),
        ));
    }
    Ok(guard)
}

/// Starts the backdoored file service on 127.0.0.1:`port`.
pub fn spawn_vulnerable(port: u16) -> io::Result<ServiceGuard> {
    spawn_service(&["--port".to_string(), port.to_string()], port)
}

/// Starts a harmless chatter service that answers every command with
/// "not implemented".
pub fn spawn_benign(name: &str, port: u16) -> io::Result<ServiceGuard> {
    spawn_service(
        &[
            "--port".to_string(),
            port.to_string(),
            "--benign".to_string(),
            name.to_string(),
        ],
        port,
    )
}

/// Writes a wrapper script that pins dockstub's state directory, so callers
/// that take a single container CLI executable (no env plumbing) get an
/// isolated image store. Returns the script path.
pub fn dockstub_wrapper(state_dir: &Path) -> io::Result<PathBuf> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::create_dir_all(state_dir)?;
    let bin = locate_bin("dockstub", "pentest-stubs")?;
    let script = state_dir.join("dockstub.sh");
    std::fs::write(
        &script,
        format!(
            "#!/bin/sh\nexec env DOCKSTUB_STATE='{}' '{}' \"$@\"\n",
            state_dir.display(),
            bin.display()
        ),
    )?;
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755))?;
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};

    fn free_port() -> u16 {
        // bind to 0, take what the OS hands out, release it for the child
        std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port()
    }

    fn read_line(reader: &mut impl BufRead) -> String {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        line.trim_end().to_string()
    }

    #[test]
    fn vulnerable_service_banners_and_hands_out_a_shell() {
        let port = free_port();
        let _guard = spawn_vulnerable(port).unwrap();
        let mut conn = TcpStream::connect(("127.0.0.1", port)).unwrap();
        conn.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let mut reader = BufReader::new(conn.try_clone().unwrap());

        assert_eq!(read_line(&mut reader), VULN_BANNER);
        conn.write_all(b"NOPE\r\n").unwrap();
        assert_eq!(read_line(&mut reader), "500 unknown command");
        conn.write_all(b"DIAG sh\r\n").unwrap();
        assert_eq!(read_line(&mut reader), DIAG_ACK);
        conn.write_all(b"echo shell-$((40+2)); id\n").unwrap();
        let mut saw_marker = false;
        let mut saw_uid = false;
        for _ in 0..10 {
            let line = read_line(&mut reader);
            saw_marker |= line.contains("shell-42");
            saw_uid |= line.contains("uid=");
            if saw_marker && saw_uid {
                break;
            }
        }
        assert!(saw_marker, "shell did not evaluate the probe");
        assert!(saw_uid, "id output never arrived");
    }

    #[test]
    fn benign_service_never_cooperates() {
        let port = free_port();
        let _guard = spawn_benign("sshd", port).unwrap();
        let mut conn = TcpStream::connect(("127.0.0.1", port)).unwrap();
        conn.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let mut reader = BufReader::new(conn.try_clone().unwrap());

        assert_eq!(read_line(&mut reader), "220 sshd service ready");
        conn.write_all(b"DIAG sh\r\n").unwrap();
        assert_eq!(read_line(&mut reader), "502 command not implemented");
        conn.write_all(b"QUIT\r\n").unwrap();
        assert_eq!(read_line(&mut reader), "221 bye");
    }
}
