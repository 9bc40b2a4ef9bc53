//! A deliberately backdoored line-oriented TCP service, plus a benign mode.
//!
//! The vulnerable flavor greets with a versioned banner and accepts a DIAG
//! command that wires /bin/sh straight to the socket. The benign flavor
//! greets with a nondescript banner and refuses everything. Both exist so
//! end-to-end tests have a real network target with a real (local,
//! contained) privilege boundary to cross.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Command, Stdio};

use clap::Parser;
use pentest_stubs::{DIAG_ACK, VULN_BANNER};

#[derive(Parser)]
#[command(name = "stub-target", about = "Fixture TCP service for exercise runs")]
struct Args {
    /// Port to listen on.
    #[arg(long, default_value_t = 45832)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Run as a harmless service under this name instead of the
    /// backdoored one.
    #[arg(long, value_name = "NAME")]
    benign: Option<String>,
}

fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let listener = TcpListener::bind((args.bind.as_str(), args.port))?;
    println!("listening on {}:{}", args.bind, args.port);
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let benign = args.benign.clone();
        std::thread::spawn(move || {
            let _ = match benign {
                Some(name) => serve_benign(stream, &name),
                None => serve_vulnerable(stream),
            };
        });
    }
    Ok(())
}

/// Byte-at-a-time line read. No read-ahead buffering, so bytes that arrive
/// after a DIAG line are left on the socket for the spawned shell.
fn read_line(stream: &mut TcpStream) -> std::io::Result<Option<String>> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match stream.read(&mut byte) {
            Ok(0) => return Ok(if buf.is_empty() { None } else { Some(lossy(&buf)) }),
            Ok(_) => {
                if byte[0] == b'\n' {
                    return Ok(Some(lossy(&buf)));
                }
                if buf.len() < 4096 {
                    buf.push(byte[0]);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn lossy(buf: &[u8]) -> String {
    String::from_utf8_lossy(buf).trim_end_matches('\r').trim().to_string()
}

fn reply(stream: &mut TcpStream, line: &str) -> std::io::Result<()> {
    stream.write_all(line.as_bytes())?;
    stream.write_all(b"\r\n")
}

fn serve_vulnerable(mut stream: TcpStream) -> std::io::Result<()> {
    reply(&mut stream, VULN_BANNER)?;
    while let Some(line) = read_line(&mut stream)? {
        let (verb, rest) = split_verb(&line);
        match verb.as_str() {
            "" => continue,
            "HELP" => reply(&mut stream, "214 commands: HELP STAT DIAG QUIT")?,
            "STAT" => reply(&mut stream, "211 service is running")?,
            "DIAG" => {
                if rest.is_empty() {
                    reply(&mut stream, "501 DIAG requires a command")?;
                } else {
                    reply(&mut stream, DIAG_ACK)?;
                    wire_shell(&stream, rest)?;
                    // the shell owned the socket until it exited
                    break;
                }
            }
            "QUIT" => {
                reply(&mut stream, "221 bye")?;
                break;
            }
            _ => reply(&mut stream, "500 unknown command")?,
        }
    }
    Ok(())
}

fn serve_benign(mut stream: TcpStream, name: &str) -> std::io::Result<()> {
    reply(&mut stream, &format!("220 {name} service ready"))?;
    while let Some(line) = read_line(&mut stream)? {
        let (verb, _) = split_verb(&line);
        match verb.as_str() {
            "" => continue,
            "QUIT" => {
                reply(&mut stream, "221 bye")?;
                break;
            }
            _ => reply(&mut stream, "502 command not implemented")?,
        }
    }
    Ok(())
}

fn split_verb(line: &str) -> (String, &str) {
    match line.split_once(char::is_whitespace) {
        Some((verb, rest)) => (verb.to_ascii_uppercase(), rest.trim()),
        None => (line.to_ascii_uppercase(), ""),
    }
}

/// The backdoor: run the requested command with all three stdio streams on
/// the client's socket and wait until it exits.
fn wire_shell(stream: &TcpStream, cmd: &str) -> std::io::Result<()> {
    use std::os::unix::io::{FromRawFd, IntoRawFd};
    let stdin = stream.try_clone()?.into_raw_fd();
    let stdout = stream.try_clone()?.into_raw_fd();
    let stderr = stream.try_clone()?.into_raw_fd();
    let mut child = unsafe {
        Command::new("/bin/sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::from_raw_fd(stdin))
            .stdout(Stdio::from_raw_fd(stdout))
            .stderr(Stdio::from_raw_fd(stderr))
            .spawn()?
    };
    let _ = child.wait();
    Ok(())
}
