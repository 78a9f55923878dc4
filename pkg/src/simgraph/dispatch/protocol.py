"""Wire format: a u32 big-endian byte length, then UTF-8 ``key=value`` lines.

Requests carry ``verb`` (ACQUIRE, COMPLETE, HEARTBEAT, STATUS); replies carry
``reply`` (JOB, NONE, ACK, ERR). Job parameters travel as ``param.<name>``.
"""
from __future__ import annotations

import socket
import struct

from ..errors import ProtocolError

MAX_MESSAGE = 1 << 20
_LEN = struct.Struct(">I")

VERBS = ("ACQUIRE", "COMPLETE", "HEARTBEAT", "STATUS")
REPLIES = ("JOB", "NONE", "ACK", "ERR")


def encode(fields: dict) -> bytes:
    lines = []
    for k, v in fields.items():
        v = str(v)
        if "\n" in v or "\n" in k or "=" in k:
            raise ProtocolError("bad_field", f"field {k!r} cannot be encoded")
        lines.append(f"{k}={v}\n")
    body = "".join(lines).encode("utf-8")
    if len(body) > MAX_MESSAGE:
        raise ProtocolError("too_large", f"{len(body)} bytes")
    return _LEN.pack(len(body)) + body


def decode(body: bytes) -> dict:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError("bad_encoding", str(exc)) from exc
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise ProtocolError("bad_line", line[:80])
        k, v = line.split("=", 1)
        out[k] = v
    return out


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> dict | None:
    """Next message, or None on a clean close before a header."""
    head = _read_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_MESSAGE:
        raise ProtocolError("too_large", f"{n} bytes")
    body = _read_exact(sock, n)
    if body is None:
        raise ProtocolError("truncated", "connection closed mid-message")
    return decode(body)


def send_message(sock: socket.socket, fields: dict) -> None:
    sock.sendall(encode(fields))


def params_to_fields(params: dict) -> dict:
    return {f"param.{k}": v for k, v in params.items()}


def fields_to_params(fields: dict) -> dict:
    return {k[6:]: v for k, v in fields.items() if k.startswith("param.")}


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {text!r}")
    return host, int(port)
