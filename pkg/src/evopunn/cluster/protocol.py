"""Wire format shared by master and workers.

Every message is a 4-byte big-endian length followed by that many bytes of
UTF-8 JSON.  The JSON object always carries ``type`` and ``version``.  See
PROTOCOL.md at the repository root for the field list of each type.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass, field

from ..grid import ExperimentConfig

PROTOCOL_VERSION = 1
MAX_MESSAGE_BYTES = 1 << 28
MESSAGE_TYPES = ("HELLO", "JOB", "RESULT", "DONE", "ERROR")
RESULT_FIELDS = ("run", "seed", "train_ccr", "test_ccr", "connections", "topology", "seconds")

_HEADER = struct.Struct(">I")


class ProtocolError(RuntimeError):
    pass


def encode(message: dict) -> bytes:
    body = json.dumps(message, separators=(",", ":"), sort_keys=True).encode()
    return _HEADER.pack(len(body)) + body


def send_message(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode(message))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise ProtocolError("connection closed mid-message")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_message(sock: socket.socket) -> dict | None:
    """Next message, or None on a clean end of stream."""
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    (length,) = _HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {length} bytes exceeds limit")
    body = _recv_exact(sock, length) if length else b""
    if body is None:
        raise ProtocolError("connection closed before message body")
    try:
        message = json.loads(body.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message: {exc}") from exc
    if not isinstance(message, dict) or message.get("type") not in MESSAGE_TYPES:
        raise ProtocolError("message without a known type")
    return message


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


@dataclass
class JobSpec:
    job_id: str
    config: ExperimentConfig
    runs: list[tuple[int, int]]
    dataset: dict  # {"path": ...} or {"inline": <split dict>}
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if not self.runs:
            raise ValueError("a job needs at least one run")
        if set(self.dataset) not in ({"path"}, {"inline"}):
            raise ValueError("dataset reference must be a path or an inline split")

    def to_message(self) -> dict:
        return {
            "type": "JOB",
            "version": self.version,
            "job_id": self.job_id,
            "config": self.config.to_dict(),
            "runs": [list(r) for r in self.runs],
            "dataset": self.dataset,
        }

    @classmethod
    def from_message(cls, message: dict) -> JobSpec:
        try:
            return cls(
                job_id=str(message["job_id"]),
                config=ExperimentConfig.from_dict(message["config"]),
                runs=[(int(i), int(s)) for i, s in message["runs"]],
                dataset=dict(message["dataset"]),
                version=int(message["version"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed JOB: {exc}") from exc


@dataclass
class JobResult:
    job_id: str
    worker_id: str
    runs: list[dict] = field(default_factory=list)
    seconds: float = 0.0
