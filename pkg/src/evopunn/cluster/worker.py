"""Worker service: executes JOB messages one connection at a time."""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import sys
import time

from ..data import IngestionError, SplitDataset
from ..evolution import run_ea
from .protocol import PROTOCOL_VERSION, JobSpec, ProtocolError, recv_message, send_message

log = logging.getLogger(__name__)


def _load_dataset(ref: dict) -> SplitDataset:
    if "inline" in ref:
        try:
            return SplitDataset.from_dict(ref["inline"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad inline split: {exc}") from exc
    return SplitDataset.load(ref["path"])


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        worker_id = self.server.worker_id
        while True:
            try:
                message = recv_message(sock)
            except ProtocolError as exc:
                self._error(None, str(exc))
                return
            except OSError:
                return
            if message is None:
                return
            if message.get("version") != PROTOCOL_VERSION:
                self._error(message.get("job_id"),
                            f"protocol version {message.get('version')!r} != {PROTOCOL_VERSION}")
                return
            if message["type"] == "HELLO":
                send_message(sock, {"type": "HELLO", "version": PROTOCOL_VERSION, "worker_id": worker_id})
                continue
            if message["type"] != "JOB":
                self._error(message.get("job_id"), f"unexpected {message['type']} message")
                return
            self._run_job(message)
            return

    def _error(self, job_id, text):
        log.warning("worker %s: %s", self.server.worker_id, text)
        try:
            send_message(self.request, {"type": "ERROR", "version": PROTOCOL_VERSION,
                                        "job_id": job_id, "worker_id": self.server.worker_id,
                                        "message": text})
        except OSError:
            pass

    def _run_job(self, message):
        try:
            job = JobSpec.from_message(message)
        except (ProtocolError, ValueError) as exc:
            self._error(message.get("job_id"), str(exc))
            return
        try:
            data = _load_dataset(job.dataset)
        except (IngestionError, OSError) as exc:
            self._error(job.job_id, f"cannot load dataset: {exc}")
            return
        start = time.perf_counter()
        for run, seed in job.runs:
            try:
                result = run_ea(job.config, data, seed)
            except ValueError as exc:
                self._error(job.job_id, f"run {run} failed: {exc}")
                return
            payload = {"type": "RESULT", "version": PROTOCOL_VERSION, "job_id": job.job_id,
                       "worker_id": self.server.worker_id, "run": run}
            payload.update(result.summary())
            send_message(self.request, payload)
        send_message(self.request, {"type": "DONE", "version": PROTOCOL_VERSION, "job_id": job.job_id,
                                    "worker_id": self.server.worker_id,
                                    "seconds": time.perf_counter() - start})


class WorkerServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], worker_id: str | None = None):
        super().__init__(address, _Handler)
        host, port = self.server_address[:2]
        self.worker_id = worker_id or f"{socket.gethostname()}:{port}:{os.getpid()}"

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve_worker(host: str = "127.0.0.1", port: int = 0, worker_id: str | None = None,
                 announce=sys.stdout) -> None:
    """Run a worker until interrupted; prints ``LISTENING host:port`` once bound."""
    with WorkerServer((host, port), worker_id) as server:
        if announce is not None:
            print(f"LISTENING {server.endpoint}", file=announce, flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
