"""Master side: send one job per worker, collect results, time the whole batch."""

from __future__ import annotations

import logging
import socket
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field

from .protocol import (RESULT_FIELDS, JobResult, JobSpec, ProtocolError,
                       parse_endpoint, recv_message, send_message)

log = logging.getLogger(__name__)


@dataclass
class JobFailure:
    job_id: str
    endpoint: str
    message: str


@dataclass
class DispatchOutcome:
    results: list[JobResult] = field(default_factory=list)
    failures: list[JobFailure] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def runs(self) -> list[dict]:
        """All run summaries ordered by run index."""
        return sorted((r for job in self.results for r in job.runs), key=lambda r: r["run"])


def run_job(endpoint: str, job: JobSpec, connect_timeout: float = 5.0) -> JobResult:
    """Execute one job on one worker; raises on any failure."""
    host, port = parse_endpoint(endpoint)
    with socket.create_connection((host, port), timeout=connect_timeout) as sock:
        sock.settimeout(None)
        send_message(sock, job.to_message())
        result = JobResult(job.job_id, "")
        while True:
            message = recv_message(sock)
            if message is None:
                raise ProtocolError(f"worker {endpoint} closed the connection before DONE")
            kind = message["type"]
            if kind == "ERROR":
                raise ProtocolError(f"worker {endpoint}: {message.get('message')}")
            if message.get("job_id") != job.job_id:
                raise ProtocolError(f"worker {endpoint} answered for job {message.get('job_id')!r}")
            result.worker_id = message.get("worker_id", endpoint)
            if kind == "RESULT":
                result.runs.append({k: message[k] for k in RESULT_FIELDS})
            elif kind == "DONE":
                result.seconds = float(message["seconds"])
                if len(result.runs) != len(job.runs):
                    raise ProtocolError(f"worker {endpoint} sent {len(result.runs)} results for "
                                        f"{len(job.runs)} runs")
                return result
            else:
                raise ProtocolError(f"unexpected {kind} from {endpoint}")


def dispatch(endpoints: list[str], jobs: list[JobSpec], connect_timeout: float = 5.0) -> DispatchOutcome:
    """Run ``jobs[i]`` on ``endpoints[i]`` concurrently.

    Wall-clock time spans from before the first send until the last worker
    has answered.  Failed jobs are reported, never retried.
    """
    if len(jobs) > len(endpoints):
        raise ValueError(f"{len(jobs)} jobs but only {len(endpoints)} workers")
    outcome = DispatchOutcome()
    lock = threading.Lock()

    def work(endpoint, job):
        try:
            result = run_job(endpoint, job, connect_timeout)
        except (OSError, ProtocolError) as exc:
            log.error("job %s on %s failed: %s", job.job_id, endpoint, exc)
            with lock:
                outcome.failures.append(JobFailure(job.job_id, endpoint, str(exc)))
        else:
            with lock:
                outcome.results.append(result)

    threads = [threading.Thread(target=work, args=pair, daemon=True) for pair in zip(endpoints, jobs)]
    start = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    outcome.seconds = time.perf_counter() - start
    outcome.results.sort(key=lambda r: min(run["run"] for run in r.runs))
    return outcome


class LocalCluster:
    """Spawn ``n`` worker subprocesses on this host; use as a context manager."""

    def __init__(self, n: int, host: str = "127.0.0.1", startup_timeout: float = 60.0):
        if n < 1:
            raise ValueError("need at least one worker")
        self.n = n
        self.host = host
        self.startup_timeout = startup_timeout
        self.procs: list[subprocess.Popen] = []
        self.endpoints: list[str] = []

    def __enter__(self) -> LocalCluster:
        try:
            for _ in range(self.n):
                proc = subprocess.Popen(
                    [sys.executable, "-m", "evopunn", "worker", "--listen", f"{self.host}:0"],
                    stdout=subprocess.PIPE, text=True)
                self.procs.append(proc)
            for proc in self.procs:
                line = proc.stdout.readline().strip()
                if not line.startswith("LISTENING "):
                    raise RuntimeError(f"worker failed to start: {line!r}")
                self.endpoints.append(line.split()[1])
        except BaseException:
            self.close()
            raise
        return self

    def close(self) -> None:
        for proc in self.procs:
            if proc.poll() is None:
                proc.terminate()
        for proc in self.procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
            if proc.stdout:
                proc.stdout.close()
        self.procs.clear()

    def __exit__(self, *exc):
        self.close()
