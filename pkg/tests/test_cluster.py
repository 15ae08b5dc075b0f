import json
import socket
import struct
import threading
import time

import pytest

from evopunn.cluster import (PROTOCOL_VERSION, JobSpec, LocalCluster, ProtocolError, WorkerServer, bench,
                             dispatch, efficiency, report_from_times, run_job, speedup, truncate4)
from evopunn.cluster.protocol import RESULT_FIELDS, encode, recv_message, send_message
from evopunn.evolution import EAParams
from evopunn.grid import ExperimentConfig, split_runs

from conftest import toy_split

CONFIG = ExperimentConfig("toy", "1", EAParams(population_size=12, max_generations=2, max_hidden=2))


@pytest.fixture(scope="module")
def split():
    return toy_split(n_train=30, n_test=10)


@pytest.fixture
def workers():
    servers, threads = [], []

    def start(n):
        for i in range(n):
            server = WorkerServer(("127.0.0.1", 0), worker_id=f"w{len(servers)}")
            t = threading.Thread(target=server.serve_forever, daemon=True)
            t.start()
            servers.append(server)
            threads.append(t)
        return [s.endpoint for s in servers[-n:]]

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


def job(split, runs, job_id="j1", version=PROTOCOL_VERSION):
    return JobSpec(job_id, CONFIG, runs, {"inline": split.to_dict()}, version)


def converse(endpoint, payload: bytes):
    host, port = endpoint.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        sock.sendall(payload)
        messages = []
        while True:
            m = recv_message(sock)
            if m is None:
                return messages
            messages.append(m)


def strip_timing(run):
    return {k: v for k, v in run.items() if k not in ("seconds", "worker_id")}


class TestWorker:
    def test_two_seeds_two_results_then_done(self, workers, split):
        (ep,) = workers(1)
        messages = converse(ep, encode(job(split, [(0, 5), (1, 6)]).to_message()))
        assert [m["type"] for m in messages] == ["RESULT", "RESULT", "DONE"]
        assert [m["seed"] for m in messages[:2]] == [5, 6]
        assert all(set(RESULT_FIELDS) <= set(m) for m in messages[:2])
        assert messages[-1]["seconds"] >= max(m["seconds"] for m in messages[:2])

    def test_version_mismatch(self, workers, split):
        (ep,) = workers(1)
        messages = converse(ep, encode(job(split, [(0, 1)], version=99).to_message()))
        assert [m["type"] for m in messages] == ["ERROR"]
        assert "version" in messages[0]["message"]

    def test_malformed_message(self, workers):
        (ep,) = workers(1)
        body = b"{not json"
        messages = converse(ep, struct.pack(">I", len(body)) + body)
        assert [m["type"] for m in messages] == ["ERROR"]

    def test_malformed_job(self, workers):
        (ep,) = workers(1)
        messages = converse(ep, encode({"type": "JOB", "version": PROTOCOL_VERSION, "job_id": "x"}))
        assert [m["type"] for m in messages] == ["ERROR"] and messages[0]["job_id"] == "x"

    def test_unreadable_dataset(self, workers, tmp_path):
        (ep,) = workers(1)
        spec = JobSpec("jx", CONFIG, [(0, 1)], {"path": str(tmp_path / "missing.json")})
        messages = converse(ep, encode(spec.to_message()))
        assert [m["type"] for m in messages] == ["ERROR"]
        assert messages[0]["job_id"] == "jx"

    def test_hello(self, workers):
        (ep,) = workers(1)
        host, port = ep.rsplit(":", 1)
        with socket.create_connection((host, int(port)), timeout=5) as sock:
            send_message(sock, {"type": "HELLO", "version": PROTOCOL_VERSION})
            reply = recv_message(sock)
        assert reply["type"] == "HELLO" and reply["worker_id"] == "w0"

    def test_same_job_on_two_workers(self, workers, split):
        a, b = workers(2)
        spec = job(split, [(0, 11), (1, 12)])
        ra, rb = run_job(a, spec), run_job(b, spec)
        assert ra.worker_id != rb.worker_id
        assert [strip_timing(r) for r in ra.runs] == [strip_timing(r) for r in rb.runs]

    def test_path_reference(self, workers, split, tmp_path):
        (ep,) = workers(1)
        split.save(tmp_path / "s.json")
        spec = JobSpec("jp", CONFIG, [(0, 3)], {"path": str(tmp_path / "s.json")})
        inline = run_job(ep, job(split, [(0, 3)]))
        by_path = run_job(ep, spec)
        assert strip_timing(inline.runs[0]) == strip_timing(by_path.runs[0])


class TestJobSpec:
    def test_needs_runs(self, split):
        with pytest.raises(ValueError):
            job(split, [])

    def test_round_trip(self, split):
        spec = job(split, [(0, 1), (1, 2)])
        again = JobSpec.from_message(json.loads(encode(spec.to_message())[4:]))
        assert again.runs == spec.runs and again.config == spec.config


class TestDispatch:
    def test_single_worker(self, workers, split):
        (ep,) = workers(1)
        outcome = dispatch([ep], [job(split, [(0, 1), (1, 2)])])
        assert outcome.ok and [r["run"] for r in outcome.runs] == [0, 1]
        assert outcome.seconds >= outcome.results[0].seconds

    def test_result_set_independent_of_worker_count(self, workers, split):
        eps = workers(4)
        sets = {}
        for p in (1, 4):
            jobs = [job(split, a.runs, f"p{p}-{a.worker}") for a in split_runs(8, p, 100)]
            outcome = dispatch(eps[:p], jobs)
            assert outcome.ok
            sets[p] = [strip_timing(r) for r in outcome.runs]
        assert sets[1] == sets[4]
        assert [r["seed"] for r in sets[1]] == list(range(100, 108))

    def test_unreachable_endpoint(self, split):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]  # closed again before use
        start = time.perf_counter()
        outcome = dispatch([f"127.0.0.1:{port}"], [job(split, [(0, 1)])], connect_timeout=2.0)
        assert not outcome.ok and outcome.failures[0].job_id == "j1"
        assert time.perf_counter() - start < 5.0

    def test_worker_error_is_reported(self, workers, split):
        (ep,) = workers(1)
        outcome = dispatch([ep], [job(split, [(0, 1)], version=2)])
        assert not outcome.ok and "version" in outcome.failures[0].message

    def test_too_many_jobs(self, workers, split):
        (ep,) = workers(1)
        with pytest.raises(ValueError):
            dispatch([ep], [job(split, [(0, 1)]), job(split, [(1, 2)], "j2")])


class TestSpeedupArithmetic:
    @pytest.mark.parametrize("t1, tp, s", [(349, 177, "1.9717"), (103, 14, "7.3571"), (5.0, 5.0, "1.0000")])
    def test_speedup(self, t1, tp, s):
        assert truncate4(speedup(t1, tp)) == s

    @pytest.mark.parametrize("s, p, e", [(3.9659, 4, "0.9914"), (7.4137, 8, "0.9267"), (3.0, 3, "1.0000")])
    def test_efficiency(self, s, p, e):
        assert truncate4(efficiency(s, p)) == e

    def test_truncation_not_rounding(self):
        assert truncate4(0.991475) == "0.9914" and truncate4(0.9858) == "0.9858"
        assert truncate4(None) == "-"

    # published minutes per node count and the printed speedup/efficiency
    REPORTED = {
        "balance": ({1: 349, 2: 177, 4: 88, 8: 45},
                    ["1.9717", "3.9659", "7.7555"], ["0.9858", "0.9914", "0.9694"]),
        "cancer": ({1: 103, 2: 53, 4: 26, 8: 14},
                   ["1.9433", "3.9615", "7.3571"], ["0.9716", "0.9903", "0.9196"]),
        "pima": ({1: 215, 2: 109, 4: 54, 8: 29},
                 ["1.9724", "3.9814", "7.4137"], ["0.9862", "0.9953", "0.9267"]),
    }

    @pytest.mark.parametrize("name", sorted(REPORTED))
    def test_published_table(self, name):
        times, s, e = self.REPORTED[name]
        rows = report_from_times(times).rows[1:]
        assert [truncate4(r.speedup) for r in rows] == s
        assert [truncate4(r.efficiency) for r in rows] == e

    def test_non_positive_time(self):
        with pytest.raises(ValueError):
            speedup(0, 1)

    def test_report_recomputable(self):
        times = {1: 349.0, 2: 177.0, 4: 88.0, 8: 45.0}
        report = report_from_times(times)
        for row in report.rows:
            assert abs(row.speedup - times[1] / row.seconds) < 1e-12
            assert abs(row.efficiency - row.speedup / row.workers) < 1e-12
        assert report.optimal_workers == 4
        assert [truncate4(r.efficiency) for r in report.rows] == ["1.0000", "0.9858", "0.9914", "0.9694"]

    def test_failed_p_marked(self):
        report = report_from_times({1: 10.0, 2: None})
        assert report.partial and report.rows[1].failed and report.rows[1].speedup is None


class TestBench:
    def test_single_p(self, workers, split):
        eps = workers(1)
        report = bench(CONFIG, {"inline": split.to_dict()}, 2, [1], eps, master_seed=0)
        assert [(r.workers, r.speedup, r.efficiency) for r in report.rows] == [(1, 1.0, 1.0)]

    def test_rows_and_invariance(self, workers, split):
        eps = workers(2)
        report = bench(CONFIG, {"inline": split.to_dict()}, 4, [1, 2], eps, master_seed=3)
        assert report.p_list == [1, 2] and not report.partial
        assert all(r.speedup > 0 and r.efficiency == r.speedup / r.workers for r in report.rows)
        assert [strip_timing(r) for r in report.runs[1]] == [strip_timing(r) for r in report.runs[2]]

    def test_unreachable_worker_gives_partial_report(self, workers, split):
        (good,) = workers(1)
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            dead = f"127.0.0.1:{s.getsockname()[1]}"
        report = bench(CONFIG, {"inline": split.to_dict()}, 2, [1, 2], [good, dead], connect_timeout=1.0)
        assert report.partial and report.rows[1].failed and not report.rows[0].failed

    def test_write(self, workers, split, tmp_path):
        eps = workers(1)
        report = bench(CONFIG, {"inline": split.to_dict()}, 1, [1], eps)
        report.write(tmp_path)
        assert (tmp_path / "bench.csv").read_text().splitlines()[0] == "P,Tp_seconds,speedup,efficiency,failed"
        assert json.loads((tmp_path / "bench.json").read_text())["optimal_workers"] == 1


def test_local_cluster_spawns_workers(split, tmp_path):
    split.save(tmp_path / "s.json")
    with LocalCluster(2) as cluster:
        assert len(cluster.endpoints) == 2
        jobs = [JobSpec(f"j{a.worker}", CONFIG, a.runs, {"path": str(tmp_path / "s.json")})
                for a in split_runs(3, 2, 0)]
        outcome = dispatch(cluster.endpoints, jobs)
    assert outcome.ok and [r["run"] for r in outcome.runs] == [0, 1, 2]
    assert all(p.poll() is not None for p in cluster.procs) or not cluster.procs


def test_recv_rejects_oversized(monkeypatch):
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack(">I", 1 << 30))
        with pytest.raises(ProtocolError):
            recv_message(b)
