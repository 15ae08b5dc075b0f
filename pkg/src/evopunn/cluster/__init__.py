from .bench import BenchReport, BenchRow, bench, efficiency, report_from_times, speedup, truncate4
from .master import DispatchOutcome, JobFailure, LocalCluster, dispatch, run_job
from .protocol import PROTOCOL_VERSION, JobResult, JobSpec, ProtocolError
from .worker import WorkerServer, serve_worker
