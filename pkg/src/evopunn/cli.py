"""Command-line entry point: ``evopunn <command> ...`` or ``python -m evopunn``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

from .cluster import LocalCluster, ProtocolError, bench, dispatch, serve_worker, truncate4
from .cluster.protocol import JobSpec, parse_endpoint
from .data import IngestionError, SplitDataset, load_split
from .evolution import EAParams, run_ea
from .grid import (BEST_CONFIGS, BaseConfig, ExperimentConfig, base_config_for, expand_grid,
                   expand_grid_2param, expand_grid_3param, split_runs)
from .stats import compare_configs, summarize

EXIT_INGESTION = 3
EXIT_PROTOCOL = 4
EXIT_PRECONDITION = 5

RESULT_COLUMNS = ["dataset", "config", "seed", "train_ccr", "test_ccr", "connections", "topology", "seconds"]
GRID_SEED_STRIDE = 100_000

log = logging.getLogger("evopunn")


def _common_params(args) -> EAParams:
    """EA parameters with precedence flags > config file > defaults."""
    values = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot read config file {args.config}: {exc}") from exc
        known = {f.name for f in fields(EAParams)}
        unknown = set(raw) - known - {"neu", "gen", "alpha2"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in raw.items() if k in known})
        args.file_base = {k: raw[k] for k in ("neu", "gen", "alpha2") if k in raw}
    if args.population is not None:
        values["population_size"] = args.population
    return EAParams(**values)


def _base(args, dataset: str) -> BaseConfig:
    common = _common_params(args)
    try:
        base = base_config_for(dataset, common=common)
    except KeyError:
        base = None
    overrides = dict(getattr(args, "file_base", {}))
    overrides.update({k: getattr(args, k) for k in ("neu", "gen", "alpha2") if getattr(args, k) is not None})
    if base is None:
        if "neu" not in overrides or "gen" not in overrides:
            raise ValueError(f"no base configuration known for {dataset!r}; pass --neu and --gen")
        return BaseConfig(dataset, overrides["neu"], overrides["gen"], overrides.get("alpha2"), common)
    return replace(base, **overrides)


def _select(base: BaseConfig, cell: str | None) -> ExperimentConfig:
    if cell is None or cell in ("1", "1*"):
        return expand_grid_2param(base)[0] if base.alpha2 is None else expand_grid_3param(base)[0]
    if cell == "best":
        cell = BEST_CONFIGS.get(base.dataset.lower())
        if cell is None:
            raise ValueError(f"no best configuration recorded for {base.dataset}")
    grid = expand_grid_2param(base) if cell.endswith("*") else expand_grid_3param(base)
    for cfg in grid:
        if cfg.label == cell:
            return cfg
    raise ValueError(f"unknown grid cell {cell!r}")


def _out_dir(args, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = Path(args.out) / f"{command}-{stamp}"
    n = 1
    while path.exists():
        n += 1
        path = Path(args.out) / f"{command}-{stamp}-{n}"
    path.mkdir(parents=True)
    return path


def _echo_config(out: Path, effective: dict) -> None:
    text = json.dumps(effective, indent=2, sort_keys=True)
    print("# effective configuration")
    print(text)
    (out / "effective_config.json").write_text(text + "\n")


def _load(args) -> SplitDataset:
    return load_split(args.data, args.schema, seed=args.split_seed)


def _result_row(dataset: str, label: str, run: dict) -> dict:
    return {"dataset": dataset, "config": label, **{k: run[k] for k in RESULT_COLUMNS[2:]}}


def write_results(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        out.writeheader()
        out.writerows(rows)


def read_results(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read results {path}: {exc}") from exc
    if rows and not set(RESULT_COLUMNS) <= set(rows[0]):
        raise IngestionError(f"{path} lacks result columns {sorted(set(RESULT_COLUMNS) - set(rows[0]))}")
    for i, row in enumerate(rows):
        try:
            row["test_ccr"] = float(row["test_ccr"])
            row["connections"] = int(row["connections"])
        except ValueError as exc:
            raise IngestionError(f"{path} row {i}: {exc}") from exc
    return rows


def _dataset_ref(split: SplitDataset, out: Path, inline: bool) -> dict:
    if inline:
        return {"inline": split.to_dict()}
    path = out / "split.json"
    split.save(path)
    return {"path": str(path.resolve())}


def _run_configs(configs: list[ExperimentConfig], split: SplitDataset, seeds: dict[str, list[int]],
                 args, out: Path) -> list[dict]:
    """Run every config's seeds locally or, with workers, one config per worker."""
    rows = []
    if not args.workers and not args.local:
        for cfg in configs:
            for seed in seeds[cfg.label]:
                result = run_ea(cfg, split, seed)
                log.info("config %s seed %d: test CCR %.4f", cfg.label, seed, result.test_ccr)
                rows.append(_result_row(split.name, cfg.label, result.summary()))
        return rows
    ref = _dataset_ref(split, out, inline=bool(args.workers))
    jobs = [JobSpec(f"{cfg.label}", cfg, list(enumerate(seeds[cfg.label])), ref) for cfg in configs]

    def run_batches(endpoints):
        for i in range(0, len(jobs), len(endpoints)):
            batch = jobs[i:i + len(endpoints)]
            outcome = dispatch(endpoints, batch)
            if not outcome.ok:
                raise ProtocolError("; ".join(f.message for f in outcome.failures))
            by_job = {r.job_id: r for r in outcome.results}
            for job in batch:
                rows.extend(_result_row(split.name, job.config.label, run) for run in by_job[job.job_id].runs)

    if args.workers:
        run_batches(args.workers)
    else:
        with LocalCluster(min(args.local, len(jobs))) as cluster:
            run_batches(cluster.endpoints)
    return rows


def cmd_train(args) -> int:
    split = _load(args)
    cfg = _select(_base(args, split.name), args.cell)
    out = _out_dir(args, "train")
    _echo_config(out, {"command": "train", "data": args.data, "schema": args.schema, "seed": args.seed,
                       "split_seed": args.split_seed, "config": cfg.to_dict()})
    result = run_ea(cfg, split, args.seed)
    write_results(out / "results.csv", [_result_row(split.name, cfg.label, result.summary())])
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[f.name for f in fields(result.trace[0])])
        writer.writeheader()
        writer.writerows(asdict(r) for r in result.trace)
    print(f"topology {result.topology}  train CCR {result.train_ccr:.4f}  test CCR {result.test_ccr:.4f}  "
          f"connections {result.connections}  ({result.seconds:.1f} s)")
    print(f"results written to {out}")
    return 0


def format_grid_summary(rows: list[dict], labels: list[str]) -> tuple[str, str | None]:
    """Table of mean / std / best / worst test CCR per config, best one marked."""
    stats = {}
    for label in labels:
        ccrs = [float(r["test_ccr"]) for r in rows if r["config"] == label]
        conns = [int(r["connections"]) for r in rows if r["config"] == label]
        if not ccrs:
            continue
        mean_conn = sum(conns) / len(conns)
        if len(ccrs) >= 2:
            stats[label] = (summarize(ccrs), mean_conn)
        else:
            stats[label] = (None, mean_conn, ccrs[0])
    if not stats:
        return "no results", None
    means = {k: (v[0].mean if v[0] else v[2]) for k, v in stats.items()}
    best = max(stats, key=lambda k: (means[k], -stats[k][1]))
    topo = {r["config"]: r["topology"] for r in rows}
    lines = [f"{'config':>8}  {'mean':>9}  {'std':>8}  {'best':>9}  {'worst':>9}  {'conns':>6}  topology"]
    for label, v in stats.items():
        mark = " *" if label == best else "  "
        if v[0] is None:
            c = v[2]
            lines.append(f"{label:>6}{mark}  {c:9.4f}  {'-':>8}  {c:9.4f}  {c:9.4f}  {v[1]:6.1f}  {topo[label]}")
        else:
            s = v[0]
            lines.append(f"{label:>6}{mark}  {s.mean:9.4f}  {s.std:8.4f}  {s.best:9.4f}  {s.worst:9.4f}  "
                         f"{v[1]:6.1f}  {topo[label]}")
    lines.append("* best mean test CCR (ties: fewer mean connections)")
    return "\n".join(lines), best


def cmd_grid(args) -> int:
    split = _load(args)
    base = _base(args, split.name)
    configs = expand_grid(base, args.mode)
    out = _out_dir(args, "grid")
    seeds = {c.label: [args.seed + GRID_SEED_STRIDE * i + r for r in range(args.runs)]
             for i, c in enumerate(configs)}
    _echo_config(out, {"command": "grid", "data": args.data, "schema": args.schema, "mode": args.mode,
                       "runs": args.runs, "seed": args.seed, "split_seed": args.split_seed,
                       "workers": args.workers, "local": args.local,
                       "configs": [c.to_dict() for c in configs]})
    rows = _run_configs(configs, split, seeds, args, out)
    write_results(out / "results.csv", rows)
    table, best = format_grid_summary(rows, [c.label for c in configs])
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    print(f"results written to {out}")
    return 0


def cmd_dispatch(args) -> int:
    """Split one config's runs over the workers (processing distribution)."""
    split = _load(args)
    cfg = _select(_base(args, split.name), args.cell)
    out = _out_dir(args, "dispatch")
    _echo_config(out, {"command": "dispatch", "data": args.data, "runs": args.runs, "seed": args.seed,
                       "workers": args.workers, "local": args.local, "config": cfg.to_dict()})

    def go(endpoints, inline):
        ref = _dataset_ref(split, out, inline)
        jobs = [JobSpec(f"w{a.worker}", cfg, a.runs, ref)
                for a in split_runs(args.runs, len(endpoints), args.seed) if a.runs]
        return dispatch(endpoints[:len(jobs)], jobs)

    if args.workers:
        outcome = go(args.workers, inline=True)
    else:
        with LocalCluster(args.local or 1) as cluster:
            outcome = go(cluster.endpoints, inline=False)
    write_results(out / "results.csv", [_result_row(split.name, cfg.label, r) for r in outcome.runs])
    print(f"{len(outcome.runs)} runs in {outcome.seconds:.2f} s on {len(outcome.results)} workers")
    for f in outcome.failures:
        print(f"FAILED job {f.job_id} on {f.endpoint}: {f.message}", file=sys.stderr)
    print(f"results written to {out}")
    return 0 if outcome.ok else EXIT_PROTOCOL


def cmd_bench(args) -> int:
    split = _load(args)
    cfg = _select(_base(args, split.name), args.cell or "best")
    out = _out_dir(args, "bench")
    p_list = sorted({1, *args.p})
    _echo_config(out, {"command": "bench", "data": args.data, "runs": args.runs, "p": p_list,
                       "seed": args.seed, "workers": args.workers, "local": args.local, "config": cfg.to_dict()})
    if args.workers:
        report = bench(cfg, _dataset_ref(split, out, True), args.runs, p_list, args.workers, args.seed)
    else:
        with LocalCluster(max(p_list)) as cluster:
            report = bench(cfg, _dataset_ref(split, out, False), args.runs, p_list, cluster.endpoints, args.seed)
    report.write(out)
    print(f"{'P':>3}  {'Tp (s)':>10}  {'speedup':>8}  {'efficiency':>10}")
    for r in report.rows:
        if r.failed:
            print(f"{r.workers:>3}  {'FAILED':>10}  {r.note}")
            continue
        print(f"{r.workers:>3}  {r.seconds:10.2f}  {truncate4(r.speedup):>8}  {truncate4(r.efficiency):>10}")
    print(f"optimal node count: {report.optimal_workers}")
    print(f"report written to {out}")
    return EXIT_PROTOCOL if report.partial else 0


def cmd_stats(args) -> int:
    base, best = read_results(args.base), read_results(args.best)
    if len(base) < 2 or len(best) < 2:
        raise ValueError("each results file needs at least two runs")
    report = compare_configs(base, best)
    print(report.narrative())
    if args.out:
        out = _out_dir(args, "stats")
        (out / "report.txt").write_text(report.narrative() + "\n")
        with open(out / "tests.csv", "w", newline="") as fh:
            rows = report.rows()
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"report written to {out}")
    return 0


def cmd_worker(args) -> int:
    host, port = parse_endpoint(args.listen)
    serve_worker(host, port, args.worker_id)
    return 0


def _endpoints(text: str) -> list[str]:
    eps = [e.strip() for e in text.split(",") if e.strip()]
    for e in eps:
        parse_endpoint(e)
    return eps


def _p_list(text: str) -> list[int]:
    values = [int(v) for v in text.split(",")]
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("worker counts must be positive")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evopunn", description="Evolutionary product-unit networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", required=True, help="CSV file, or a serialized split (.json)")
        p.add_argument("--schema", help="schema JSON for a CSV file")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--config", help="JSON file with EA parameter overrides")
        p.add_argument("--neu", type=_positive)
        p.add_argument("--gen", type=_non_negative)
        p.add_argument("--alpha2", type=float)
        p.add_argument("--population", type=_positive)
        p.add_argument("--seed", type=int, default=1, help="master seed")
        p.add_argument("--out", default="runs", help="parent of the run-stamped output directory")

    def worker_args(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--workers", type=_endpoints, help="comma-separated host:port list")
        group.add_argument("--local", type=_positive, help="spawn this many local worker processes")

    p = sub.add_parser("train", help="one evolutionary run")
    data_args(p)
    p.add_argument("--cell", help="grid cell label (e.g. 2 or 3*), or 'best'; default is the base config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run all 8 configurations of a grid")
    data_args(p)
    worker_args(p)
    p.add_argument("--mode", type=int, choices=(2, 3), default=3)
    p.add_argument("--runs", type=_positive, default=30, help="runs per configuration")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("dispatch", help="split one configuration's runs over workers")
    data_args(p)
    worker_args(p)
    p.add_argument("--cell")
    p.add_argument("--runs", type=_positive, default=32)
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("bench", help="speedup and efficiency over worker counts")
    data_args(p)
    worker_args(p)
    p.add_argument("--cell", help="grid cell label; default 'best'")
    p.add_argument("--runs", type=_positive, default=32)
    p.add_argument("--p", type=_p_list, default=[1, 2, 4, 8], help="comma-separated worker counts")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="compare a base and a best results file")
    p.add_argument("base")
    p.add_argument("best")
    p.add_argument("--out", help="write report files under this directory")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("worker", help="serve jobs")
    p.add_argument("--listen", default="127.0.0.1:7700", help="host:port (port 0 picks a free one)")
    p.add_argument("--worker-id")
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "local", None) is None and hasattr(args, "local") and args.command == "bench" \
            and not args.workers:
        args.local = max(args.p)
    try:
        return args.func(args)
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except (ProtocolError, ConnectionError, TimeoutError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValueError, KeyError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
