"""Latency benchmark harness.

Reproduces the measurement methodology the architecture is evaluated
with: for each cluster configuration, drive the complete package workflow
(six interactive operations plus one consensus commit) for N iterations
on a fresh simulated cluster, then aggregate per-endpoint latencies and
the interactive-vs-consensus speedup. All timing is virtual, so a report
is a pure function of (config, seed, iterations).
"""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
from dataclasses import dataclass, field

from .cluster import WORKFLOW_ENDPOINTS, LatencySample, WorkflowError, run_workflow
from .model import ClusterConfig, LatencyModel, MS

L2_ENDPOINTS = WORKFLOW_ENDPOINTS[:-1]
COMMIT_ENDPOINT = WORKFLOW_ENDPOINTS[-1]

CSV_COLUMNS = ("config", "endpoint", "mean_ms", "median_ms", "p95_ms", "n")


def _ms(micros: float) -> float:
    return round(micros / MS, 3)


def percentile(values, fraction: float) -> float:
    """Nearest-rank percentile; deterministic for any sample count."""
    ordered = sorted(values)
    rank = max(1, -(-int(fraction * 100) * len(ordered) // 100))
    return ordered[rank - 1]


@dataclass
class EndpointStats:
    endpoint: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    std_ms: float
    n: int

    def to_doc(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "std_ms": self.std_ms,
            "n": self.n,
        }

    @staticmethod
    def from_doc(doc: dict) -> "EndpointStats":
        return EndpointStats(**doc)

    @staticmethod
    def from_samples(endpoint: str, latencies) -> "EndpointStats":
        return EndpointStats(
            endpoint=endpoint,
            mean_ms=_ms(statistics.fmean(latencies)),
            median_ms=_ms(statistics.median(latencies)),
            p95_ms=_ms(percentile(latencies, 0.95)),
            std_ms=_ms(statistics.pstdev(latencies)),
            n=len(latencies),
        )


@dataclass
class LatencyReport:
    config_label: str
    iterations: int
    seed: int
    endpoints: list[EndpointStats]
    total_workflow_ms: float
    l2_mean_ms: float
    l1_mean_ms: float
    speedup: float
    trace_digest: str
    samples: list[LatencySample] = field(default_factory=list, repr=False)

    def endpoint(self, name: str) -> EndpointStats:
        for stats in self.endpoints:
            if stats.endpoint == name:
                return stats
        raise KeyError(name)

    def to_doc(self) -> dict:
        return {
            "config": self.config_label,
            "iterations": self.iterations,
            "seed": self.seed,
            "endpoints": [e.to_doc() for e in self.endpoints],
            "total_workflow_ms": self.total_workflow_ms,
            "l2_mean_ms": self.l2_mean_ms,
            "l1_mean_ms": self.l1_mean_ms,
            "speedup": self.speedup,
            "trace_digest": self.trace_digest,
        }

    @staticmethod
    def from_doc(doc: dict) -> "LatencyReport":
        return LatencyReport(
            config_label=doc["config"],
            iterations=doc["iterations"],
            seed=doc["seed"],
            endpoints=[EndpointStats.from_doc(d) for d in doc["endpoints"]],
            total_workflow_ms=doc["total_workflow_ms"],
            l2_mean_ms=doc["l2_mean_ms"],
            l1_mean_ms=doc["l1_mean_ms"],
            speedup=doc["speedup"],
            trace_digest=doc["trace_digest"],
        )


def aggregate(samples: list[LatencySample], config_label: str, iterations: int,
              seed: int, trace_digest: str) -> LatencyReport:
    by_endpoint: dict[str, list[int]] = {name: [] for name in WORKFLOW_ENDPOINTS}
    by_iteration: dict[int, int] = {}
    for sample in samples:
        by_endpoint[sample.endpoint].append(sample.latency)
        by_iteration[sample.iteration] = by_iteration.get(sample.iteration, 0) + sample.latency
    endpoints = [
        EndpointStats.from_samples(name, values)
        for name, values in by_endpoint.items()
        if values
    ]
    l2_latencies = [s.latency for s in samples if s.endpoint in L2_ENDPOINTS]
    l1_latencies = [s.latency for s in samples if s.endpoint == COMMIT_ENDPOINT]
    l2_mean = statistics.fmean(l2_latencies)
    l1_mean = statistics.fmean(l1_latencies)
    return LatencyReport(
        config_label=config_label,
        iterations=iterations,
        seed=seed,
        endpoints=endpoints,
        total_workflow_ms=_ms(statistics.fmean(by_iteration.values())),
        l2_mean_ms=_ms(l2_mean),
        l1_mean_ms=_ms(l1_mean),
        speedup=round(l1_mean / l2_mean, 3),
        trace_digest=trace_digest,
        samples=samples,
    )


def run_config(config: ClusterConfig, iterations: int = 100,
               trace_path: str | None = None) -> LatencyReport:
    """Benchmark one cluster configuration on a fresh simulated cluster."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    cluster, client = run_workflow(config, iterations=iterations)
    if client.failures or not client.done:
        raise WorkflowError(
            f"workflow failed on config {config.label}: {client.failures[:1]}",
            trace=cluster.net.trace,
        )
    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write(cluster.net.trace.to_jsonl())
    return aggregate(
        client.samples,
        config_label=config.label,
        iterations=iterations,
        seed=config.seed,
        trace_digest=cluster.net.trace.digest(),
    )


def run_sweep(
    l1_sizes,
    l2_sizes,
    iterations: int = 100,
    seed: int = 0,
    model: LatencyModel | None = None,
    trace_dir: str | None = None,
) -> list[LatencyReport]:
    """Benchmark every (n_l1, n_l2) combination; per-config seeds derive
    from the sweep seed plus the configuration index."""
    model = model or LatencyModel()
    reports = []
    index = 0
    for n_l2 in l2_sizes:
        for n_l1 in l1_sizes:
            config = ClusterConfig(n_l1=n_l1, n_l2=n_l2, seed=seed + index, latency_model=model)
            trace_path = None
            if trace_dir:
                os.makedirs(trace_dir, exist_ok=True)
                trace_path = os.path.join(trace_dir, f"trace-{config.label}.jsonl")
            reports.append(run_config(config, iterations=iterations, trace_path=trace_path))
            index += 1
    return reports


class ComparisonError(ValueError):
    pass


def compare(report_a: LatencyReport, report_b: LatencyReport) -> dict:
    """Side-by-side endpoint means plus the speedup advantage delta."""
    if report_a.iterations != report_b.iterations:
        raise ComparisonError("reports have different iteration counts")
    names_a = [e.endpoint for e in report_a.endpoints]
    names_b = [e.endpoint for e in report_b.endpoints]
    if names_a != names_b:
        raise ComparisonError("reports cover different endpoints")
    rows = []
    for stats_a in report_a.endpoints:
        stats_b = report_b.endpoint(stats_a.endpoint)
        rows.append({
            "endpoint": stats_a.endpoint,
            "mean_ms_a": stats_a.mean_ms,
            "mean_ms_b": stats_b.mean_ms,
            "ratio": round(stats_a.mean_ms / stats_b.mean_ms, 3) if stats_b.mean_ms else 1.0,
        })
    return {
        "config_a": report_a.config_label,
        "config_b": report_b.config_label,
        "rows": rows,
        "speedup_a": report_a.speedup,
        "speedup_b": report_b.speedup,
        "advantage_delta": round(report_a.speedup - report_b.speedup, 3),
    }


# -- output ------------------------------------------------------------------


def to_csv(reports: list[LatencyReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        for stats in report.endpoints:
            writer.writerow([
                report.config_label,
                stats.endpoint,
                f"{stats.mean_ms:.3f}",
                f"{stats.median_ms:.3f}",
                f"{stats.p95_ms:.3f}",
                stats.n,
            ])
    return out.getvalue()


def to_json(reports: list[LatencyReport]) -> str:
    return json.dumps([r.to_doc() for r in reports], indent=2, sort_keys=True) + "\n"


def to_table(reports: list[LatencyReport]) -> str:
    lines = []
    for report in reports:
        lines.append(f"config {report.config_label}  (seed {report.seed}, {report.iterations} iterations)")
        lines.append(f"  {'endpoint':<18} {'mean':>9} {'median':>9} {'p95':>9} {'std':>9} {'n':>5}")
        for stats in report.endpoints:
            lines.append(
                f"  {stats.endpoint:<18} {stats.mean_ms:>9.3f} {stats.median_ms:>9.3f} "
                f"{stats.p95_ms:>9.3f} {stats.std_ms:>9.3f} {stats.n:>5}"
            )
        lines.append(
            f"  total workflow {report.total_workflow_ms:.3f} ms | interactive mean "
            f"{report.l2_mean_ms:.3f} ms | commit mean {report.l1_mean_ms:.3f} ms | "
            f"speedup {report.speedup:.3f}x"
        )
        lines.append("")
    return "\n".join(lines)


def emit(reports: list[LatencyReport], fmt: str = "table", out_path: str | None = None) -> str:
    if fmt == "csv":
        rendered = to_csv(reports)
    elif fmt == "json":
        rendered = to_json(reports)
    elif fmt == "table":
        rendered = to_table(reports)
    else:
        raise ValueError(f"unknown output format: {fmt}")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(rendered)
    return rendered
