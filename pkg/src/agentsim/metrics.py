"""Latency percentiles, throughput, KV peak, dynamic energy, and
policy-vs-policy speedup reports computed from traces.

Percentiles are nearest-rank (no interpolation): with the closed-loop
plateau structure that micro-batching produces, interpolation would smear
the exact plateau values. Dynamic energy integrates modeled power over the
exact piecewise-constant occupancy; busy cores are capped at the machine's
logical core count, and idle draws are excluded throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .contention import EnergyParams, GpuSaturationParams
from .engine import Trace
from .errors import ConfigurationError
from .workload import TaskClass


@dataclass(frozen=True)
class MetricsReport:
    p50: float
    p90: float
    p99: float
    mean: float
    makespan: float
    throughput: float
    kv_peak: int
    cpu_dyn_energy: float
    gpu_dyn_energy: float
    batch_size: int
    workload_fp: str
    policy: str
    per_class: dict[str, "MetricsReport"] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "policy": self.policy,
            "batch_size": self.batch_size,
            "p50_s": self.p50,
            "p90_s": self.p90,
            "p99_s": self.p99,
            "mean_s": self.mean,
            "makespan_s": self.makespan,
            "throughput_rps": self.throughput,
            "kv_peak_bytes": self.kv_peak,
            "cpu_dyn_energy_j": self.cpu_dyn_energy,
            "gpu_dyn_energy_j": self.gpu_dyn_energy,
            "workload_fp": self.workload_fp,
        }
        for cls in (TaskClass.CPU_HEAVY, TaskClass.LLM_HEAVY):
            sub = self.per_class.get(cls.value)
            row[f"{cls.value}_p50_s"] = sub.p50 if sub else ""
            row[f"{cls.value}_p99_s"] = sub.p99 if sub else ""
        return row


REPORT_COLUMNS = [
    "policy", "batch_size", "p50_s", "p90_s", "p99_s", "mean_s", "makespan_s",
    "throughput_rps", "kv_peak_bytes", "cpu_dyn_energy_j", "gpu_dyn_energy_j",
    "workload_fp", "cpu_heavy_p50_s", "cpu_heavy_p99_s",
    "llm_heavy_p50_s", "llm_heavy_p99_s",
]


@dataclass(frozen=True)
class SpeedupReport:
    """Per-metric baseline/candidate ratios."""

    ratios: dict[str, float]
    workload_fp: str


def percentile(latencies: list[float], p: float) -> float:
    """Nearest-rank percentile: sort ascending, take element ceil(p*n),
    1-based."""
    if not latencies:
        raise ConfigurationError("percentile of an empty list")
    if not 0.0 < p <= 1.0:
        raise ConfigurationError("p must be in (0, 1]")
    ordered = sorted(latencies)
    rank = math.ceil(p * len(ordered))
    return ordered[rank - 1]


def _integrate_steps(steps: list[tuple[float, float]], end: float, transform) -> float:
    total = 0.0
    for (t1, v), nxt in zip(steps, steps[1:] + [(end, None)]):
        t2 = nxt[0]
        if t2 > t1:
            total += transform(v) * (t2 - t1)
    return total


def summarize(
    trace: Trace,
    energy_params: EnergyParams,
    kv_params: GpuSaturationParams,
    class_labels: dict[int, TaskClass] | None = None,
) -> MetricsReport:
    """Metrics for one run. Empty traces yield an all-zero report."""
    latencies = trace.task_latencies()
    if not latencies:
        return MetricsReport(
            p50=0.0, p90=0.0, p99=0.0, mean=0.0, makespan=0.0, throughput=0.0,
            kv_peak=0, cpu_dyn_energy=0.0, gpu_dyn_energy=0.0, batch_size=0,
            workload_fp=trace.workload_fp, policy=trace.policy,
        )
    values = list(latencies.values())
    cores = trace.logical_cores
    cpu_energy = energy_params.cpu_dyn_w_per_core * _integrate_steps(
        [(t, v) for t, v in trace.cpu_load_steps], trace.makespan,
        lambda load: min(load, float(cores)),
    )
    gpu_energy = energy_params.gpu_dyn_w * _integrate_steps(
        [(t, float(v)) for t, v in trace.gpu_res_steps], trace.makespan,
        lambda res: 1.0 if res >= 1 else 0.0,
    )
    peak_tokens = max((v for _, v in trace.kv_token_steps), default=0)

    per_class: dict[str, MetricsReport] = {}
    if class_labels is not None and len(set(class_labels.values())) > 1:
        for cls in sorted({c for c in class_labels.values()}, key=lambda c: c.value):
            subset = [lat for tid, lat in latencies.items() if class_labels[tid] is cls]
            per_class[cls.value] = MetricsReport(
                p50=percentile(subset, 0.50),
                p90=percentile(subset, 0.90),
                p99=percentile(subset, 0.99),
                mean=sum(subset) / len(subset),
                makespan=max(subset),
                throughput=len(subset) / trace.makespan,
                kv_peak=0,
                cpu_dyn_energy=0.0,
                gpu_dyn_energy=0.0,
                batch_size=len(subset),
                workload_fp=trace.workload_fp,
                policy=trace.policy,
            )

    return MetricsReport(
        p50=percentile(values, 0.50),
        p90=percentile(values, 0.90),
        p99=percentile(values, 0.99),
        mean=sum(values) / len(values),
        makespan=trace.makespan,
        throughput=len(values) / trace.makespan,
        kv_peak=peak_tokens * kv_params.kv_bytes_per_token,
        cpu_dyn_energy=cpu_energy,
        gpu_dyn_energy=gpu_energy,
        batch_size=len(values),
        workload_fp=trace.workload_fp,
        policy=trace.policy,
        per_class=per_class,
    )


_COMPARED = (
    "p50", "p90", "p99", "mean", "makespan", "throughput",
    "kv_peak", "cpu_dyn_energy", "gpu_dyn_energy",
)


def compare(baseline: MetricsReport, candidate: MetricsReport) -> SpeedupReport:
    """Baseline/candidate ratio per metric; both reports must describe the
    same workload."""
    if baseline.workload_fp != candidate.workload_fp:
        raise ConfigurationError(
            "workload fingerprint mismatch: "
            f"{baseline.workload_fp} vs {candidate.workload_fp}"
        )
    ratios: dict[str, float] = {}
    for name in _COMPARED:
        b = getattr(baseline, name)
        c = getattr(candidate, name)
        if b and c:
            ratios[name] = b / c
    for cls, sub_b in baseline.per_class.items():
        sub_c = candidate.per_class.get(cls)
        if sub_c is not None:
            ratios[f"{cls}_p50"] = sub_b.p50 / sub_c.p50
            ratios[f"{cls}_p99"] = sub_b.p99 / sub_c.p99
    return SpeedupReport(ratios=ratios, workload_fp=baseline.workload_fp)
