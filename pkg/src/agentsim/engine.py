"""Deterministic rate-based discrete-event engine.

Virtual time advances from stage completion to stage completion; between
events every running stage progresses at a piecewise-constant rate derived
from the current CPU load (fair share plus oversubscription penalty), the
thread-pool occupancy, and the GPU residency (half-saturation curve plus KV
spill). Identical inputs produce byte-identical traces.
"""

from __future__ import annotations

import bisect
import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field

from . import __version__
from .contention import ContentionModels, cpu_rate, gpu_rate, thread_pool_rate
from .errors import ConfigurationError, InternalConsistencyError
from .schedulers import THREAD, Dispatcher, Policy
from .workload import StageKind, TaskInstance

TIME_EPS = 1e-12  # absolute epsilon for all virtual-time comparisons
TRACE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ResourcePool:
    """Machine description: logical CPU cores and a single GPU."""

    logical_cores: int = 96
    gpu_count: int = 1

    def __post_init__(self):
        if self.logical_cores < 1:
            raise ConfigurationError("logical_cores must be >= 1")
        if self.gpu_count != 1:
            raise ConfigurationError("exactly one GPU is modeled")


class EventKind(enum.Enum):
    STAGE_COMPLETE = "stage_complete"
    DISPATCH_WAKE = "dispatch_wake"


@dataclass(frozen=True, order=True)
class Event:
    """Engine event, totally ordered by (time, task id, stage index)."""

    time: float
    task_id: int
    stage_idx: int
    kind: EventKind = field(compare=False, default=EventKind.STAGE_COMPLETE)


@dataclass(frozen=True)
class StageRecord:
    task_id: int
    stage_idx: int
    kind: str
    mode: str
    host_blocking: bool
    cpu_share: float
    kv_tokens: int
    work: float
    start: float
    end: float
    label: str


@dataclass
class Trace:
    """Complete record of one simulation run.

    Besides per-(task, stage) intervals it stores the resource-occupancy
    step functions (value holds from its timestamp until the next entry) and
    the fingerprints needed to pair the trace with its config.
    """

    workload_fp: str
    policy: str
    models_fp: str
    seed: int
    logical_cores: int
    pool_eff: int | None
    records: list[StageRecord]
    cpu_load_steps: list[tuple[float, float]]
    gpu_res_steps: list[tuple[float, int]]
    kv_token_steps: list[tuple[float, int]]
    pool_n_steps: list[tuple[float, int]]
    makespan: float
    schema_version: int = TRACE_SCHEMA_VERSION
    tool_version: str = __version__

    def task_latencies(self) -> dict[int, float]:
        """End-to-end latency per task (arrivals are at t=0)."""
        ends: dict[int, float] = {}
        for r in self.records:
            ends[r.task_id] = max(ends.get(r.task_id, 0.0), r.end)
        return ends

    def core_content(self) -> tuple:
        """Trace body without identity metadata, for equivalence checks."""
        return (
            tuple(self.records),
            tuple(self.cpu_load_steps),
            tuple(self.gpu_res_steps),
            tuple(self.kv_token_steps),
            self.makespan,
        )


def fingerprint(data) -> str:
    """Stable 16-hex digest of a JSON-serializable structure."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def workload_fingerprint(tasks: list[TaskInstance]) -> str:
    return fingerprint(
        [
            (
                t.id,
                t.pipeline.name,
                [
                    (s.kind.value, s.cpu_share, s.kv_tokens, s.host_blocking)
                    for s in t.pipeline.stages
                ],
                list(t.stage_work),
            )
            for t in tasks
        ]
    )


def models_fingerprint(models: ContentionModels) -> str:
    c, g, e = models.cpu, models.gpu, models.energy
    return fingerprint(
        [
            c.logical_cores, c.oversub_kappa, c.gil_serial_fraction,
            g.b_half, g.kv_bytes_per_token, g.kv_capacity, g.spill_rate_factor,
            e.cpu_dyn_w_per_core, e.gpu_dyn_w,
        ]
    )


@dataclass
class _Running:
    task: TaskInstance
    stage_idx: int
    mode: str
    remaining: float
    start: float


def _occupancy(running: list[_Running], pool_eff: int | None, kv_bytes_per_token: int):
    """(cpu_load, gpu_residency, kv_bytes, kv_tokens, n_pool_threads) for the
    current running set. Thread-mode stages draw CPU through the shared pool,
    so their aggregate share is capped at the pool width."""
    process_load = 0.0
    thread_raw = 0.0
    gpu_res = 0
    kv_tokens = 0
    n_pool = 0
    for r in running:
        stage = r.task.pipeline.stages[r.stage_idx]
        if r.mode == THREAD:
            thread_raw += stage.cpu_share
            if stage.kind is StageKind.CPU_TOOL:
                n_pool += 1
        else:
            process_load += stage.cpu_share
        if stage.kind is StageKind.GPU_INFERENCE:
            gpu_res += 1
            kv_tokens += stage.kv_tokens
    thread_load = min(thread_raw, float(pool_eff)) if pool_eff is not None else thread_raw
    return process_load + thread_load, gpu_res, kv_tokens * kv_bytes_per_token, kv_tokens, n_pool


def _stage_rate(
    stage, mode: str, load: float, gpu_res: int, kv_bytes: int, n_pool: int,
    pool_eff: int | None, models: ContentionModels,
) -> float:
    """Execution rate of one running stage given the current occupancy."""
    if stage.kind is StageKind.EXTERNAL_API:
        return 1.0
    if stage.kind is StageKind.CPU_TOOL:
        base = cpu_rate(load, models.cpu)
        if mode == THREAD:
            return thread_pool_rate(n_pool, pool_eff, models.cpu) * base
        return base
    # GPU inference: saturation curve, KV spill, and (for synchronous host
    # clients) the host CPU availability.
    rate = gpu_rate(gpu_res, models.gpu, kv_bytes)
    if stage.host_blocking:
        rate *= cpu_rate(load, models.cpu)
    return rate


def simulate(
    tasks: list[TaskInstance],
    policy: Policy,
    resources: ResourcePool,
    models: ContentionModels,
    seed: int = 0,
) -> Trace:
    """Run the closed-loop workload under the given policy to completion.

    Pure function: the trace depends only on the arguments. Ties are broken
    by (time, task id, stage index) so simultaneous completions are
    processed in a fixed order.
    """
    if not tasks:
        return Trace(
            workload_fp=workload_fingerprint(tasks),
            policy=policy.canonical(),
            models_fp=models_fingerprint(models),
            seed=seed,
            logical_cores=resources.logical_cores,
            pool_eff=None,
            records=[], cpu_load_steps=[], gpu_res_steps=[],
            kv_token_steps=[], pool_n_steps=[], makespan=0.0,
        )

    # The machine size lives in resources; rebind the contention params to it.
    models = dataclasses.replace(
        models, cpu=dataclasses.replace(models.cpu, logical_cores=resources.logical_cores)
    )
    dispatcher = Dispatcher(policy, tasks)
    pool_eff = None
    if dispatcher.pool_size is not None:
        pool_eff = min(dispatcher.pool_size, resources.logical_cores)

    by_id = {t.id: t for t in tasks}
    running: dict[int, _Running] = {}
    records: list[StageRecord] = []
    cpu_steps: list[tuple[float, float]] = []
    gpu_steps: list[tuple[float, int]] = []
    kv_steps: list[tuple[float, int]] = []
    pool_steps: list[tuple[float, int]] = []
    now = 0.0
    remaining_stages = sum(len(t.pipeline.stages) for t in tasks)
    max_events = 100 * remaining_stages + 1000

    def start_stage(task_id: int, stage_idx: int):
        task = by_id[task_id]
        running[task_id] = _Running(
            task=task,
            stage_idx=stage_idx,
            mode=dispatcher.mode_of(task_id),
            remaining=task.stage_work[stage_idx],
            start=now,
        )

    def record_occupancy():
        load, gpu_res, _, kv_tokens, n_pool = _occupancy(
            _sorted_running(), pool_eff, models.gpu.kv_bytes_per_token
        )
        for steps, value in (
            (cpu_steps, load), (gpu_steps, gpu_res),
            (kv_steps, kv_tokens), (pool_steps, n_pool),
        ):
            if not steps or steps[-1][1] != value:
                steps.append((now, value))

    def _sorted_running() -> list[_Running]:
        return [running[tid] for tid in sorted(running)]

    for tid in dispatcher.initial_starts():
        start_stage(tid, 0)
    record_occupancy()

    events = 0
    while running:
        events += 1
        if events > max_events:
            raise InternalConsistencyError("event budget exhausted; engine stuck")

        active = _sorted_running()
        load, gpu_res, kv_bytes, _, n_pool = _occupancy(
            active, pool_eff, models.gpu.kv_bytes_per_token
        )
        rates = {
            r.task.id: _stage_rate(
                r.task.pipeline.stages[r.stage_idx], r.mode,
                load, gpu_res, kv_bytes, n_pool, pool_eff, models,
            )
            for r in active
        }
        dt = min(r.remaining / rates[r.task.id] for r in active)

        completions: list[Event] = []
        for r in active:
            need = r.remaining / rates[r.task.id]
            if need <= dt + TIME_EPS:
                completions.append(Event(now + dt, r.task.id, r.stage_idx))
            else:
                r.remaining -= rates[r.task.id] * dt
        now += dt

        released: list[int] = []
        follow_ups: list[tuple[int, int]] = []
        for ev in sorted(completions):
            r = running.pop(ev.task_id)
            stage = r.task.pipeline.stages[r.stage_idx]
            records.append(
                StageRecord(
                    task_id=ev.task_id, stage_idx=ev.stage_idx,
                    kind=stage.kind.value, mode=r.mode,
                    host_blocking=stage.host_blocking,
                    cpu_share=stage.cpu_share, kv_tokens=stage.kv_tokens,
                    work=r.task.stage_work[r.stage_idx],
                    start=r.start, end=now, label=stage.label,
                )
            )
            released.extend(dispatcher.on_stage_complete(ev.task_id, ev.stage_idx))
            if ev.stage_idx + 1 < len(r.task.pipeline.stages):
                follow_ups.append((ev.task_id, ev.stage_idx + 1))

        for task_id, stage_idx in sorted(follow_ups):
            start_stage(task_id, stage_idx)
        for task_id in sorted(set(released)):
            start_stage(task_id, 0)
        record_occupancy()

    records.sort(key=lambda r: (r.task_id, r.stage_idx))
    n_done = len(records)
    if n_done != remaining_stages:
        raise InternalConsistencyError(
            f"run ended with {remaining_stages - n_done} unfinished stages"
        )
    return Trace(
        workload_fp=workload_fingerprint(tasks),
        policy=policy.canonical(),
        models_fp=models_fingerprint(models),
        seed=seed,
        logical_cores=resources.logical_cores,
        pool_eff=pool_eff,
        records=records,
        cpu_load_steps=cpu_steps,
        gpu_res_steps=gpu_steps,
        kv_token_steps=kv_steps,
        pool_n_steps=pool_steps,
        makespan=now,
    )


# -- trace serialization ----------------------------------------------------


def serialize_trace(trace: Trace) -> str:
    """Line-oriented text form with bit-exact floats (repr round-trip)."""
    lines = [
        "# agentsim trace",
        f"meta schema_version {trace.schema_version}",
        f"meta tool_version {trace.tool_version}",
        f"meta workload_fp {trace.workload_fp}",
        f"meta policy {trace.policy}",
        f"meta models_fp {trace.models_fp}",
        f"meta seed {trace.seed}",
        f"meta logical_cores {trace.logical_cores}",
        f"meta pool_eff {trace.pool_eff if trace.pool_eff is not None else 'none'}",
        f"meta makespan {trace.makespan!r}",
    ]
    for r in trace.records:
        lines.append(
            "stage "
            f"{r.task_id} {r.stage_idx} {r.kind} {r.mode} {int(r.host_blocking)} "
            f"{r.cpu_share!r} {r.kv_tokens} {r.work!r} {r.start!r} {r.end!r} {r.label}"
        )
    for name, steps in (
        ("cpuload", trace.cpu_load_steps),
        ("gpures", trace.gpu_res_steps),
        ("kvtokens", trace.kv_token_steps),
        ("pooln", trace.pool_n_steps),
    ):
        for t, v in steps:
            lines.append(f"{name} {t!r} {v!r}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> Trace:
    meta: dict[str, str] = {}
    records: list[StageRecord] = []
    steps: dict[str, list] = {"cpuload": [], "gpures": [], "kvtokens": [], "pooln": []}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split(" ")
        tag = parts[0]
        if tag == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif tag == "stage":
            records.append(
                StageRecord(
                    task_id=int(parts[1]), stage_idx=int(parts[2]),
                    kind=parts[3], mode=parts[4], host_blocking=bool(int(parts[5])),
                    cpu_share=float(parts[6]), kv_tokens=int(parts[7]),
                    work=float(parts[8]), start=float(parts[9]), end=float(parts[10]),
                    label=" ".join(parts[11:]),
                )
            )
        elif tag in steps:
            t = float(parts[1])
            v = float(parts[2]) if tag == "cpuload" else int(parts[2])
            steps[tag].append((t, v))
        else:
            raise ConfigurationError(f"unknown trace line tag {tag!r}")
    pool_eff = None if meta["pool_eff"] == "none" else int(meta["pool_eff"])
    return Trace(
        workload_fp=meta["workload_fp"],
        policy=meta["policy"],
        models_fp=meta["models_fp"],
        seed=int(meta["seed"]),
        logical_cores=int(meta["logical_cores"]),
        pool_eff=pool_eff,
        records=records,
        cpu_load_steps=steps["cpuload"],
        gpu_res_steps=steps["gpures"],
        kv_token_steps=steps["kvtokens"],
        pool_n_steps=steps["pooln"],
        makespan=float(meta["makespan"]),
        schema_version=int(meta["schema_version"]),
        tool_version=meta["tool_version"],
    )


# -- replay / audit ----------------------------------------------------------


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    detail: str = ""


def _interval_occupancy(trace: Trace):
    """Event times plus the occupancy tuple holding from each time to the
    next, recomputed from the stage intervals alone. O(times * records)."""
    times = sorted({r.start for r in trace.records} | {r.end for r in trace.records})
    occupancy = []
    for t in times:
        active = [r for r in trace.records if r.start <= t < r.end]
        occupancy.append(_occupancy_from_records(active, trace.pool_eff))
    return times, occupancy


def _steps_from_occupancy(times, occupancy):
    out = {"cpuload": [], "gpures": [], "kvtokens": [], "pooln": []}
    for t, (load, gpu_res, kv_tokens, n_pool) in zip(times, occupancy):
        for name, value in (
            ("cpuload", load), ("gpures", gpu_res),
            ("kvtokens", kv_tokens), ("pooln", n_pool),
        ):
            series = out[name]
            if not series or series[-1][1] != value:
                series.append((t, value))
    return out


def _occupancy_from_records(active: list[StageRecord], pool_eff: int | None):
    process_load = 0.0
    thread_raw = 0.0
    gpu_res = 0
    kv_tokens = 0
    n_pool = 0
    for r in sorted(active, key=lambda r: r.task_id):
        if r.mode == THREAD:
            thread_raw += r.cpu_share
            if r.kind == StageKind.CPU_TOOL.value:
                n_pool += 1
        else:
            process_load += r.cpu_share
        if r.kind == StageKind.GPU_INFERENCE.value:
            gpu_res += 1
            kv_tokens += r.kv_tokens
    thread_load = min(thread_raw, float(pool_eff)) if pool_eff is not None else thread_raw
    return process_load + thread_load, gpu_res, kv_tokens, n_pool


def _record_rate(
    r: StageRecord, load: float, gpu_res: int, kv_bytes: int, n_pool: int,
    pool_eff: int | None, models: ContentionModels,
) -> float:
    if r.kind == StageKind.EXTERNAL_API.value:
        return 1.0
    if r.kind == StageKind.CPU_TOOL.value:
        base = cpu_rate(load, models.cpu)
        if r.mode == THREAD:
            return thread_pool_rate(n_pool, pool_eff, models.cpu) * base
        return base
    rate = gpu_rate(gpu_res, models.gpu, kv_bytes)
    if r.host_blocking:
        rate *= cpu_rate(load, models.cpu)
    return rate


def replay_check(trace: Trace, models: ContentionModels, rel_tol: float = 1e-9) -> ReplayReport:
    """Work-conservation audit: integrating each stage's recomputed rate over
    its recorded interval must recover the stage's work to within ``rel_tol``
    relative error, and the recorded occupancy step functions must match the
    interval set. Returns a failure naming the first offending stage."""
    models = dataclasses.replace(
        models, cpu=dataclasses.replace(models.cpu, logical_cores=trace.logical_cores)
    )
    times, occupancy = _interval_occupancy(trace)
    for rec in sorted(trace.records, key=lambda r: (r.task_id, r.stage_idx)):
        lo = bisect.bisect_left(times, rec.start)
        done = 0.0
        for i in range(lo, len(times) - 1):
            t1, t2 = times[i], times[i + 1]
            if t1 >= rec.end:
                break
            load, gpu_res, kv_tokens, n_pool = occupancy[i]
            rate = _record_rate(
                rec, load, gpu_res, kv_tokens * models.gpu.kv_bytes_per_token,
                n_pool, trace.pool_eff, models,
            )
            done += rate * (t2 - t1)
        if abs(done - rec.work) > rel_tol * max(rec.work, 1e-30):
            return ReplayReport(
                False,
                f"work mismatch at task {rec.task_id} stage {rec.stage_idx}: "
                f"integrated {done!r}, expected {rec.work!r}",
            )

    recomputed = _steps_from_occupancy(times, occupancy)
    recorded = {
        "cpuload": trace.cpu_load_steps,
        "gpures": trace.gpu_res_steps,
        "kvtokens": trace.kv_token_steps,
        "pooln": trace.pool_n_steps,
    }
    for name in recomputed:
        got = [(t, float(v)) for t, v in recorded[name]]
        want = [(t, float(v)) for t, v in recomputed[name]]
        if len(got) != len(want) or any(
            abs(a - c) > TIME_EPS or abs(b - d) > 1e-9
            for (a, b), (c, d) in zip(got, want)
        ):
            return ReplayReport(False, f"occupancy mismatch in {name}")
    return ReplayReport(True)
