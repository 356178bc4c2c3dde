"""Independent fixed-point reference solver for small contention instances.

Solves the same fluid semantics as the engine (every task runs all stages
back to back, rates set by instantaneous load/residency) but by a completely
different route: Jacobi iteration on the vector of stage completion times,
with each sweep re-integrating every stage's rate through the occupancy
implied by the previous candidate timeline. No event queue, no dispatcher.

Instances are lists of stage tuples per task:
    (kind, work, cpu_share) or (kind, work, cpu_share, kv_tokens, blocking)
with kind one of "cpu", "gpu", "ext".
"""

from __future__ import annotations

MAX_SWEEPS = 20000
CONVERGED = 1e-13


def _rate_cpu(load: float, cores: int, kappa: float) -> float:
    if load <= cores:
        return 1.0
    x = load / cores
    return (1.0 / x) / (1.0 + kappa * (x - 1.0))


def _rate_gpu(res: int, b_half: float, kv_tokens: int, kv_cap_tokens: float,
              spill: float) -> float:
    rate = (1.0 + b_half) / (res + b_half)
    if kv_tokens > kv_cap_tokens:
        rate *= spill
    return rate


def _norm(stage):
    kind, work, share = stage[0], stage[1], stage[2]
    kv = stage[3] if len(stage) > 3 else 0
    blocking = stage[4] if len(stage) > 4 else False
    return kind, work, share, kv, blocking


def solve(
    tasks: list[list[tuple]],
    cores: int,
    kappa: float,
    b_half: float = 64.0,
    kv_cap_tokens: float = float("inf"),
    spill: float = 0.25,
) -> list[float]:
    """Completion time of every task under run-everything-at-once semantics.

    Returns the per-task end-to-end latency (last stage end; arrivals at 0).
    Raises if the fixed point does not converge.
    """
    stages = [[_norm(s) for s in task] for task in tasks]
    # candidate (start, end) per (task, stage): seed with uncontended times
    intervals = []
    for task in stages:
        t = 0.0
        row = []
        for _, work, _, _, _ in task:
            row.append((t, t + work))
            t += work
        intervals.append(row)

    for _ in range(MAX_SWEEPS):
        snapshot = [list(row) for row in intervals]
        new_intervals = []
        for ti, task in enumerate(stages):
            t_prev = 0.0
            row = []
            for si, stage in enumerate(task):
                start = t_prev
                end = _integrate(stage, start, ti, si, stages, snapshot,
                                 cores, kappa, b_half, kv_cap_tokens, spill)
                row.append((start, end))
                t_prev = end
            new_intervals.append(row)
        delta = max(
            abs(a - c) + abs(b - d)
            for old, new in zip(intervals, new_intervals)
            for (a, b), (c, d) in zip(old, new)
        )
        intervals = new_intervals
        if delta < CONVERGED:
            return [row[-1][1] for row in intervals]
    raise RuntimeError("oracle fixed point did not converge")


def _integrate(stage, start, ti, si, stages, snapshot, cores, kappa, b_half,
               kv_cap_tokens, spill) -> float:
    """March the stage from ``start`` until its work is consumed, using the
    snapshot timeline for every other stage (self is always running)."""
    kind, work, share, kv, blocking = stage
    points = sorted(
        {
            t
            for tj, row in enumerate(snapshot)
            for sj, (a, b) in enumerate(row)
            if (tj, sj) != (ti, si)
            for t in (a, b)
            if t > start
        }
    )
    points.append(float("inf"))
    remaining = work
    now = start
    for nxt in points:
        load = share if kind != "none" else 0.0
        res = 1 if kind == "gpu" else 0
        kv_tokens = kv if kind == "gpu" else 0
        for tj, row in enumerate(snapshot):
            for sj, (a, b) in enumerate(row):
                if (tj, sj) == (ti, si) or not (a <= now < b):
                    continue
                okind, _, oshare, okv, _ = stages[tj][sj]
                load += oshare
                if okind == "gpu":
                    res += 1
                    kv_tokens += okv
        if kind == "ext":
            rate = 1.0
        elif kind == "cpu":
            rate = _rate_cpu(load, cores, kappa)
        else:
            rate = _rate_gpu(res, b_half, kv_tokens, kv_cap_tokens, spill)
            if blocking:
                rate *= _rate_cpu(load, cores, kappa)
        span = nxt - now
        if remaining <= rate * span:
            return now + remaining / rate
        remaining -= rate * span
        now = nxt
    raise RuntimeError("unreachable: infinite final segment")
