"""Scheduling policies: sequential, thread/process parallelism, micro-batched
CGAM (with and without CPU/GPU phase overlap), and the mixed-workload MAWS
split, plus the combined MAWS+CGAM.

A Policy is an immutable description; the engine instantiates a Dispatcher
holding the per-run mutable state. Dispatchers only gate when a task's next
stage may start; they never preempt, and pipeline order within a task is
enforced by the engine.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError, InternalConsistencyError
from .workload import TaskClass, TaskInstance, classify_task

POLICY_NAMES = (
    "sequential",
    "multithreading",
    "multiprocessing",
    "cgam",
    "cgam_overlap",
    "maws",
    "maws_cgam",
)

PROCESS = "process"
THREAD = "thread"


@dataclass(frozen=True)
class Policy:
    """Scheduler variant plus its parameters.

    ``exec_mode`` selects the parallelization used inside CGAM micro-batches
    so a thread-parallel workload keeps thread semantics when capped (the
    retrieval-bound case); it defaults to process semantics.
    """

    name: str
    b_cap: int | None = None
    pool_size: int | None = None
    theta: float = 0.5
    thread_pool_cores: int = 8
    exec_mode: str = PROCESS

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ConfigurationError(
                f"unknown policy {self.name!r}; expected one of {', '.join(POLICY_NAMES)}"
            )
        if self.name in ("cgam", "cgam_overlap", "maws_cgam"):
            if self.b_cap is None or self.b_cap < 1:
                raise ConfigurationError(f"policy {self.name!r} requires b_cap >= 1")
        if self.name == "multithreading" and (self.pool_size is None or self.pool_size < 1):
            raise ConfigurationError("multithreading requires pool_size >= 1")
        if self.name in ("cgam", "cgam_overlap") and self.exec_mode == THREAD:
            if self.pool_size is None or self.pool_size < 1:
                raise ConfigurationError(
                    f"{self.name} with thread execution requires pool_size >= 1"
                )
        if self.name in ("maws", "maws_cgam"):
            if not 0.0 < self.theta < 1.0:
                raise ConfigurationError("theta must be in (0, 1)")
            if self.thread_pool_cores < 1:
                raise ConfigurationError("thread_pool_cores must be >= 1")
        if self.exec_mode not in (PROCESS, THREAD):
            raise ConfigurationError("exec_mode must be 'process' or 'thread'")

    def canonical(self) -> str:
        parts = [self.name]
        if self.b_cap is not None:
            parts.append(f"b_cap={self.b_cap}")
        if self.pool_size is not None:
            parts.append(f"pool_size={self.pool_size}")
        if self.name in ("maws", "maws_cgam"):
            parts.append(f"theta={self.theta!r}")
            parts.append(f"thread_pool_cores={self.thread_pool_cores}")
        if self.name in ("cgam", "cgam_overlap") and self.exec_mode != PROCESS:
            parts.append(f"exec={self.exec_mode}")
        return " ".join(parts)


@dataclass(frozen=True)
class MicroBatchPlan:
    """FCFS partition of a task-id list into contiguous chunks of at most
    b_cap; all but the last chunk are exactly b_cap wide."""

    batches: tuple[tuple[int, ...], ...]

    def batch_of(self) -> dict[int, int]:
        return {tid: k for k, batch in enumerate(self.batches) for tid in batch}


def plan_microbatches(task_ids: list[int], b_cap: int) -> MicroBatchPlan:
    """Chunk task ids in arrival order into ceil(n / b_cap) micro-batches."""
    if b_cap < 1:
        raise ConfigurationError("b_cap must be >= 1")
    batches = tuple(
        tuple(task_ids[i : i + b_cap]) for i in range(0, len(task_ids), b_cap)
    )
    return MicroBatchPlan(batches=batches)


def maws_partition(
    tasks: list[TaskInstance], theta: float = 0.5
) -> tuple[list[int], list[int]]:
    """Split task ids into (process_set, thread_set) by pipeline class.

    CPU-heavy tasks each get a dedicated process worker; LLM-heavy tasks are
    multiplexed over a small shared thread pool so their host-side draw stops
    crowding the CPU-heavy workers.
    """
    process_set, thread_set = [], []
    for t in tasks:
        if classify_task(t.pipeline, theta) is TaskClass.CPU_HEAVY:
            process_set.append(t.id)
        else:
            thread_set.append(t.id)
    return process_set, thread_set


class Dispatcher:
    """Per-run dispatch state for one policy over one fixed task set.

    The engine calls ``initial_starts`` once at t=0 and ``on_stage_complete``
    for every completion; both return the task ids whose *next* stage may
    start now. ``mode_of`` reports process vs thread execution per task, and
    ``pool_size`` the thread-pool width (None when no thread set exists).
    """

    def __init__(self, policy: Policy, tasks: list[TaskInstance]):
        self.policy = policy
        self.tasks = {t.id: t for t in tasks}
        self._n_stages = {t.id: len(t.pipeline.stages) for t in tasks}
        self._done_stages = {t.id: 0 for t in tasks}
        self._finished: set[int] = set()
        ids = [t.id for t in tasks]

        name = policy.name
        self._modes = {tid: PROCESS for tid in ids}
        self._pool: int | None = None
        self._plan: MicroBatchPlan | None = None
        self._gated: list[int] = []  # ids gated on micro-batch release, FCFS

        if name == "multithreading":
            self._modes = {tid: THREAD for tid in ids}
            self._pool = policy.pool_size
        elif name in ("cgam", "cgam_overlap"):
            if policy.exec_mode == THREAD:
                self._modes = {tid: THREAD for tid in ids}
                self._pool = policy.pool_size
            self._plan = plan_microbatches(ids, policy.b_cap)
            self._batch_of = self._plan.batch_of()
            self._gated = list(ids)
        elif name in ("maws", "maws_cgam"):
            process_set, thread_set = maws_partition(tasks, policy.theta)
            self._modes = {tid: PROCESS for tid in process_set}
            self._modes.update({tid: THREAD for tid in thread_set})
            self._pool = policy.thread_pool_cores if thread_set else None
            if name == "maws_cgam":
                self._plan = plan_microbatches(process_set, policy.b_cap)
                self._batch_of = self._plan.batch_of()
                self._gated = list(process_set)
        elif name == "sequential":
            self._queue = sorted(ids)

    # -- introspection used by the engine ---------------------------------

    def mode_of(self, task_id: int) -> str:
        return self._modes[task_id]

    @property
    def pool_size(self) -> int | None:
        return self._pool

    def plan(self) -> MicroBatchPlan | None:
        return self._plan

    # -- dispatch ----------------------------------------------------------

    def initial_starts(self) -> list[int]:
        name = self.policy.name
        if name == "sequential":
            return self._queue[:1]
        if self._plan is not None:
            released = self._release_batches()
            free = [tid for tid in self.tasks if tid not in self._batch_of]
            return sorted(released + free)
        return sorted(self.tasks)

    def on_stage_complete(self, task_id: int, stage_idx: int) -> list[int]:
        """Record a completion; return ids whose first stage is released now.

        The engine itself continues a task's own pipeline; only cross-task
        gates (sequential turn-taking, micro-batch barriers) emit ids here.
        """
        if task_id not in self.tasks:
            raise InternalConsistencyError(f"dispatch for unknown task {task_id}")
        if stage_idx != self._done_stages[task_id]:
            raise InternalConsistencyError(
                f"task {task_id} completed stage {stage_idx} out of order"
            )
        self._done_stages[task_id] += 1
        if self._done_stages[task_id] == self._n_stages[task_id]:
            self._finished.add(task_id)

        name = self.policy.name
        if name == "sequential":
            if task_id in self._finished:
                self._queue.remove(task_id)
                return self._queue[:1]
            return []
        if self._plan is not None:
            return self._release_batches()
        return []

    def _batch_fully_done(self, k: int) -> bool:
        return all(tid in self._finished for tid in self._plan.batches[k])

    def _batch_prefix_done(self, k: int) -> bool:
        for tid in self._plan.batches[k]:
            prefix = self.tasks[tid].pipeline.cpu_prefix_len()
            if self._done_stages[tid] < prefix:
                return False
        return True

    def _may_release_batch(self, k: int) -> bool:
        if k == 0:
            return True
        if self.policy.name == "cgam_overlap":
            # CPU prefix of batch k may start once batch k-1 finished its CPU
            # portion; at most two batches in flight, so k-2 must be done.
            if not self._batch_prefix_done(k - 1):
                return False
            return k < 2 or self._batch_fully_done(k - 2)
        return self._batch_fully_done(k - 1)

    def _release_batches(self) -> list[int]:
        released = []
        still_gated = []
        for tid in self._gated:
            if self._may_release_batch(self._batch_of[tid]):
                released.append(tid)
            else:
                still_gated.append(tid)
        self._gated = still_gated
        return sorted(released)
