"""Resource contention models: CPU oversubscription, GPU batch saturation,
KV-cache pressure, dynamic energy, and throughput-gain cap selection.

All models are pure functions over immutable parameter records, so they can
be evaluated concurrently and are trivially replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError, InfeasibleModelError


@dataclass(frozen=True)
class CpuContentionParams:
    """CPU-side contention knobs.

    ``oversub_kappa`` is the linear context-switch penalty applied on top of
    fair sharing once runnable load exceeds the logical core count.
    ``gil_serial_fraction`` only matters for thread-pool execution.
    """

    logical_cores: int = 96
    oversub_kappa: float = 0.0
    gil_serial_fraction: float = 0.0

    def __post_init__(self):
        if self.logical_cores < 1:
            raise ConfigurationError("logical_cores must be >= 1")
        if self.oversub_kappa < 0:
            raise ConfigurationError("oversub_kappa must be >= 0")
        if not 0.0 <= self.gil_serial_fraction <= 1.0:
            raise ConfigurationError("gil_serial_fraction must be in [0, 1]")


@dataclass(frozen=True)
class GpuSaturationParams:
    """Half-saturation throughput curve plus a hard KV spill penalty."""

    b_half: float = 64.0
    kv_bytes_per_token: int = 131072
    kv_capacity: int = 34359738368
    spill_rate_factor: float = 0.25

    def __post_init__(self):
        if self.b_half <= 0:
            raise ConfigurationError("b_half must be > 0")
        if self.kv_capacity <= 0:
            raise ConfigurationError("kv_capacity must be > 0")
        if not 0.0 < self.spill_rate_factor <= 1.0:
            raise ConfigurationError("spill_rate_factor must be in (0, 1]")
        if self.kv_bytes_per_token < 0:
            raise ConfigurationError("kv_bytes_per_token must be >= 0")


@dataclass(frozen=True)
class EnergyParams:
    """Dynamic power constants. Idle draws are stored for reference but are
    never included in dynamic-energy totals."""

    cpu_idle_w: float = 113.0
    gpu_idle_w: float = 115.0
    cpu_dyn_w_per_core: float = 11.0
    gpu_dyn_w: float = 172.0

    def __post_init__(self):
        for name in ("cpu_idle_w", "gpu_idle_w", "cpu_dyn_w_per_core", "gpu_dyn_w"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ContentionModels:
    """Bundle of all calibrated model parameters for one host profile."""

    name: str = "default"
    cpu: CpuContentionParams = field(default_factory=CpuContentionParams)
    gpu: GpuSaturationParams = field(default_factory=GpuSaturationParams)
    energy: EnergyParams = field(default_factory=EnergyParams)


@dataclass(frozen=True)
class ThroughputCurve:
    """Measured throughput (requests/s) per batch size, batch sizes ascending."""

    points: dict[int, float]

    def __post_init__(self):
        keys = list(self.points)
        if keys != sorted(keys):
            raise ConfigurationError("throughput curve keys must be increasing")
        if any(v <= 0 for v in self.points.values()):
            raise ConfigurationError("throughput values must be > 0")


def cpu_rate(active_cpu_load: float, params: CpuContentionParams) -> float:
    """Per-worker execution rate given the current runnable CPU load.

    Below saturation every worker runs at full speed. Beyond it, fair
    sharing (cores/load) is degraded further by a linear oversubscription
    penalty: rate = (cores/load) / (1 + kappa * (load/cores - 1)).
    """
    if active_cpu_load < 0:
        raise ConfigurationError("active_cpu_load must be >= 0")
    cores = params.logical_cores
    if active_cpu_load <= cores:
        return 1.0
    x = active_cpu_load / cores
    return (1.0 / x) / (1.0 + params.oversub_kappa * (x - 1.0))


def gpu_rate(resident_batch: int, params: GpuSaturationParams, kv_in_use: int = 0) -> float:
    """Per-request GPU execution rate at the given residency.

    Normalized so a single resident request runs at the profiled speed:
    rate(b) = (1 + b_half) / (b + b_half). When resident KV bytes exceed
    capacity the rate is additionally multiplied by the spill factor.
    """
    if resident_batch < 1:
        raise ConfigurationError("resident_batch must be >= 1")
    if kv_in_use < 0:
        raise ConfigurationError("kv_in_use must be >= 0")
    rate = (1.0 + params.b_half) / (resident_batch + params.b_half)
    if kv_in_use > params.kv_capacity:
        rate *= params.spill_rate_factor
    return rate


def thread_pool_rate(n_active: int, pool_size: int, params: CpuContentionParams) -> float:
    """Per-stage rate for CPU work multiplexed over a shared thread pool.

    ``n_active`` stages share min(pool_size, logical_cores) workers and pay
    an interpreter-lock serialization penalty that grows with the number of
    live threads: rate = min(1, pool/n) / (1 + f * (n - 1)).
    """
    if n_active < 1:
        raise ConfigurationError("n_active must be >= 1")
    pool_eff = min(pool_size, params.logical_cores)
    share = min(1.0, pool_eff / n_active)
    return share / (1.0 + params.gil_serial_fraction * (n_active - 1))


def gain_ratios(curve: ThroughputCurve) -> dict[int, float]:
    """Throughput gain ratio r(B) = T(B) / T(B/2) for every B whose half
    point is present in the curve."""
    ratios: dict[int, float] = {}
    for b, t in curve.points.items():
        half = b // 2
        if b % 2 == 0 and half in curve.points:
            ratios[b] = t / curve.points[half]
    if not ratios:
        raise ConfigurationError(
            "curve needs at least two points at consecutive doublings"
        )
    return ratios


def select_bcap(ratios: dict[int, float], lam: float = 1.1) -> int:
    """Largest batch size whose gain ratio strictly exceeds the threshold.

    Strict inequality matters: a ratio exactly equal to the threshold is a
    rejection. If no batch size qualifies, fall back to the curve's base
    point (the smallest batch size present in the ratio map, halved).
    """
    if not ratios:
        raise ConfigurationError("empty ratio map")
    if lam <= 1.0:
        raise ConfigurationError("threshold must be > 1")
    qualifying = [b for b, r in ratios.items() if r > lam]
    if qualifying:
        return max(qualifying)
    return min(ratios) // 2


def calibrate_cpu(
    observations: list[tuple[float, int, float, float]],
) -> CpuContentionParams:
    """Least-squares fit of the oversubscription penalty coefficient.

    Each observation is (load, cores, base_s, observed_s). Only
    oversubscribed observations (load > cores) identify kappa; with a single
    one the fit is exact. All-undersubscribed data is rejected because kappa
    is then unidentifiable.
    """
    xs, ys = [], []
    cores_seen = None
    for load, cores, base_s, observed_s in observations:
        if load <= cores:
            continue
        cores_seen = cores
        x = load / cores - 1.0
        fair_share_latency = base_s * (load / cores)
        y = observed_s / fair_share_latency - 1.0
        xs.append(x)
        ys.append(y)
    if not xs:
        raise InfeasibleModelError(
            "kappa is unidentifiable: no observation with load > cores"
        )
    kappa = sum(x * y for x, y in zip(xs, ys)) / sum(x * x for x in xs)
    return CpuContentionParams(logical_cores=int(cores_seen), oversub_kappa=max(0.0, kappa))


def calibrate_gpu(
    batch_a: int, latency_a: float, batch_b: int, latency_b: float
) -> tuple[float, float]:
    """Solve the half-saturation constant and per-request work from one
    latency pair measured at two residencies.

    Returns (b_half, work_at_residency_one). Ratios at or below 1 mean the
    curve would be super-linear; ratios at or above b/a mean zero batching
    benefit. Both are outside the model.
    """
    if not (batch_a < batch_b):
        raise ConfigurationError("need batch_a < batch_b")
    ratio = latency_b / latency_a
    if ratio <= 1.0 or ratio >= batch_b / batch_a:
        raise InfeasibleModelError(
            f"latency ratio {ratio:.6g} outside (1, {batch_b / batch_a:.6g}): "
            "saturation model cannot represent these observations"
        )
    b_half = (batch_b - ratio * batch_a) / (ratio - 1.0)
    work = latency_a * (1.0 + b_half) / (batch_a + b_half)
    return b_half, work


def calibrate_gpu_busy_ratio(batch_a: int, batch_b: int, busy_ratio: float) -> float:
    """Solve b_half so that busy(batch_b)/busy(batch_a) equals the target,
    where busy(b) = (b + b_half)/(1 + b_half) per unit of work."""
    if not (batch_a < batch_b):
        raise ConfigurationError("need batch_a < batch_b")
    if busy_ratio <= 1.0 or busy_ratio >= batch_b / batch_a:
        raise InfeasibleModelError(
            f"busy-time ratio {busy_ratio:.6g} outside (1, {batch_b / batch_a:.6g})"
        )
    return (batch_b - busy_ratio * batch_a) / (busy_ratio - 1.0)


def kv_peak(
    residency_timeline: list[tuple[float, int]], params: GpuSaturationParams
) -> int:
    """Peak KV bytes over a time-ordered (time, resident_tokens) step series."""
    times = [t for t, _ in residency_timeline]
    if times != sorted(times):
        raise ConfigurationError("residency timeline must be time-ordered")
    if not residency_timeline:
        return 0
    return max(tokens for _, tokens in residency_timeline) * params.kv_bytes_per_token


def fit_dynamic_watts(
    energy_small: float,
    energy_large: float,
    integral_small: float,
    integral_large: float,
) -> float:
    """Fit one dynamic-power constant to two (energy, usage-integral)
    endpoints by log-space least squares, i.e. equal relative error on both
    endpoints. With consistent endpoints the fit is exact."""
    for v in (energy_small, energy_large, integral_small, integral_large):
        if v <= 0:
            raise InfeasibleModelError("energy endpoints and integrals must be > 0")
    return math.sqrt(
        (energy_small * energy_large) / (integral_small * integral_large)
    )
