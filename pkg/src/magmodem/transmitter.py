"""Run a LoadSchedule as CPU load, or render it offline.

The hardware backend uses one worker process per core (Python threads
would serialise on the interpreter lock and never load more than one core).
Workers share a start timestamp on the system monotonic clock and follow
absolute segment deadlines, so they stay phase aligned and do not drift.
"""
from __future__ import annotations

import logging
import math
import multiprocessing as mp
import os
import queue
import signal
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .modulation import Load, LoadSchedule, PowerWaveform, render_waveform

log = logging.getLogger(__name__)

CORES_ENV = "MAGMODEM_CORES"
START_MARGIN_S = 0.25  # lets every worker get scheduled before the first deadline
SPIN_MARGIN_S = 0.002  # sleep ends this early, the residual is busy-corrected
MAX_SLEEP_S = 0.05
CHECK_EVERY = 2000  # spin iterations between stop-flag polls


class StopFlag:
    """Cooperative cancellation token, settable from any thread or process."""

    def __init__(self, ctx=None):
        self._event = (ctx or mp.get_context()).Event()

    def set(self) -> None:
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()

    def clear(self) -> None:
        self._event.clear()


@dataclass
class TxConfig:
    n_threads: int = 4
    pin_to_cores: bool = True
    core_ids: Sequence[int] | None = None
    stop_flag: StopFlag | None = None

    def validate(self) -> None:
        if self.n_threads < 1:
            raise ValueError("n_threads must be >= 1")
        if self.core_ids is not None:
            ids = list(self.core_ids)
            if len(ids) != self.n_threads or len(set(ids)) != len(ids):
                raise ValueError("core_ids must list n_threads distinct cores")
            if any(c < 0 for c in ids):
                raise ValueError("core ids must be non-negative")

    def resolved_cores(self) -> list[int] | None:
        if self.core_ids is not None:
            return list(self.core_ids)
        env = os.environ.get(CORES_ENV)
        if env:
            ids = [int(c) for c in env.replace(" ", "").split(",") if c]
            if len(ids) < self.n_threads or len(set(ids)) != len(ids):
                raise ValueError(
                    f"{CORES_ENV}={env!r} must list at least n_threads distinct cores")
            return ids[:self.n_threads]
        return None


@dataclass(frozen=True)
class TxReport:
    intended_duration_s: float
    actual_duration_s: float
    mean_boundary_error_s: float
    max_boundary_error_s: float
    n_workers: int
    pinned: bool
    aborted: bool = False
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def drift_fraction(self) -> float:
        if self.intended_duration_s <= 0:
            return 0.0
        return abs(self.actual_duration_s - self.intended_duration_s) / self.intended_duration_s


def _spin_until(deadline: float, stop) -> bool:
    """Busy-wait on integer arithmetic until ``deadline``; False if stopped."""
    acc = 0x9E3779B9
    n = 0
    while time.monotonic() < deadline:
        acc = (acc * 1103515245 + 12345) & 0xFFFFFFFF
        n += 1
        if n % CHECK_EVERY == 0 and stop.is_set():
            return False
    _spin_until.sink = acc  # keeps the loop body observable
    return True


def _sleep_until(deadline: float, stop, max_slice: float) -> bool:
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= SPIN_MARGIN_S:
            break
        if stop.is_set():
            return False
        time.sleep(min(remaining - SPIN_MARGIN_S, max_slice))
    # residual correction: short spin without load significance
    while time.monotonic() < deadline:
        pass
    return not stop.is_set()


def _worker(index, core, segments, start, stop, results, max_slice):
    # Ctrl-C is handled by the parent, which sets the stop flag
    signal.signal(signal.SIGINT, signal.SIG_IGN)
    warnings = []
    pinned = False
    if core is not None:
        try:
            os.sched_setaffinity(0, {core})
            pinned = True
        except (AttributeError, OSError) as exc:
            warnings.append(f"worker {index}: pinning to core {core} failed ({exc})")
    errors = []
    aborted = False
    t = start
    for busy, duration in segments:
        t += duration
        ok = _spin_until(t, stop) if busy else _sleep_until(t, stop, max_slice)
        if not ok:
            aborted = True
            break
        errors.append(time.monotonic() - t)
    results.put((index, pinned, aborted, errors, time.monotonic(), warnings))


def run_hardware_tx(schedule: LoadSchedule, cfg: TxConfig | None = None) -> TxReport:
    """Execute ``schedule`` on real cores with busy-wait and sleep segments."""
    cfg = cfg or TxConfig()
    cfg.validate()
    if not schedule.segments:
        raise ValueError("schedule is empty")
    ctx = mp.get_context()
    stop = cfg.stop_flag or StopFlag(ctx)
    intended = schedule.duration_s
    warnings: list[str] = []
    if stop.is_set():
        return TxReport(intended, 0.0, 0.0, 0.0, cfg.n_threads, False, True,
                        ("stop flag set before start",))

    cores: list[int | None] = [None] * cfg.n_threads
    if cfg.pin_to_cores:
        try:
            cores = cfg.resolved_cores() or _default_cores(cfg.n_threads, warnings)
        except ValueError as exc:
            warnings.append(str(exc))
    segments = [(s.state is Load.BUSY, s.duration_s) for s in schedule.segments]
    shortest = min(d for _, d in segments)
    max_slice = min(MAX_SLEEP_S, max(shortest / 2, SPIN_MARGIN_S))

    results = ctx.Queue()
    start = time.monotonic() + START_MARGIN_S
    procs = [ctx.Process(target=_worker, args=(i, cores[i], segments, start, stop._event,
                                                results, max_slice), daemon=True)
             for i in range(cfg.n_threads)]
    for p in procs:
        p.start()
    outcomes = []
    budget = START_MARGIN_S + intended + 10.0
    try:
        for _ in procs:
            outcomes.append(results.get(timeout=budget))
    except queue.Empty:
        stop.set()
        warnings.append("a worker did not report back")
    for p in procs:
        p.join(timeout=1.0)
        if p.is_alive():
            p.terminate()
    if not outcomes:
        return TxReport(intended, 0.0, 0.0, 0.0, cfg.n_threads, False, True, tuple(warnings))

    errors = np.array([e for o in outcomes for e in o[3]], dtype=float)
    aborted = any(o[2] for o in outcomes)
    pinned = all(o[1] for o in outcomes)
    for o in outcomes:
        warnings.extend(o[5])
    if cfg.pin_to_cores and not pinned:
        warnings.append("running unpinned")
    end = max(o[4] for o in outcomes)
    abs_err = np.abs(errors) if len(errors) else np.zeros(1)
    return TxReport(intended, max(0.0, end - start), float(abs_err.mean()), float(abs_err.max()),
                    cfg.n_threads, pinned, aborted, tuple(warnings))


def _default_cores(n: int, warnings: list[str]) -> list[int | None]:
    try:
        avail = sorted(os.sched_getaffinity(0))
    except AttributeError:
        warnings.append("core affinity is not supported on this platform")
        return [None] * n
    if len(avail) < n:
        warnings.append(f"{n} workers but only {len(avail)} cores available; sharing cores")
        return [avail[i % len(avail)] for i in range(n)]
    return avail[:n]


def run_simulated_tx(schedule: LoadSchedule, sample_rate_hz: float) -> PowerWaveform:
    """Offline backend: same interface role as the hardware path, pure rendering."""
    return render_waveform(schedule, sample_rate_hz)


def measure_duty_cycle(utilization_trace: Sequence[float], carrier_hz: float,
                       sample_rate_hz: float) -> float:
    """Busy fraction (utilisation > 0.5) inside carrier-on intervals.

    Busy runs closer than 1.5 half-cycles are merged into one interval, which
    extends one half-cycle past its last busy sample to cover the final idle half.
    """
    if carrier_hz <= 0 or sample_rate_hz <= 0:
        raise ValueError("carrier and sample rate must be positive")
    if sample_rate_hz < 4 * carrier_hz - 1e-9:
        raise ValueError(f"trace at {sample_rate_hz} Hz undersamples a {carrier_hz} Hz carrier "
                         "(need >= 4x)")
    busy = np.asarray(utilization_trace, dtype=float) > 0.5
    idx = np.flatnonzero(busy)
    if len(idx) == 0:
        return 0.0
    half = sample_rate_hz / (2 * carrier_hz)
    split = np.flatnonzero(np.diff(idx) > 1.5 * half + 1)
    starts = np.concatenate([[idx[0]], idx[split + 1]])
    lasts = np.concatenate([idx[split], [idx[-1]]])
    total = on = 0
    for a, b in zip(starts, lasts):
        end = min(len(busy), int(b + 1 + round(half)))
        total += end - a
        on += int(np.count_nonzero(busy[a:end]))
    return on / total


def sample_utilization(duration_s: float, rate_hz: float = 50.0,
                       cores: Sequence[int] | None = None) -> np.ndarray:
    """Poll OS CPU utilisation (fraction, averaged over ``cores``) at ``rate_hz``."""
    import psutil

    if duration_s <= 0 or rate_hz <= 0:
        raise ValueError("duration and rate must be positive")
    n = int(math.floor(duration_s * rate_hz))
    period = 1.0 / rate_hz
    out = np.zeros(n)
    psutil.cpu_percent(percpu=True)
    t0 = time.monotonic()
    for i in range(n):
        target = t0 + (i + 1) * period
        delay = target - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        per = psutil.cpu_percent(percpu=True)
        sel = per if cores is None else [per[c] for c in cores]
        out[i] = float(np.mean(sel)) / 100.0
    return out
