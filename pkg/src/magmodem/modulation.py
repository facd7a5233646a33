"""OOK and B-FSK mapping of bit sequences onto CPU load schedules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# default sensor rate used by the aliasing guards when none is given
DEFAULT_SAMPLE_RATE_HZ = 100.0


class Load(enum.Enum):
    IDLE = 0
    BUSY = 1


@dataclass(frozen=True)
class LoadSegment:
    state: Load
    duration_s: float


@dataclass(frozen=True)
class LoadSchedule:
    segments: tuple[LoadSegment, ...]
    n_cores: int = 4
    # highest carrier frequency realised by the schedule, for sampling guards
    max_freq_hz: float = 0.0
    # duration of each transmitted symbol, in order
    symbol_durations_s: tuple[float, ...] = ()

    @property
    def duration_s(self) -> float:
        return math.fsum(s.duration_s for s in self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def summary(self) -> str:
        busy = math.fsum(s.duration_s for s in self.segments if s.state is Load.BUSY)
        return (f"{len(self.symbol_durations_s)} symbols, {len(self.segments)} segments, "
                f"{self.duration_s:.3f} s total, {busy:.3f} s busy, "
                f"{self.n_cores} cores, carrier <= {self.max_freq_hz:g} Hz")


@dataclass(frozen=True)
class OokParams:
    carrier_hz: float = 10.0
    n_cycles0: int = 10
    n_cycles1: int = 10
    n_cores: int = 4

    def validate(self, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> None:
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")
        if self.carrier_hz >= sample_rate_hz / 2:
            raise ValueError(
                f"carrier {self.carrier_hz} Hz aliases at {sample_rate_hz} Hz sampling")
        if self.n_cycles0 < 1 or self.n_cycles1 < 1:
            raise ValueError("n_cycles0 and n_cycles1 must be >= 1")
        if self.n_cores < 1:
            raise ValueError("n_cores must be >= 1")

    @property
    def bit_rate(self) -> float:
        """Bits per second when both symbols last the same number of cycles."""
        return self.carrier_hz / self.n_cycles1

    @classmethod
    def for_bit_rate(cls, bit_rate: float, carrier_hz: float = 10.0,
                     n_cores: int = 4) -> "OokParams":
        cycles = carrier_hz / bit_rate
        n = int(round(cycles))
        if n < 1 or abs(cycles - n) > 1e-9:
            raise ValueError(
                f"bit rate {bit_rate} needs a whole number of {carrier_hz} Hz cycles")
        return cls(carrier_hz=carrier_hz, n_cycles0=n, n_cycles1=n, n_cores=n_cores)


@dataclass(frozen=True)
class FskParams:
    f0_hz: float = 0.25
    f1_hz: float = 0.5
    symbol_duration_s: float = 4.0
    n_cores: int = 4

    def validate(self, sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> None:
        if self.f0_hz <= 0 or self.f1_hz <= 0:
            raise ValueError("FSK frequencies must be positive")
        if self.f0_hz == self.f1_hz:
            raise ValueError("f0_hz and f1_hz must differ")
        if max(self.f0_hz, self.f1_hz) >= sample_rate_hz / 2:
            raise ValueError("FSK tone aliases at the receiver sample rate")
        if self.symbol_duration_s <= 0:
            raise ValueError("symbol_duration_s must be positive")
        for f in (self.f0_hz, self.f1_hz):
            cycles = f * self.symbol_duration_s
            if abs(cycles - round(cycles)) > 1e-9 or round(cycles) < 1:
                raise ValueError(
                    f"symbol of {self.symbol_duration_s} s holds {cycles:g} cycles of {f} Hz;"
                    " a whole number is required")
        if self.n_cores < 1:
            raise ValueError("n_cores must be >= 1")

    @property
    def bit_rate(self) -> float:
        return 1.0 / self.symbol_duration_s


def half_cycle_s(carrier_hz: float) -> float:
    if not carrier_hz > 0:
        raise ValueError("frequency must be positive")
    return 0.5 / carrier_hz


def _check_bits(bits: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in out):
        raise ValueError("bits must be 0/1")
    return out


def _carrier_burst(freq_hz: float, n_cycles: int) -> list[LoadSegment]:
    h = half_cycle_s(freq_hz)
    burst = []
    for _ in range(n_cycles):
        burst.append(LoadSegment(Load.BUSY, h))
        burst.append(LoadSegment(Load.IDLE, h))
    return burst


def schedule_ook(bits: Sequence[int], params: OokParams,
                 sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> LoadSchedule:
    """'1' is n_cycles1 busy/idle carrier cycles, '0' is one idle stretch."""
    params.validate(sample_rate_hz)
    h = half_cycle_s(params.carrier_hz)
    segments: list[LoadSegment] = []
    durations = []
    for b in _check_bits(bits):
        if b:
            segments.extend(_carrier_burst(params.carrier_hz, params.n_cycles1))
            durations.append(params.n_cycles1 * 2 * h)
        else:
            segments.append(LoadSegment(Load.IDLE, params.n_cycles0 * h * 2))
            durations.append(params.n_cycles0 * 2 * h)
    return LoadSchedule(tuple(segments), params.n_cores, params.carrier_hz, tuple(durations))


def schedule_fsk(bits: Sequence[int], params: FskParams,
                 sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> LoadSchedule:
    params.validate(sample_rate_hz)
    segments: list[LoadSegment] = []
    durations = []
    for b in _check_bits(bits):
        f = params.f1_hz if b else params.f0_hz
        n_cycles = int(round(f * params.symbol_duration_s))
        segments.extend(_carrier_burst(f, n_cycles))
        durations.append(params.symbol_duration_s)
    return LoadSchedule(tuple(segments), params.n_cores,
                        max(params.f0_hz, params.f1_hz), tuple(durations))


def schedule_bits(bits: Sequence[int], params: OokParams | FskParams,
                  sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ) -> LoadSchedule:
    if isinstance(params, OokParams):
        return schedule_ook(bits, params, sample_rate_hz)
    return schedule_fsk(bits, params, sample_rate_hz)


def idle_schedule(duration_s: float, n_cores: int = 4) -> LoadSchedule:
    if duration_s <= 0:
        return LoadSchedule((), n_cores)
    return LoadSchedule((LoadSegment(Load.IDLE, duration_s),), n_cores)


def concat(*schedules: LoadSchedule) -> LoadSchedule:
    segments = tuple(s for sch in schedules for s in sch.segments)
    durations = tuple(d for sch in schedules for d in sch.symbol_durations_s)
    n_cores = max((s.n_cores for s in schedules), default=1)
    max_freq = max((s.max_freq_hz for s in schedules), default=0.0)
    return LoadSchedule(segments, n_cores, max_freq, durations)


@dataclass(frozen=True)
class PowerWaveform:
    sample_rate_hz: float
    samples: np.ndarray = field(repr=False)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


def _boundary_index(t: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    # nearest sample, ties toward the earlier one; the epsilon keeps float
    # noise in cumulative sums from turning ties into later samples
    return np.ceil(t * sample_rate_hz - 0.5 - 1e-9).astype(np.int64)


def render_waveform(schedule: LoadSchedule, sample_rate_hz: float) -> PowerWaveform:
    """Sample a schedule as a 0/1 duty waveform (BUSY -> 1, IDLE -> 0).

    Segment boundaries come from cumulative time, so rounding never drifts
    over long schedules.
    """
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    if schedule.max_freq_hz and sample_rate_hz < 4 * schedule.max_freq_hz - 1e-9:
        raise ValueError(
            f"{sample_rate_hz} Hz undersamples a {schedule.max_freq_hz} Hz carrier "
            "(need >= 4x)")
    if not schedule.segments:
        return PowerWaveform(sample_rate_hz, np.zeros(0))
    durations = np.array([s.duration_s for s in schedule.segments], dtype=float)
    if np.any(durations <= 0):
        raise ValueError("segment durations must be positive")
    ends = np.cumsum(durations)
    starts = ends - durations
    n = int(round(ends[-1] * sample_rate_hz))
    lo = np.clip(_boundary_index(starts, sample_rate_hz), 0, n)
    hi = np.clip(_boundary_index(ends, sample_rate_hz), 0, n)
    hi[-1] = n
    out = np.zeros(n)
    busy = np.array([s.state is Load.BUSY for s in schedule.segments])
    for a, b in zip(lo[busy], hi[busy]):
        out[a:b] = 1.0
    return PowerWaveform(sample_rate_hz, out)


def symbol_boundaries(schedule: LoadSchedule, sample_rate_hz: float,
                      offset_s: float = 0.0) -> np.ndarray:
    """Sample index of each symbol start plus the final end, same rounding as render."""
    ends = offset_s + np.cumsum(np.asarray(schedule.symbol_durations_s, dtype=float))
    t = np.concatenate([[offset_s], ends])
    return _boundary_index(t, sample_rate_hz)
