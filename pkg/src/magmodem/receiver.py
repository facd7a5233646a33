"""Streaming demodulator: norm, carrier-band filter, moving average, state machine.

Metric streams are indexed by the raw sample that ends their window, so a
value at index ``n`` depends only on samples ``<= n``. Everything that turns
levels into decisions is relative to the preamble, which keeps the receiver
invariant to the overall amplitude of its input.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from . import dsp, framing
from .modulation import FskParams, OokParams, render_waveform, schedule_bits

log = logging.getLogger(__name__)

SHORT_INPUT = 64  # at most this many outputs: direct products beat FFT setup
DATA_BITS = framing.PAYLOAD_BITS + framing.CRC_BITS
MAX_OOK_WINDOW_CYCLES = 10


class Modulation(str, enum.Enum):
    OOK = "ook"
    FSK = "fsk"


class State(enum.Enum):
    SAMPLE = "SAMPLE"
    PREAMBLE = "PREAMBLE"
    DEMODULATE = "DEMODULATE"


ALLOWED_TRANSITIONS = {
    (State.SAMPLE, State.PREAMBLE),
    (State.PREAMBLE, State.DEMODULATE),
    (State.DEMODULATE, State.PREAMBLE),
}


class EventKind(str, enum.Enum):
    PREAMBLE_DETECTED = "PreambleDetected"
    FRAME_RECEIVED = "FrameReceived"
    FRAME_CRC_ERROR = "FrameCrcError"
    SIGNAL_LOST = "SignalLost"


@dataclass(frozen=True)
class ReceiverConfig:
    modulation: Modulation = Modulation.OOK
    carrier_hz: float = 10.0
    f0_hz: float = 0.25
    f1_hz: float = 0.5
    expected_bit_rate: float = 1.0
    sample_rate_hz: float = 100.0
    moving_average_window: int | None = None  # None: quarter cycle of the top tone
    preamble_correlation_threshold: float = 0.85
    signal_lost_timeout_s: float = 3.0
    # loss level as a fraction of the preamble's noise-only '0' level; a mean
    # level is undercut by noise alone far too often to serve as the bound
    signal_lost_fraction: float = 0.5
    # OOK preamble: carrier level over the '1' symbols must beat an off-carrier
    # reference tone by this factor (broadband bursts raise both equally)
    spectral_contrast: float = 3.0
    window_cycles: float | None = None  # OOK band window; None: one symbol, at least 4

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation(self.modulation))

    def validate(self) -> None:
        if self.moving_average_window is not None and self.moving_average_window < 1:
            raise ValueError("moving_average_window must be >= 1")
        if not 0.0 < self.preamble_correlation_threshold < 1.0:
            raise ValueError("preamble_correlation_threshold must be in (0, 1)")
        if self.spectral_contrast < 1.0:
            raise ValueError("spectral_contrast must be >= 1")
        if not 0.0 < self.signal_lost_fraction <= 1.0:
            raise ValueError("signal_lost_fraction must be in (0, 1]")
        if self.signal_lost_timeout_s <= 0:
            raise ValueError("signal_lost_timeout_s must be positive")
        if self.expected_bit_rate <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("bit rate and sample rate must be positive")
        self.modulation_params().validate(self.sample_rate_hz)

    @property
    def symbol_samples(self) -> float:
        return self.sample_rate_hz / self.expected_bit_rate

    @property
    def tones(self) -> tuple[float, ...]:
        if self.modulation is Modulation.OOK:
            return (self.carrier_hz,)
        return (self.f0_hz, self.f1_hz)

    def reference_tones(self) -> tuple[float, ...]:
        """Off-carrier bins for the OOK contrast check.

        Centred on the second harmonic, which a 50% duty carrier lacks, stepping
        two bins at a time and keeping clear of the carrier and odd harmonics.
        """
        fc, fs = self.carrier_hz, self.sample_rate_hz
        step = 2.0 * fs / self.window_samples
        keep = []
        for j in range(-4, 5):
            f = 2.0 * fc + j * step
            if not step <= f <= fs / 2 - step:
                continue
            if min(abs(f - k * fc) for k in range(1, int(fs / fc) + 2, 2)) < 1.5 * step:
                continue
            keep.append(f)
        return tuple(keep) or (0.5 * fc,)

    @property
    def window_samples(self) -> int:
        symbol = int(round(self.symbol_samples))
        if self.modulation is Modulation.FSK:
            # one symbol: both tones then fall on exact, mutually orthogonal bins
            return symbol
        if self.window_cycles is not None:
            return dsp.window_length(self.carrier_hz, self.sample_rate_hz, self.window_cycles)
        # integrate up to a symbol, within [minimum, cap] carrier cycles; the cap
        # keeps noise decorrelating well inside the signal-lost timeout
        cycle = self.sample_rate_hz / self.carrier_hz
        cycles = min(math.floor(symbol / cycle + 1e-9), MAX_OOK_WINDOW_CYCLES)
        return max(dsp.window_length(self.carrier_hz, self.sample_rate_hz, dsp.DEFAULT_CYCLES),
                   int(round(cycles * cycle)))

    @property
    def guard_s(self) -> float:
        """Idle time a transmitter must leave before each frame.

        The preamble reference assumes silence under the band and averaging
        windows ahead of the preamble, so back-to-back frames need this gap.
        """
        return (self.window_samples + self.averaging_window) / self.sample_rate_hz

    @property
    def averaging_window(self) -> int:
        if self.moving_average_window is not None:
            return self.moving_average_window
        return dsp.default_moving_average_window(self.sample_rate_hz, max(self.tones))

    def modulation_params(self) -> OokParams | FskParams:
        if self.modulation is Modulation.OOK:
            cycles = self.carrier_hz / self.expected_bit_rate
            if abs(cycles - round(cycles)) > 1e-9 or round(cycles) < 1:
                raise ValueError(f"bit rate {self.expected_bit_rate} needs a whole number of "
                                 f"{self.carrier_hz} Hz carrier cycles per bit")
            n = int(round(cycles))
            return OokParams(self.carrier_hz, n, n)
        return FskParams(self.f0_hz, self.f1_hz, 1.0 / self.expected_bit_rate)

    @classmethod
    def for_params(cls, params: OokParams | FskParams, **kw) -> "ReceiverConfig":
        if isinstance(params, OokParams):
            if params.n_cycles0 != params.n_cycles1:
                raise ValueError("receiver assumes equal '0' and '1' symbol lengths")
            return cls(Modulation.OOK, carrier_hz=params.carrier_hz,
                       expected_bit_rate=params.bit_rate, **kw)
        return cls(Modulation.FSK, f0_hz=params.f0_hz, f1_hz=params.f1_hz,
                   expected_bit_rate=params.bit_rate, **kw)


@dataclass(frozen=True)
class ChannelEstimate:
    amp1_uT: float
    amp0_uT: float
    symbol_duration_s: float
    symbol_phase: float  # sample index of the first post-preamble symbol boundary
    preamble_start: int
    correlation: float
    loss_level_uT: float  # strength below which the signal counts as gone

    def __post_init__(self):
        if not self.amp1_uT > self.amp0_uT >= 0:
            raise ValueError("estimate needs amp1 > amp0 >= 0")
        if self.symbol_duration_s <= 0:
            raise ValueError("symbol duration must be positive")

    @property
    def threshold(self) -> float:
        return 0.5 * (self.amp1_uT + self.amp0_uT)


@dataclass(frozen=True)
class ReceiverEvent:
    kind: EventKind
    sample_index: int
    payload: framing.Bits | None = None
    bits: framing.Bits = ()
    estimate: ChannelEstimate | None = None

    @property
    def payload_int(self) -> int | None:
        return None if self.payload is None else framing.bits_to_int(self.payload)


@dataclass
class ReceiverState:
    """Snapshot of a receiver's internals."""
    state: State
    raw: np.ndarray
    filtered: np.ndarray
    bits: list[int]
    estimate: ChannelEstimate | None


# --- stateless stages ----------------------------------------------------------

def sample_norm(x, y, z):
    """Euclidean norm; works elementwise on arrays."""
    return np.sqrt(np.square(x) + np.square(y) + np.square(z))


def band_filter(raw_window: np.ndarray, freq_hz: float, sample_rate_hz: float,
                cycles: float = dsp.DEFAULT_CYCLES) -> float | None:
    """Band amplitude over a trailing raw window; ``None`` until the window is long enough."""
    n = dsp.window_length(freq_hz, sample_rate_hz, cycles)
    raw_window = np.asarray(raw_window, dtype=float)
    if len(raw_window) < n:
        return None
    return dsp.band_amplitude(raw_window[-n:], freq_hz, sample_rate_hz)


moving_average = dsp.moving_average


class _Pipeline:
    """Constants and reference responses derived from a ReceiverConfig."""

    def __init__(self, cfg: ReceiverConfig):
        cfg.validate()
        self.cfg = cfg
        self.fs = cfg.sample_rate_hz
        self.T = cfg.symbol_samples
        self.L = cfg.window_samples
        self.W = cfg.averaging_window
        self.span = self.L + self.W - 1  # raw samples behind one smoothed value
        self.fsk = cfg.modulation is Modulation.FSK
        self.n_tones = len(cfg.tones)
        freqs = list(cfg.tones) if self.fsk else [cfg.carrier_hz, *cfg.reference_tones()]
        self.bands = [dsp.SlidingBand(f, self.L, self.fs) for f in freqs]
        self._kernels = np.stack([b.kernel for b in self.bands], axis=1)  # (L, bands)
        self._kernel_sums = self._kernels.sum(axis=0)
        self.M = int(round(len(framing.PREAMBLE) * self.T))
        self.timeout = int(math.ceil(cfg.signal_lost_timeout_s * self.fs - 1e-9))
        self.warmup = self.span - 1  # first index whose value sees a full span
        self._build_template()

    # metric columns: OOK (carrier, references...), FSK (f0, f1)
    def band_levels(self, raw: np.ndarray) -> np.ndarray:
        """Band amplitudes (windows, bands) for every full window of ``raw``."""
        n = self.L
        count = len(raw) - n + 1
        if count > SHORT_INPUT:
            means = dsp.window_means(raw, n)
            return np.stack([b.apply(raw, means) for b in self.bands], axis=1)
        if count <= 0:
            return np.zeros((0, len(self.bands)))
        # few windows (streaming): one matrix product across all bands,
        # same arithmetic as SlidingBand's short path
        ref = raw[n - 1]
        xr = raw - ref
        if count == 1:
            views = xr[None, :]
            means = np.array([xr.sum() / n])
        else:
            views = np.lib.stride_tricks.sliding_window_view(xr, n)
            means = views.mean(axis=1)
        values = np.abs(views @ self._kernels - means[:, None] * self._kernel_sums)
        floor = dsp.RELATIVE_FLOOR * np.abs(means + ref)
        values[values < floor[:, None]] = 0.0
        return values

    def smoothed(self, norm: np.ndarray) -> np.ndarray:
        return dsp.moving_average(self.band_levels(norm), self.W)

    def correlation_metric(self, smoothed: np.ndarray) -> np.ndarray:
        return smoothed[:, 1] - smoothed[:, 0] if self.fsk else smoothed[:, 0]

    def strength(self, smoothed: np.ndarray) -> np.ndarray:
        return smoothed[:, :self.n_tones].max(axis=1)

    def boundary(self, phase: float, k: int) -> int:
        return int(math.floor(phase + k * self.T + 0.5))

    def region(self, a: int, b: int) -> tuple[int, int]:
        """Inclusive metric-index range whose windows lie inside symbol [a, b)."""
        lo = a + self.span - 1
        if lo <= b - 1:
            return lo, b - 1
        c = int(math.floor((a + b - 1) / 2 + (self.span - 1) / 2 + 0.5))
        return c, c

    def _build_template(self) -> None:
        lead = self.L + self.W + 2
        params = self.cfg.modulation_params()
        wf = render_waveform(schedule_bits(framing.PREAMBLE, params, self.fs), self.fs).samples
        clean = np.concatenate([np.zeros(lead), wf])
        sm = self.smoothed(clean)
        offset = self.L - 1  # metric value k belongs to raw index k + offset
        start = lead - offset
        self.template_levels = sm[start:start + self.M]
        t = self.correlation_metric(self.template_levels)
        t = t - t.mean()
        self.template = t
        self.template_norm = float(np.linalg.norm(t))
        ones, zeros, _ = self.preamble_levels(self.template_levels, 0)
        self.template_ones, self.template_zeros = ones, zeros

    def preamble_levels(self, sm: np.ndarray, start: int) -> tuple[float, float, float]:
        """(on, off, reference-on) levels over the preamble; ``sm`` indexed from ``start``.

        The reference level is the off-carrier tone over the OOK '1' symbols
        (zero for FSK).
        """
        on, off, ref = [], [], []
        for k, bit in enumerate(framing.PREAMBLE):
            lo, hi = self.region(start + self.boundary(0, k), start + self.boundary(0, k + 1))
            if hi >= start + self.M:
                continue  # centred region would read past the preamble into data
            seg = sm[lo - start:hi - start + 1]
            if self.fsk:
                on.append(seg[:, bit].mean())
                off.append(seg[:, 1 - bit].mean())
            else:
                (on if bit else off).append(seg[:, 0].mean())
                if bit:
                    ref.append(seg[:, 1:].mean())
        return float(np.mean(on)), float(np.mean(off)), float(np.mean(ref)) if ref else 0.0

    def ncc(self, metric: np.ndarray) -> np.ndarray:
        """Normalised cross-correlation of every length-M segment with the template."""
        m = self.M
        if len(metric) < m:
            return np.zeros(0)
        if len(metric) == m:
            return np.array([self._ncc_one(metric)])
        if len(metric) - m + 1 <= SHORT_INPUT:
            num = np.lib.stride_tricks.sliding_window_view(metric, m) @ self.template
        else:
            num = sps.correlate(metric, self.template, mode="valid", method="auto")
        s1 = dsp.window_sums(metric, m)
        s2 = dsp.window_sums(metric * metric, m)
        ss = s2 - s1 * s1 / m
        with np.errstate(invalid="ignore", divide="ignore"):
            out = num / (np.sqrt(np.maximum(ss, 0.0)) * self.template_norm)
        flat = ~(ss > 1e-12 * s2)
        out[flat] = 0.0
        return np.nan_to_num(out, nan=0.0)

    def _ncc_one(self, seg: np.ndarray) -> float:
        s1 = float(seg.sum())
        s2 = float(seg @ seg)
        ss = s2 - s1 * s1 / self.M
        if not ss > 1e-12 * s2:
            return 0.0
        value = float(seg @ self.template) / (math.sqrt(ss) * self.template_norm)
        return value if math.isfinite(value) else 0.0

    def estimate(self, sm: np.ndarray, start: int, corr: float) -> ChannelEstimate | None:
        amp1, amp0, ref = self.preamble_levels(sm, start)
        if not amp1 > amp0 or amp0 < 0:
            return None
        if not self.fsk and amp1 < self.cfg.spectral_contrast * ref:
            return None
        if self.fsk:
            loss = amp0
        else:
            # part of the '0' level the clean response attributes to neighbouring '1's
            leak = amp1 * self.template_zeros / self.template_ones
            loss = amp0 - leak
            if loss <= 1e-9 * amp1:
                loss = 0.0
        loss *= self.cfg.signal_lost_fraction
        return ChannelEstimate(amp1, amp0, self.T / self.fs, int(start + self.M), int(start),
                               float(corr), loss)


# --- batch entry points ----------------------------------------------------------

def smoothed_levels(norm: np.ndarray, config: ReceiverConfig) -> np.ndarray:
    """Smoothed band levels of a whole norm stream, row ``n`` ending at raw sample ``n``.

    Columns are the carrier then its reference tones (OOK) or f0, f1 (FSK); the
    first ``window - 1`` rows, which no full window reaches, are zero.
    """
    pipe = _Pipeline(config)
    sm = pipe.smoothed(np.asarray(norm, dtype=float))
    pad = np.zeros((min(pipe.L - 1, len(norm)), len(pipe.bands)))
    return np.concatenate([pad, sm])


def detect_preamble(smoothed: np.ndarray, config: ReceiverConfig, start: int = 0,
                    _pipe: _Pipeline | None = None) -> ChannelEstimate | None:
    """Scan a smoothed stream (indexed by raw sample) for the preamble.

    ``smoothed`` is 1-d for OOK or ``(n, 2)`` holding the f0/f1 levels for FSK.
    Returns the first lock at or after ``start`` or ``None``.
    """
    pipe = _pipe or _Pipeline(config)
    sm = np.asarray(smoothed, dtype=float)
    if sm.ndim == 1:
        sm = sm[:, None]
    g = int(pipe.T) // 2
    pos = max(start, pipe.warmup)
    while True:
        seg = sm[pos:]
        corr = pipe.ncc(pipe.correlation_metric(seg))
        hits = np.flatnonzero(corr >= config.preamble_correlation_threshold)
        if len(hits) == 0:
            return None
        s0 = hits[0]
        window = corr[s0:s0 + g + 1]
        best = s0 + int(np.argmax(window))
        est = None
        if pos + best + pipe.M <= len(sm):
            est = pipe.estimate(sm[pos + best:pos + best + pipe.M], pos + best, corr[best])
        if est is not None:
            return est
        pos += s0 + 1


def demodulate_symbol(smoothed: np.ndarray, estimate: ChannelEstimate,
                      modulation: Modulation | str, lo: int = 0, hi: int | None = None) -> int:
    """Decide one bit from the smoothed levels of its decision region ``[lo, hi]``."""
    sm = np.asarray(smoothed, dtype=float)
    if sm.ndim == 1:
        sm = sm[:, None]
    seg = sm[lo:(len(sm) if hi is None else hi + 1)]
    if len(seg) == 0:
        raise ValueError("empty decision region")
    if Modulation(modulation) is Modulation.FSK:
        return int(seg[:, 1].mean() > seg[:, 0].mean())
    return int(seg[:, 0].mean() >= estimate.threshold)


def signal_lost(strength: np.ndarray, estimate: ChannelEstimate, elapsed_s: float | None = None,
                sample_rate_hz: float = 100.0, timeout_s: float = 3.0) -> bool:
    """True iff the trailing ``strength`` values stay below the loss level for the timeout.

    ``elapsed_s`` limits how much of the tail is considered (defaults to all of it).
    """
    s = np.asarray(strength, dtype=float)
    if elapsed_s is not None:
        s = s[len(s) - int(round(elapsed_s * sample_rate_hz)):] if elapsed_s > 0 else s[:0]
    need = int(math.ceil(timeout_s * sample_rate_hz - 1e-9))
    if len(s) < need:
        return False
    return bool(np.all(s[-need:] < estimate.loss_level_uT))


# --- streaming receiver ----------------------------------------------------------

class _Buffer:
    """Growable array addressed by absolute index; old entries can be trimmed."""

    def __init__(self, width: int = 0):
        self.width = width
        shape = (1024,) if width == 0 else (1024, width)
        self.data = np.zeros(shape)
        self.base = 0  # absolute index of data[0]
        self.size = 0

    @property
    def end(self) -> int:
        return self.base + self.size

    def append(self, values: np.ndarray) -> None:
        n = len(values)
        if self.size + n > len(self.data):
            cap = max(2 * len(self.data), self.size + n)
            new = np.zeros((cap,) + self.data.shape[1:])
            new[:self.size] = self.data[:self.size]
            self.data = new
        self.data[self.size:self.size + n] = values
        self.size += n

    def view(self, a: int, b: int | None = None) -> np.ndarray:
        b = self.end if b is None else b
        if a < self.base:
            raise IndexError(f"index {a} already trimmed (buffer starts at {self.base})")
        return self.data[a - self.base:b - self.base]

    def trim(self, keep_from: int) -> None:
        drop = keep_from - self.base
        if drop <= 0 or drop < len(self.data) // 2:
            return
        drop = min(drop, self.size)
        self.data[:self.size - drop] = self.data[drop:self.size]
        self.size -= drop
        self.base += drop


class Receiver:
    """Stateful single-consumer receiver. Feed it with ``process`` or ``on_sample``."""

    def __init__(self, config: ReceiverConfig | None = None):
        self.config = config or ReceiverConfig()
        self._pipe = _Pipeline(self.config)
        self.reset()

    def reset(self) -> None:
        p = self._pipe
        self.state = State.SAMPLE
        self.transitions: list[tuple[State, State, int]] = []
        self.dropped_nonfinite = 0
        self.dropped_out_of_order = 0
        self._last_t = -math.inf
        self._raw = _Buffer()
        self._band = _Buffer(len(p.bands))
        self._sm = _Buffer(len(p.bands))
        self._band.base = self._sm.base = p.L - 1
        self._scan = p.warmup
        self._pending: int | None = None
        self._estimate: ChannelEstimate | None = None
        self._bits: list[int] = []
        self._loss_pos = 0
        self._loss_run = 0
        self._last_event = 0

    # public API

    @property
    def estimate(self) -> ChannelEstimate | None:
        return self._estimate

    @property
    def samples_seen(self) -> int:
        return self._raw.end

    def snapshot(self) -> ReceiverState:
        return ReceiverState(self.state, self._raw.view(self._raw.base).copy(),
                             self._sm.view(self._sm.base).copy(), list(self._bits),
                             self._estimate)

    def on_sample(self, x: float, y: float, z: float,
                  timestamp: float | None = None) -> list[ReceiverEvent]:
        x, y, z = float(x), float(y), float(z)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            self.dropped_nonfinite += 1
            return []
        if timestamp is not None:
            t = float(timestamp)
            if not math.isfinite(t):
                self.dropped_nonfinite += 1
                return []
            if not t > self._last_t:
                self.dropped_out_of_order += 1
                return []
            self._last_t = t
        self._ingest(np.array([math.sqrt(x * x + y * y + z * z)]))
        return self._advance()

    def process(self, samples, timestamps: Sequence[float] | None = None) -> list[ReceiverEvent]:
        """Consume a chunk of (x, y, z) samples in time order."""
        xyz = np.asarray(samples, dtype=float)
        if xyz.size == 0:
            return []
        if xyz.ndim == 1:
            xyz = xyz[None, :]
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError("samples must have shape (n, 3)")
        ok = np.isfinite(xyz).all(axis=1)
        if timestamps is not None:
            t = np.asarray(timestamps, dtype=float)
            if t.shape != (len(xyz),):
                raise ValueError("one timestamp per sample is required")
            finite = ok & np.isfinite(t)
            self.dropped_nonfinite += int(np.count_nonzero(~finite))
            tf = np.where(finite, t, -math.inf)
            prior = np.maximum.accumulate(np.concatenate([[self._last_t], tf[:-1]]))
            ordered = tf > prior
            self.dropped_out_of_order += int(np.count_nonzero(finite & ~ordered))
            ok = finite & ordered
            if ok.any():
                self._last_t = float(tf[ok].max())
        else:
            self.dropped_nonfinite += int(np.count_nonzero(~ok))
        if not ok.all():
            xyz = xyz[ok]
        if len(xyz) == 0:
            return []
        self._ingest(sample_norm(xyz[:, 0], xyz[:, 1], xyz[:, 2]))
        return self._advance()

    def process_stream(self, stream) -> list[ReceiverEvent]:
        """Decode a whole FieldSampleStream and finalise."""
        events = self.process(stream.samples, stream.timestamps)
        return events + self.finalize()

    def finalize(self) -> list[ReceiverEvent]:
        """End of input: a frame still being demodulated is reported lost."""
        if self.state is not State.DEMODULATE:
            return []
        idx = max(self._sm.end - 1, self._last_event)
        return [self._lose(idx)]

    # internals

    def _ingest(self, norm: np.ndarray) -> None:
        p = self._pipe
        first = self._raw.end
        self._raw.append(norm)
        lo = max(first - p.L + 1, 0)
        if self._raw.end - lo < p.L:
            return
        bands = p.band_levels(self._raw.view(lo))
        hist = self._band.view(max(self._band.end - (p.W - 1), self._band.base))
        if len(bands) == 1 and len(hist) == p.W - 1:
            self._sm.append((hist.sum(axis=0) + bands) / p.W)
        else:
            self._sm.append(dsp.moving_average(bands, p.W, hist))
        self._band.append(bands)
        self._raw.trim(self._raw.end - p.L)
        self._band.trim(self._band.end - p.W)

    def _transition(self, new: State, index: int) -> None:
        assert (self.state, new) in ALLOWED_TRANSITIONS, (self.state, new)
        self.transitions.append((self.state, new, index))
        self.state = new

    def _emit(self, kind: EventKind, index: int, **kw) -> ReceiverEvent:
        index = max(int(index), self._last_event)
        self._last_event = index
        return ReceiverEvent(kind, index, **kw)

    def _advance(self) -> list[ReceiverEvent]:
        p = self._pipe
        events: list[ReceiverEvent] = []
        avail = self._sm.end  # metric indices < avail are known
        if self.state is State.SAMPLE:
            if avail <= p.warmup:
                return events
            self._transition(State.PREAMBLE, p.warmup)
        while True:
            if self.state is State.PREAMBLE:
                if not self._scan_preamble(avail, events):
                    break
            elif not self._demodulate(avail, events):
                break
        self._sm.trim(self._keep_from())
        return events

    def _keep_from(self) -> int:
        if self.state is State.PREAMBLE:
            return self._scan if self._pending is None else self._pending
        # the scan resumes at the frame end, which can precede the last symbol's
        # region when the smoothing span exceeds a symbol
        end = self._pipe.boundary(self._estimate.symbol_phase, DATA_BITS)
        return min(self._loss_pos, self._next_region()[0], end)

    def _scan_preamble(self, avail: int, events: list[ReceiverEvent]) -> bool:
        p = self._pipe
        g = int(p.T) // 2
        thr = self.config.preamble_correlation_threshold
        if self._pending is None:
            if avail - self._scan < p.M:
                return False
            corr = p.ncc(p.correlation_metric(self._sm.view(self._scan, avail)))
            hits = np.flatnonzero(corr >= thr)
            if len(hits) == 0:
                self._scan += len(corr)
                return False
            self._pending = self._scan + int(hits[0])
        s0 = self._pending
        if avail < s0 + g + p.M:
            return False
        corr = p.ncc(p.correlation_metric(self._sm.view(s0, s0 + g + p.M)))
        best = s0 + int(np.argmax(corr))
        est = p.estimate(self._sm.view(best, best + p.M), best, corr[best - s0])
        self._pending = None
        if est is None:
            self._scan = s0 + 1
            return True
        self._estimate = est
        self._bits = []
        self._loss_pos = best + p.M
        self._loss_run = 0
        self._transition(State.DEMODULATE, s0 + g + p.M - 1)
        events.append(self._emit(EventKind.PREAMBLE_DETECTED, s0 + g + p.M - 1, estimate=est))
        return True

    def _next_region(self) -> tuple[int, int]:
        p = self._pipe
        k = len(self._bits)
        phase = self._estimate.symbol_phase
        return p.region(p.boundary(phase, k), p.boundary(phase, k + 1))

    def _demodulate(self, avail: int, events: list[ReceiverEvent]) -> bool:
        p = self._pipe
        est = self._estimate
        lo, hi = self._next_region()
        upto = min(avail, hi + 1)
        if self._check_loss(upto):
            events.append(self._lose(self._loss_pos - 1))
            return True
        if avail <= hi:
            return False
        bit = demodulate_symbol(self._sm.view(lo, hi + 1), est, self.config.modulation)
        self._bits.append(bit)
        if len(self._bits) < DATA_BITS:
            return True
        bits = tuple(self._bits)
        end = p.boundary(est.symbol_phase, DATA_BITS)
        try:
            payload = framing.check_payload(bits)
        except framing.CrcMismatch:
            ev = self._emit(EventKind.FRAME_CRC_ERROR, hi, bits=bits, estimate=est)
        else:
            ev = self._emit(EventKind.FRAME_RECEIVED, hi, payload=payload, bits=bits,
                            estimate=est)
        events.append(ev)
        self._finish_frame(end, hi)
        return True

    def _check_loss(self, upto: int) -> bool:
        """Advance the below-loss-level run over metric indices ``< upto``."""
        if upto <= self._loss_pos:
            return False
        p = self._pipe
        below = p.strength(self._sm.view(self._loss_pos, upto)) < self._estimate.loss_level_uT
        # run length ending at each position, continuing the carried run
        run = self._loss_run
        breaks = np.flatnonzero(~below)
        if len(breaks) == 0:
            runs_end = run + len(below)
            if runs_end >= p.timeout:
                self._loss_pos += p.timeout - run
                return True
            self._loss_run = runs_end
            self._loss_pos = upto
            return False
        # first stretch continues the carried run
        first = breaks[0]
        if run + first >= p.timeout:
            self._loss_pos += p.timeout - run
            return True
        idx = np.concatenate([breaks, [len(below)]])
        gaps = np.diff(idx) - 1  # below-run lengths after each break
        long = np.flatnonzero(gaps >= p.timeout)
        if len(long):
            self._loss_pos += int(idx[long[0]]) + 1 + p.timeout
            return True
        self._loss_run = int(gaps[-1])
        self._loss_pos = upto
        return False

    def _lose(self, index: int) -> ReceiverEvent:
        ev = self._emit(EventKind.SIGNAL_LOST, index, bits=tuple(self._bits),
                        estimate=self._estimate)
        self._finish_frame(index + 1, index)
        return ev

    def _finish_frame(self, scan_floor: int, index: int) -> None:
        self._bits = []
        self._estimate = None
        self._pending = None
        self._scan = max(scan_floor, self._pipe.warmup)
        self._transition(State.PREAMBLE, index)


def decode(stream, config: ReceiverConfig | None = None) -> list[ReceiverEvent]:
    """Run a fresh receiver over a whole stream."""
    return Receiver(config).process_stream(stream)
