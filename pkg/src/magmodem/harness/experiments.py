"""Experiment engine behind the CLI.

Every random draw comes from ``SeedSequence([seed, trial])``: trial ``i`` sees
the same payload and the same noise sequence in every sweep cell, so cells
differ only by the swept parameter (common random numbers).
"""
from __future__ import annotations

import csv
import io
import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import channel, dsp, framing, transmitter
from ..modulation import (FskParams, OokParams, PowerWaveform, concat, idle_schedule,
                          render_waveform, schedule_bits, schedule_ook)
from ..receiver import EventKind, Receiver, ReceiverConfig, ReceiverEvent
from . import svg
from .config import ExperimentConfig, UsageError
from .trace import read_trace

log = logging.getLogger(__name__)

BER_COLUMNS = ("distance_cm", "bit_rate", "trials", "bits", "bit_errors", "ber", "ci95")
SNR_COLUMNS = ("axis", "label", "value", "n_cores", "trials", "snr_db", "model_snr_db")
SNR_PATTERN_BITS = 20  # alternating '1010...' at the SNR bit rate
SNR_BIT_RATE = 1.0
# max / mean-of-others band power over one symbol window; 99.9th percentile
# of white Gaussian noise is 17.9 (400-sample rectangular windows, 8 bins)
DOMINANCE_THRESHOLD = 18.0
SPECTROGRAM_BINS = 8


def trial_rngs(seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(payload rng, noise rng) for one trial."""
    a, b = np.random.SeedSequence([seed, trial]).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def padding_s(rc: ReceiverConfig) -> float:
    """Silence around a frame: the receiver guard plus a second of margin."""
    return rc.guard_s + 1.0


def onoff_intervals(bits: Sequence[int], symbol_s: float, offset_s: float):
    on, off = [], []
    for i, b in enumerate(bits):
        iv = (offset_s + i * symbol_s, offset_s + (i + 1) * symbol_s)
        (on if b else off).append(iv)
    return on, off


# --- single frame ---------------------------------------------------------------

@dataclass
class TrialResult:
    payload: framing.Bits
    sent: framing.Bits  # 36 bits after the preamble
    received: framing.Bits  # 36 bits, undelivered positions counted as '0'
    bit_errors: int
    status: str  # received | crc_error | lost | missed
    events: list[ReceiverEvent] = field(repr=False)
    snr_db: float | None = None

    @property
    def ber(self) -> float:
        return self.bit_errors / len(self.sent)


def run_trial(params: OokParams | FskParams, ch: channel.ChannelConfig, rc: ReceiverConfig,
              seed: int, trial: int = 0, payload: int | None = None,
              with_snr: bool = False) -> TrialResult:
    payload_rng, noise_rng = trial_rngs(seed, trial)
    drawn = int(payload_rng.integers(0, 2 ** 32))
    frame = framing.build_frame(drawn if payload is None else payload)
    pad = padding_s(rc)
    sched = concat(idle_schedule(pad, params.n_cores), schedule_bits(frame.bits, params,
                                                                     ch.sensor.sample_rate_hz),
                   idle_schedule(pad, params.n_cores))
    wf = transmitter.run_simulated_tx(sched, ch.sensor.sample_rate_hz)
    stream = channel.synthesize(wf, params.n_cores, ch, rng=noise_rng)
    events = Receiver(rc).process_stream(stream)

    sent = frame.bits[len(framing.PREAMBLE):]
    got: tuple[int, ...] = ()
    status = "missed"
    for ev in events:
        if ev.kind is EventKind.FRAME_RECEIVED:
            got, status = ev.bits, "received"
        elif ev.kind is EventKind.FRAME_CRC_ERROR:
            got, status = ev.bits, "crc_error"
        elif ev.kind is EventKind.SIGNAL_LOST:
            got, status = ev.bits, "lost"
        else:
            continue
        break
    received = tuple(got) + (0,) * (len(sent) - len(got))
    errors = sum(a != b for a, b in zip(sent, received))
    snr = None
    if with_snr and isinstance(params, OokParams):
        on, off = onoff_intervals(frame.bits, 1.0 / params.bit_rate, pad)
        snr = channel.measure_snr(stream, params.carrier_hz, on, off)
    return TrialResult(frame.payload, sent, received, errors, status, events, snr)


@dataclass
class LoopbackReport:
    payload: int
    decoded: int | None
    status: str
    bit_errors: int
    bits: int
    snr_db: float | None
    wall_s: float
    events: list[ReceiverEvent] = field(repr=False)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits

    def lines(self) -> list[str]:
        snr = "n/a" if self.snr_db is None else f"{self.snr_db:.2f} dB"
        dec = "none" if self.decoded is None else f"0x{self.decoded:08x}"
        out = [f"payload   0x{self.payload:08x}", f"decoded   {dec} ({self.status})",
               f"bit errors {self.bit_errors}/{self.bits} (BER {self.ber:.3f})",
               f"SNR       {snr}", f"wall time {self.wall_s:.3f} s"]
        out += [f"  event {e.kind.value} @ {e.sample_index}" for e in self.events]
        return out


def cmd_loopback(cfg: ExperimentConfig, distance_cm: float | None = None) -> LoopbackReport:
    cfg.validate()
    t0 = time.perf_counter()
    params = cfg.modulation_params()
    over = {} if distance_cm is None else {"distance_cm": distance_cm}
    ch = cfg.channel_config(**over)
    rc = cfg.receiver_config(sample_rate_hz=ch.sensor.sample_rate_hz)
    res = run_trial(params, ch, rc, cfg.rng_seed, 0, cfg.payload, with_snr=True)
    decoded = (framing.bits_to_int(res.received[:framing.PAYLOAD_BITS])
               if res.status == "received" else None)
    return LoopbackReport(framing.bits_to_int(res.payload), decoded, res.status, res.bit_errors,
                          len(res.sent), res.snr_db, time.perf_counter() - t0, res.events)


# --- BER sweep ------------------------------------------------------------------

@dataclass(frozen=True)
class BerCell:
    distance_cm: float
    bit_rate: float
    trials: int
    bits: int
    bit_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def ci95(self) -> float:
        """Normal-approximation half width."""
        p = self.ber
        return 1.96 * math.sqrt(p * (1 - p) / self.bits) if self.bits else 0.0

    def row(self) -> list[str]:
        return [f"{self.distance_cm:g}", f"{self.bit_rate:g}", str(self.trials), str(self.bits),
                str(self.bit_errors), f"{self.ber:.6f}", f"{self.ci95:.6f}"]


def ber_cell(cfg: ExperimentConfig, distance_cm: float, bit_rate: float,
             trials: int | None = None) -> BerCell:
    params = cfg.modulation_params(bit_rate)
    ch = cfg.channel_config(distance_cm=distance_cm)
    rc = cfg.receiver_config(bit_rate, ch.sensor.sample_rate_hz)
    n = cfg.trials if trials is None else trials
    errors = bits = 0
    for t in range(n):
        res = run_trial(params, ch, rc, cfg.rng_seed, t, cfg.payload)
        errors += res.bit_errors
        bits += len(res.sent)
    return BerCell(distance_cm, bit_rate, n, bits, errors)


def ber_sweep(cfg: ExperimentConfig) -> list[BerCell]:
    cfg.validate()
    return [ber_cell(cfg, d, r) for r in cfg.bit_rates for d in cfg.distances_cm]


def ber_csv(cells: Sequence[BerCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BER_COLUMNS)
    for c in cells:
        w.writerow(c.row())
    return buf.getvalue()


# --- SNR sweep ------------------------------------------------------------------

def snr_point(ch: channel.ChannelConfig, n_cores: int, seed: int, trials: int,
              carrier_hz: float = 10.0) -> float:
    """Pooled on/off band-power ratio of an alternating 1 bit/s OOK stream, in dB."""
    fs = ch.sensor.sample_rate_hz
    params = OokParams.for_bit_rate(SNR_BIT_RATE, carrier_hz, n_cores)
    bits = [1, 0] * (SNR_PATTERN_BITS // 2)
    wf = render_waveform(schedule_ook(bits, params, fs), fs)
    on, off = onoff_intervals(bits, 1.0 / SNR_BIT_RATE, 0.0)
    sig = noise = 0.0
    for t in range(trials):
        _, noise_rng = trial_rngs(seed, t)
        s, n = channel.band_powers(channel.synthesize(wf, n_cores, ch, rng=noise_rng),
                                   carrier_hz, on, off)
        sig += s
        noise += n
    if noise <= 0:
        log.warning("zero noise power; SNR is unbounded")
        return math.inf
    return dsp.db(sig / noise)


@dataclass(frozen=True)
class SnrRow:
    axis: str
    label: str
    value: float
    n_cores: int
    trials: int
    snr_db: float
    model_snr_db: float

    def row(self) -> list[str]:
        return [self.axis, self.label, f"{self.value:g}", str(self.n_cores), str(self.trials),
                f"{self.snr_db:.4f}", f"{self.model_snr_db:.4f}"]


def snr_sweep(cfg: ExperimentConfig, axis: str | None = None) -> list[SnrRow]:
    cfg.validate()
    axis = axis or cfg.snr_axis
    n = cfg.snr_trials
    points: list[tuple[str, float, channel.ChannelConfig, int]] = []
    if axis == "distance":
        for d in cfg.snr_distances_cm:
            points.append((f"{d:g} cm", d, cfg.channel_config(distance_cm=d), cfg.n_cores))
    elif axis == "cores":
        ch = cfg.channel_config()
        for k in cfg.core_counts:
            points.append((f"{k} cores", float(k), ch, k))
    elif axis == "preset":
        for i, p in enumerate(cfg.presets):
            ch = cfg.channel_config(preset=p, distance_cm=channel.WORKLOAD_DISTANCE_CM)
            points.append((p, float(i), ch, channel.WORKLOAD_CORES))
    elif axis == "faraday":
        base = cfg.channel_config(distance_cm=channel.FARADAY_DISTANCE_CM)
        inside = replace(base, faraday_attenuation_db=channel.FARADAY_ATTENUATION_DB)
        points += [("outside", 0.0, replace(base, faraday_attenuation_db=0.0), cfg.n_cores),
                   ("inside", 1.0, inside, cfg.n_cores)]
    else:
        raise UsageError(f"unknown SNR axis {axis!r}")
    return [SnrRow(axis, label, value, cores, n,
                   snr_point(ch, cores, cfg.rng_seed, n, cfg.carrier_hz),
                   channel.expected_snr_db(ch, cores, OokParams.for_bit_rate(
                       SNR_BIT_RATE, cfg.carrier_hz, cores)))
            for label, value, ch, cores in points]


def snr_csv(rows: Sequence[SnrRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNR_COLUMNS)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def snr_svg(rows: Sequence[SnrRow]) -> str:
    axis = rows[0].axis
    xs = [r.value for r in rows]
    xlabel = {"distance": "distance (cm)", "cores": "transmitting cores"}.get(axis, axis)
    labels = None if axis in ("distance", "cores") else [r.label for r in rows]
    return svg.line_plot({"simulated": (xs, [r.snr_db for r in rows]),
                          "model": (xs, [r.model_snr_db for r in rows])},
                         f"SNR vs {axis}", xlabel, "SNR (dB)", labels)


# --- spectrogram ----------------------------------------------------------------

@dataclass(frozen=True)
class SymbolMark:
    index: int
    start_s: float
    bit: int | None
    dominant_hz: float
    dominance: float
    dominant: bool


@dataclass
class Spectrogram:
    times_s: np.ndarray
    freqs_hz: np.ndarray
    power: np.ndarray  # (times, freqs)
    symbols: list[SymbolMark]

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s"] + [f"{f:g}" for f in self.freqs_hz])
        for t, row in zip(self.times_s, self.power):
            w.writerow([f"{t:g}"] + [f"{v:.6e}" for v in row])
        return buf.getvalue()

    def symbols_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["symbol", "start_s", "bit", "dominant_hz", "dominance", "dominant"])
        for s in self.symbols:
            dom = "inf" if math.isinf(s.dominance) else f"{s.dominance:.4f}"
            w.writerow([s.index, f"{s.start_s:g}", "" if s.bit is None else s.bit,
                        f"{s.dominant_hz:g}", dom, int(s.dominant)])
        return buf.getvalue()

    def to_svg(self) -> str:
        marks = [(s.start_s + 0.5 * (self.times_s[1] - self.times_s[0] if len(self.times_s) > 1
                                     else 0.0), s.dominant_hz, "x" if s.dominant else "?")
                 for s in self.symbols]
        return svg.heatmap(self.power.T, self.times_s, self.freqs_hz, "FSK spectrogram",
                           "window start (s)", "frequency (Hz)", marks)


def dominance(powers: np.ndarray) -> tuple[int, float]:
    """(argmax, max / mean of the other bins)."""
    k = int(np.argmax(powers))
    rest = np.delete(powers, k)
    mean = float(rest.mean()) if len(rest) else 0.0
    top = float(powers[k])
    if top == 0.0:
        return k, 0.0
    if mean <= 1e-12 * top:
        return k, math.inf
    return k, top / mean


def tone_kernels(freqs: np.ndarray, n: int, fs: float) -> np.ndarray:
    """Rectangular-window single-bin DFT rows scaled to tone amplitude.

    A symbol holds whole cycles of every grid frequency, so the rows are
    orthogonal and a clean tone does not leak into its neighbours.
    """
    t = np.arange(n) / fs
    return np.exp(-2j * np.pi * np.outer(freqs, t)) * (2.0 / n)


def spectrogram(norm: np.ndarray, fs: float, symbol_s: float, n_symbols: int,
                offset_s: float = 0.0, bits: Sequence[int] | None = None,
                hop_fraction: float = 0.25) -> Spectrogram:
    """Short-time band powers on the bin grid ``k * fs / L`` (L = one symbol)."""
    L = int(round(symbol_s * fs))
    freqs = np.arange(1, SPECTROGRAM_BINS + 1) * fs / L
    kernels = tone_kernels(freqs, L, fs)
    x = np.asarray(norm, dtype=float)

    def powers(seg):
        return np.abs(kernels @ (seg - seg.mean())) ** 2

    hop = max(1, int(round(L * hop_fraction)))
    starts = np.arange(0, len(x) - L + 1, hop)
    power = np.array([powers(x[s:s + L]) for s in starts]).reshape(-1, len(freqs))
    marks = []
    for i in range(n_symbols):
        a = int(round((offset_s + i * symbol_s) * fs))
        if a + L > len(x):
            break
        k, ratio = dominance(powers(x[a:a + L]))
        marks.append(SymbolMark(i, a / fs, None if bits is None else int(bits[i]),
                                float(freqs[k]), ratio, ratio >= DOMINANCE_THRESHOLD))
    return Spectrogram(starts / fs, freqs, power, marks)


def fsk_params(cfg: ExperimentConfig) -> FskParams:
    if cfg.modulation == "fsk":
        return cfg.modulation_params()
    return FskParams(cfg.f0_hz, cfg.f1_hz, n_cores=cfg.n_cores)


def cmd_spectrogram(cfg: ExperimentConfig, noise_only: bool = False) -> Spectrogram:
    cfg.validate()
    params = fsk_params(cfg)
    ch = cfg.channel_config()
    fs = ch.sensor.sample_rate_hz
    bits = framing.str_to_bits(cfg.bits)
    sched = schedule_bits(bits, params, fs)
    wf = transmitter.run_simulated_tx(sched, fs)
    if noise_only:
        wf = PowerWaveform(fs, np.zeros(len(wf)))
    _, noise_rng = trial_rngs(cfg.rng_seed, 0)
    stream = channel.synthesize(wf, params.n_cores, ch, rng=noise_rng)
    return spectrogram(stream.norm(), fs, params.symbol_duration_s, len(bits),
                       bits=None if noise_only else bits)


# --- trace decoding ----------------------------------------------------------------

@dataclass
class DecodeResult:
    events: list[ReceiverEvent]
    skipped_rows: int
    dropped_nonfinite: int
    dropped_out_of_order: int
    samples: int

    @property
    def payloads(self) -> list[int]:
        return [e.payload_int for e in self.events if e.kind is EventKind.FRAME_RECEIVED]

    def lines(self) -> list[str]:
        out = [f"  {e.kind.value} @ {e.sample_index}"
               + (f" payload=0x{e.payload_int:08x}" if e.payload is not None else "")
               + (f" bits={framing.bits_to_str(e.bits)}" if e.bits and e.payload is None else "")
               for e in self.events]
        out.append(f"samples {self.samples}, skipped rows {self.skipped_rows}, dropped "
                   f"{self.dropped_nonfinite} non-finite / {self.dropped_out_of_order} "
                   "out of order")
        out += [f"payload 0x{p:08x}" for p in self.payloads]
        return out


def decode_samples(samples: np.ndarray, timestamps: np.ndarray | None,
                   rc: ReceiverConfig, skipped_rows: int = 0) -> DecodeResult:
    rx = Receiver(rc)
    events = rx.process(samples, timestamps) + rx.finalize()
    return DecodeResult(events, skipped_rows, rx.dropped_nonfinite, rx.dropped_out_of_order,
                        len(samples))


def cmd_decode_trace(path: str | Path, cfg: ExperimentConfig) -> DecodeResult:
    cfg.validate()
    trace = read_trace(path)
    rc = cfg.receiver_config(sample_rate_hz=trace.sample_rate_hz)
    return decode_samples(trace.samples, trace.timestamps, rc, trace.skipped_rows)


# --- hardware transmit ----------------------------------------------------------------

def tx_schedule(cfg: ExperimentConfig):
    params = cfg.modulation_params()
    payload = cfg.payload
    if payload is None:
        payload = int(trial_rngs(cfg.rng_seed, 0)[0].integers(0, 2 ** 32))
    frame = framing.build_frame(payload)
    return frame, schedule_bits(frame.bits, params)


def cmd_tx(cfg: ExperimentConfig, dry_run: bool = False, pin: bool = True,
           stop: transmitter.StopFlag | None = None) -> tuple[str, transmitter.TxReport | None]:
    cfg.validate()
    frame, sched = tx_schedule(cfg)
    summary = f"frame {frame}\n{sched.summary()}"
    if dry_run:
        return summary, None
    stop = stop or transmitter.StopFlag()
    txc = transmitter.TxConfig(n_threads=cfg.n_cores, pin_to_cores=pin, stop_flag=stop)
    box: dict[str, transmitter.TxReport] = {}
    worker = threading.Thread(target=lambda: box.setdefault(
        "r", transmitter.run_hardware_tx(sched, txc)), daemon=True)
    worker.start()
    try:
        while worker.is_alive():
            worker.join(0.1)
    except KeyboardInterrupt:
        stop.set()
        worker.join()
    return summary, box.get("r")


# --- calibration ---------------------------------------------------------------------

def cmd_calibrate(cfg: ExperimentConfig,
                  targets: Sequence[tuple[float, float]] = channel.MEASURED_SNR_TARGETS,
                  anchor: tuple[float, float] = channel.MEASURED_AMPLITUDE_ANCHOR,
                  ) -> tuple[channel.CalibrationResult, ExperimentConfig]:
    cfg.validate()
    if len({d for d, _ in targets}) < 2:
        raise UsageError("calibration needs targets at two or more distances")
    result = channel.calibrate(targets, anchor, base=cfg.channel_config(preset="default"),
                               n_cores=cfg.n_cores)
    new_channel = dict(cfg.channel)
    new_channel["reference_amplitude_uT"] = result.reference_amplitude_uT
    new_channel["noise_sigma_uT"] = result.noise_sigma_uT
    return result, replace(cfg, channel=new_channel)
