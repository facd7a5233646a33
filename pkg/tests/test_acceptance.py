"""Acceptance criteria, one test each. Every test records a PASS/FAIL line."""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import conftest
from conftest import frame_stream
from magmodem import channel, framing, transmitter
from magmodem.harness import experiments as ex
from magmodem.harness.config import ExperimentConfig
from magmodem.modulation import FskParams, OokParams, PowerWaveform, schedule_bits
from magmodem.receiver import EventKind, Receiver, ReceiverConfig, decode


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    conftest.ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def payloads(n: int, seed: int) -> list[int]:
    return np.random.default_rng(seed).integers(0, 2 ** 32, n).tolist()


def calibrated() -> ExperimentConfig:
    _, cfg = ex.cmd_calibrate(ExperimentConfig())
    return cfg


# 1
def test_noiseless_loopback_identity():
    ch = channel.channel_preset("noiseless")
    modes = [("OOK 0.2", OokParams.for_bit_rate(0.2)), ("OOK 1", OokParams.for_bit_rate(1.0)),
             ("OOK 5", OokParams.for_bit_rate(5.0)), ("FSK 0.25/0.5", FskParams())]
    values = payloads(1000, 1)
    t0 = time.perf_counter()
    errors = {}
    for name, params in modes:
        rx = Receiver(ReceiverConfig.for_params(params))
        pad = rx.config.guard_s + 1.0
        bad = 0
        for v in values:
            frame = framing.build_frame(v)
            rx.reset()
            events = rx.process_stream(frame_stream(frame.bits, params, ch, pad, pad))
            got = next((e for e in events if e.kind is EventKind.FRAME_RECEIVED), None)
            sent = frame.bits[4:]
            bad += sum(a != b for a, b in zip(sent, got.bits)) if got else len(sent)
        errors[name] = bad
    wall = time.perf_counter() - t0
    ok = not any(errors.values()) and wall < 60.0
    report(1, ok, f"bit errors {errors} over 1000 payloads per mode, {wall:.1f} s (< 60 s)")


# 2
def burst_patterns(n_bits: int = 36, max_len: int = 4):
    """Every error pattern whose flipped bits span at most ``max_len`` positions."""
    for length in range(1, max_len + 1):
        interiors = range(2 ** max(0, length - 2))
        for start in range(n_bits - length + 1):
            for inner in interiors:
                if length == 1:
                    yield (start,)
                    break
                mid = [start + 1 + j for j in range(length - 2) if inner >> j & 1]
                yield (start, *mid, start + length - 1)


def test_crc_exhaustive_detection():
    patterns = list(burst_patterns())
    assert len(patterns) == 36 + 35 + 34 * 2 + 33 * 4
    missed = checked = 0
    for v in payloads(1000, 2):
        word = list(framing.build_frame(v).bits[4:])
        for pat in patterns:
            bits = word.copy()
            for i in pat:
                bits[i] ^= 1
            checked += 1
            try:
                framing.check_payload(bits)
                missed += 1
            except framing.CrcMismatch:
                pass
    report(2, missed == 0, f"{checked - missed}/{checked} corrupted words rejected "
                           f"({len(patterns)} single-flip and burst patterns x 1000 payloads)")


# 3
def test_cube_law_exactness():
    cfg = channel.ChannelConfig(min_distance_cm=1e-3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for r, amp in zip(rng.uniform(0.01, 100.0, 2000), rng.uniform(1e-3, 1e3, 2000)):
        base = channel.attenuate(amp, r, cfg)
        for mult, want in ((1, 1.0), (2, 1 / 8), (4, 1 / 64)):
            got = channel.attenuate(amp, mult * r, cfg) / base
            worst = max(worst, abs(got - want) / want)
    report(3, worst <= 1e-9, f"max relative error {worst:.2e} over 2000 (r, amplitude) draws")


# 4
_snr_errors: list[float] = []


@settings(max_examples=200, deadline=None, derandomize=True)
@given(st.floats(0.05, 5.0), st.floats(0.01, 5.0), st.integers(2, 30), st.floats(0.0, 10.0),
       st.sampled_from([2.5, 5.0, 15.0, 20.0, 25.0]), st.floats(0, 2 * math.pi))
def test_snr_formula_property(on_amp, off_amp, n_bits, interferer, f_int, phase):
    fs, fc = 100.0, 10.0
    n_bits += n_bits % 2
    t = np.arange(int(n_bits * fs)) / fs
    # 4-cycle windows put tones on a 2.5 Hz grid; two or more bins from the
    # carrier they contribute nothing to its band
    field = 57.0 + interferer * np.sin(2 * np.pi * f_int * t + phase)
    on, off = channel.alternating_intervals(n_bits, 1.0)
    level = np.zeros_like(t)
    for a, b in on:
        level[int(round(a * fs)):int(round(b * fs))] = on_amp
    for a, b in off:
        level[int(round(a * fs)):int(round(b * fs))] = off_amp
    got = channel.measure_snr(field + level * np.sin(2 * np.pi * fc * t), fc, on, off,
                              sample_rate_hz=fs)
    want = 10 * math.log10(on_amp ** 2 / off_amp ** 2)
    _snr_errors.append(abs(got - want))
    assert abs(got - want) <= 0.1


def test_snr_formula_check():
    worst = max(_snr_errors, default=math.nan)
    report(4, len(_snr_errors) >= 100 and worst <= 0.1,
           f"max |measured - 10log10(S/N)| {worst:.2e} dB over {len(_snr_errors)} streams "
           "(tol 0.1 dB)")


# 5
def test_distance_snr_reproduction():
    t0 = time.perf_counter()
    cfg = replace(calibrated(), snr_distances_cm=[5.0, 10.0, 15.0])
    rows = ex.snr_sweep(cfg, "distance")
    wall = time.perf_counter() - t0
    targets = dict(channel.MEASURED_SNR_TARGETS)
    diffs = {r.value: r.snr_db - targets[r.value] for r in rows}
    ok = all(abs(d) <= 1.5 for d in diffs.values()) and wall < 30.0
    detail = ", ".join(f"{r.value:g} cm {r.snr_db:.2f} dB (target {targets[r.value]:g})"
                       for r in rows)
    report(5, ok, f"{detail}; tol 1.5 dB; {wall:.1f} s (< 30 s)")


# 6
def test_ber_table_reproduction():
    t0 = time.perf_counter()
    cfg = replace(calibrated(), distances_cm=[1.0, 5.0, 10.0, 12.5, 15.0],
                  bit_rates=[0.2, 1.0, 5.0], trials=20)
    cells = ex.ber_sweep(cfg)
    wall = time.perf_counter() - t0
    ber = {(c.bit_rate, c.distance_cm): c.ber for c in cells}
    failures = []
    for rate in cfg.bit_rates:
        if ber[rate, 1.0] != 0:
            failures.append(f"{rate:g} bit/s at 1 cm")
        row = [ber[rate, d] for d in cfg.distances_cm]
        if any(b < a for a, b in zip(row, row[1:])):
            failures.append(f"{rate:g} bit/s not monotone")
    for rate in (0.2, 1.0):
        if ber[rate, 5.0] != 0:
            failures.append(f"{rate:g} bit/s at 5 cm")
    for key in ((1.0, 15.0), (5.0, 12.5), (5.0, 15.0)):  # ">30%" cells
        if ber[key] < 0.25:
            failures.append(f"{key[0]:g} bit/s at {key[1]:g} cm below 25%")
    table = "; ".join(f"{r:g} bit/s " + "/".join(f"{100 * ber[r, d]:.0f}"
                                              for d in cfg.distances_cm)
                      for r in cfg.bit_rates)
    ok = not failures and wall < 300.0
    report(6, ok, f"BER % at 1/5/10/12.5/15 cm: {table}; {wall:.1f} s (< 300 s)"
           + (f"; failed: {failures}" if failures else ""))


# 7
def test_interference_ordering():
    rows = ex.snr_sweep(calibrated(), "preset")
    snr = {r.label: r.snr_db for r in rows}
    order = ["idle", "word_processing", "video", "calculations"]
    ordered = all(snr[a] > snr[b] for a, b in zip(order, order[1:]))
    target = channel.MEASURED_WORKLOAD_SNR_DB["calculations"]
    close = abs(snr["calculations"] - target) <= 1.0
    report(7, ordered and close, ", ".join(f"{k} {snr[k]:.2f}" for k in order)
           + f" dB; calculations target {target} +/- 1 dB")


# 8
def test_core_scaling():
    rows = ex.snr_sweep(calibrated(), "cores")
    snr = {int(r.value): r.snr_db for r in rows}
    ok = snr[1] < snr[2] < snr[4] and abs(snr[8] - snr[4]) <= 0.5
    report(8, ok, ", ".join(f"{k} cores {v:.2f}" for k, v in snr.items())
           + f" dB; |8 - 4| = {abs(snr[8] - snr[4]):.2f} dB (<= 0.5)")


# 9
def test_faraday_drop():
    rows = ex.snr_sweep(calibrated(), "faraday")
    snr = {r.label: r.snr_db for r in rows}
    drop = snr["outside"] - snr["inside"]
    report(9, abs(drop - 1.6) <= 0.5,
           f"outside {snr['outside']:.2f} dB, inside {snr['inside']:.2f} dB, drop {drop:.2f} dB "
           "(1.6 +/- 0.5) at 7 cm")


# 10
def test_fsk_spectrogram():
    cfg = ExperimentConfig(modulation="fsk", bit_rate=0.25, bits="0101", preset="noiseless")
    spec = ex.cmd_spectrogram(cfg)
    params = ex.fsk_params(cfg)
    nearest = [float(spec.freqs_hz[np.argmin(abs(spec.freqs_hz - f))])
               for f in (params.f0_hz, params.f1_hz)]
    want = [nearest[b] for b in framing.str_to_bits(cfg.bits)]
    got = [s.dominant_hz for s in spec.symbols]
    wrong = sum(a != b or not s.dominant for a, b, s in zip(got, want, spec.symbols))
    wrong += abs(len(got) - len(want))
    report(10, wrong == 0, f"dominant bins {got} Hz, expected {want}, "
                           f"{wrong} misclassified")


# 11
def test_preamble_robustness():
    params = OokParams.for_bit_rate(1.0)
    base = channel.ChannelConfig(distance_cm=5.0)
    ch = replace(base, noise_sigma_uT=channel.sigma_for_snr(10.0, base))
    rc = ReceiverConfig.for_params(params)
    fs = ch.sensor.sample_rate_hz
    lead, n = 6.0, 500
    start = int(lead * fs)
    rng = np.random.default_rng(11)
    hits = false_pos = 0
    for i in range(n):
        frame = framing.build_frame(int(rng.integers(0, 2 ** 32)))
        stream = frame_stream(frame.bits, params, ch, lead, lead, seed=i)
        found = [e for e in decode(stream, rc) if e.kind is EventKind.PREAMBLE_DETECTED]
        if found and abs(found[0].estimate.preamble_start - start) <= rc.symbol_samples / 2:
            hits += 1
        quiet = PowerWaveform(fs, np.zeros(len(stream)))
        noise = channel.synthesize(quiet, params.n_cores, ch,
                                   rng=np.random.default_rng(10_000 + i))
        if any(e.kind is EventKind.PREAMBLE_DETECTED for e in decode(noise, rc)):
            false_pos += 1
    measured = channel.expected_snr_db(ch, params.n_cores, params)
    report(11, hits / n >= 0.99 and false_pos / n <= 0.01,
           f"detection {hits}/{n}, false positives {false_pos}/{n} at {measured:.1f} dB "
           "(1 bit/s OOK)")


# 12
def fuzz_blocks(rng, total):
    """Mixture of wild noise, non-finite values, steps and genuine frames."""
    params = OokParams.for_bit_rate(5.0)
    guard = ReceiverConfig.for_params(params).guard_s
    made = 0
    while made < total:
        kind = rng.integers(6)
        n = int(rng.integers(50, 3000))
        if kind == 0:
            blk = rng.normal(rng.uniform(-100, 100), 10 ** rng.uniform(-3, 3), (n, 3))
        elif kind == 1:
            blk = rng.standard_cauchy((n, 3)) * 10 ** rng.uniform(-2, 4)
        elif kind == 2:
            blk = rng.normal(57.0, 0.1, (n, 3))
            mask = rng.random((n, 3)) < 0.05
            blk[mask] = rng.choice([np.nan, np.inf, -np.inf], mask.sum())
        elif kind == 3:
            blk = np.repeat(rng.uniform(-1e6, 1e6, (1, 3)), n, axis=0)
        else:
            ch = replace(channel.ChannelConfig(), distance_cm=float(rng.uniform(1, 10)))
            frame = framing.build_frame(int(rng.integers(0, 2 ** 32)))
            blk = frame_stream(frame.bits, params, ch, guard + float(rng.uniform(0, 2)),
                               float(rng.uniform(0, 2)), rng=rng).samples
            if kind == 5:
                blk = blk * 10 ** rng.uniform(-3, 3)
        made += len(blk)
        yield blk


def test_receiver_fuzz_safety():
    rng = np.random.default_rng(12)
    rx = Receiver(ReceiverConfig.for_params(OokParams.for_bit_rate(5.0)))
    total = 1_000_000
    fed = frames = bad = 0
    for blk in fuzz_blocks(rng, total):
        for x, y, z in blk[:total - fed].tolist():
            for ev in rx.on_sample(x, y, z):
                if ev.kind is not EventKind.FRAME_RECEIVED:
                    continue
                frames += 1
                try:
                    consistent = (len(ev.bits) == 36 and
                                  framing.check_payload(ev.bits) == ev.payload)
                except framing.CrcMismatch:
                    consistent = False
                bad += not consistent
        fed = min(total, fed + len(blk))
        if fed >= total:
            break
    rx.finalize()
    report(12, fed == total and bad == 0 and frames > 0,
           f"{fed} samples, {frames} frames received, {bad} inconsistent, "
           f"{rx.dropped_nonfinite} non-finite dropped")


# 13
def test_amplitude_scale_invariance():
    cases = mismatched = 0
    for params in (OokParams.for_bit_rate(1.0), OokParams.for_bit_rate(5.0), FskParams()):
        rc = ReceiverConfig.for_params(params)
        pad = rc.guard_s + 1.0
        for d in (5.0, 10.0, 12.5):
            ch = replace(channel.ChannelConfig(), distance_cm=d)
            for seed in range(4):
                frame = framing.build_frame(payloads(1, 100 + seed)[0])
                s = frame_stream(frame.bits, params, ch, pad, pad, seed=seed)
                decisions = []
                for k in (0.1, 1.0, 10.0):
                    events = decode(channel.FieldSampleStream(s.sample_rate_hz, s.samples * k),
                                    rc)
                    decisions.append([(e.kind, e.sample_index, e.bits) for e in events])
                cases += 1
                mismatched += not (decisions[0] == decisions[1] == decisions[2])
    report(13, mismatched == 0, f"{cases} noisy streams (3 modes x 3 distances x 4 seeds) "
                                f"scaled by 0.1/1/10, {mismatched} with differing decisions")


# 14
@pytest.mark.skipif(os.environ.get("MAGMODEM_HW") != "1" or (os.cpu_count() or 1) < 4,
                    reason="hardware timing needs MAGMODEM_HW=1 on an idle 4+ core machine")
def test_hardware_transmitter_timing():
    import threading

    params = OokParams.for_bit_rate(1.0)
    frame = framing.build_frame(payloads(1, 14)[0])
    cores = [0, 1, 2, 3]
    cfg = transmitter.TxConfig(n_threads=4, core_ids=cores)
    box = {}
    sampler = threading.Thread(target=lambda: box.setdefault(
        "u", transmitter.sample_utilization(10.0, 50.0, cores)))
    sampler.start()
    rep = transmitter.run_hardware_tx(schedule_bits([1] * 40, params), cfg)
    sampler.join()
    duty = transmitter.measure_duty_cycle(box["u"], params.carrier_hz, 50.0)
    rep2 = transmitter.run_hardware_tx(schedule_bits(frame.bits, params), cfg)
    ok = abs(duty - 0.5) <= 0.1 and abs(rep2.drift_fraction) <= 0.01
    report(14, ok, f"duty cycle {duty:.3f} (0.5 +/- 0.1), frame {rep2.actual_duration_s:.3f} s "
                   f"vs {rep2.intended_duration_s:.1f} s nominal; carrier run drift "
                   f"{100 * rep.drift_fraction:.2f}%")


def test_hardware_criterion_status():
    if os.environ.get("MAGMODEM_HW") != "1" or (os.cpu_count() or 1) < 4:
        conftest.ACCEPTANCE.append(
            f"CRITERION 14 SKIP: excluded from CI gating (MAGMODEM_HW unset or "
            f"{os.cpu_count()} cores)")
