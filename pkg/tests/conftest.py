from __future__ import annotations

import numpy as np
import pytest

from magmodem import channel, framing, transmitter
from magmodem.modulation import concat, idle_schedule, schedule_bits
from magmodem.receiver import Receiver, ReceiverConfig

# acceptance lines, printed in the terminal summary so they survive output capture
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def frame_stream(bits, params, ch: channel.ChannelConfig, lead_s: float, tail_s: float,
                 rng=None, seed: int | None = None) -> channel.FieldSampleStream:
    """Silence, ``bits``, silence, rendered through ``ch``."""
    fs = ch.sensor.sample_rate_hz
    sched = concat(idle_schedule(lead_s, params.n_cores), schedule_bits(bits, params, fs),
                   idle_schedule(tail_s, params.n_cores))
    wf = transmitter.run_simulated_tx(sched, fs)
    if rng is None:
        rng = np.random.default_rng(seed)
    return channel.synthesize(wf, params.n_cores, ch, rng=rng)


def loopback(payload: int, params, ch: channel.ChannelConfig, rc: ReceiverConfig | None = None,
             pad_s: float = 3.0, seed: int = 0):
    rc = rc or ReceiverConfig.for_params(params, sample_rate_hz=ch.sensor.sample_rate_hz)
    frame = framing.build_frame(payload)
    stream = frame_stream(frame.bits, params, ch, pad_s, pad_s, seed=seed)
    return frame, Receiver(rc).process_stream(stream)


@pytest.fixture
def noiseless():
    return channel.channel_preset("noiseless")
