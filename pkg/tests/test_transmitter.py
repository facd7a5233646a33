import numpy as np
import pytest

from magmodem import transmitter
from magmodem.modulation import LoadSchedule, OokParams, render_waveform, schedule_ook
from magmodem.transmitter import StopFlag, TxConfig, measure_duty_cycle


def test_simulated_tx_renders_schedule():
    s = schedule_ook([1, 0], OokParams.for_bit_rate(5.0))
    wf = transmitter.run_simulated_tx(s, 100.0)
    assert np.array_equal(wf.samples, render_waveform(s, 100.0).samples)


def test_duty_cycle_of_rendered_carrier():
    s = schedule_ook([1, 1, 0, 1], OokParams.for_bit_rate(1.0))
    wf = render_waveform(s, 100.0)
    assert measure_duty_cycle(wf.samples, 10.0, 100.0) == pytest.approx(0.5)


def test_duty_cycle_of_skewed_trace():
    # 3 busy of every 5 samples at 20 Hz carrier, 100 Hz trace
    trace = np.tile([1, 1, 1, 0, 0], 40).astype(float)
    assert measure_duty_cycle(trace, 20.0, 100.0) == pytest.approx(0.6)
    assert measure_duty_cycle(np.zeros(50), 10.0, 100.0) == 0.0


def test_duty_cycle_guards():
    with pytest.raises(ValueError):
        measure_duty_cycle(np.ones(10), 10.0, 30.0)
    with pytest.raises(ValueError):
        measure_duty_cycle(np.ones(10), 0.0, 100.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TxConfig(n_threads=0).validate()
    with pytest.raises(ValueError):
        TxConfig(n_threads=2, core_ids=[0, 0]).validate()
    assert TxConfig(n_threads=2, core_ids=[3, 1]).resolved_cores() == [3, 1]


def test_core_list_from_environment(monkeypatch):
    monkeypatch.setenv(transmitter.CORES_ENV, "2, 5,7")
    assert TxConfig(n_threads=2).resolved_cores() == [2, 5]
    monkeypatch.setenv(transmitter.CORES_ENV, "1")
    with pytest.raises(ValueError):
        TxConfig(n_threads=2).resolved_cores()


def test_empty_schedule_rejected():
    with pytest.raises(ValueError):
        transmitter.run_hardware_tx(LoadSchedule(()))


def test_stop_before_start_aborts():
    stop = StopFlag()
    stop.set()
    s = schedule_ook([1], OokParams.for_bit_rate(1.0))
    rep = transmitter.run_hardware_tx(s, TxConfig(n_threads=1, stop_flag=stop))
    assert rep.aborted and rep.actual_duration_s == 0.0
    assert rep.intended_duration_s == pytest.approx(1.0)


def test_hardware_tx_short_schedule():
    s = schedule_ook([1, 0], OokParams.for_bit_rate(5.0))
    rep = transmitter.run_hardware_tx(s, TxConfig(n_threads=1))
    assert not rep.aborted
    assert rep.intended_duration_s == pytest.approx(0.4)
    assert rep.actual_duration_s == pytest.approx(0.4, abs=0.1)
    assert rep.max_boundary_error_s < 0.05
    assert rep.drift_fraction < 0.25


def test_hardware_tx_stop_midway():
    import threading

    stop = StopFlag()
    s = schedule_ook([1] * 10, OokParams.for_bit_rate(1.0))
    timer = threading.Timer(0.6, stop.set)
    timer.start()
    rep = transmitter.run_hardware_tx(s, TxConfig(n_threads=1, stop_flag=stop))
    timer.join()
    assert rep.aborted and rep.actual_duration_s < 5.0
