import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import frame_stream
from magmodem import channel, framing
from magmodem.harness import cli
from magmodem.harness import experiments as ex
from magmodem.harness.config import ExperimentConfig, UsageError
from magmodem.harness.trace import TraceError, read_trace, write_trace
from magmodem.modulation import OokParams
from magmodem.receiver import EventKind, Receiver, ReceiverConfig

HEADER = "# sample_rate_hz=100\n# units=uT\ntimestamp_s,x,y,z\n"


# --- config ---

@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["ook", "fsk"]), st.sampled_from([0.2, 1.0, 5.0]),
       st.integers(1, 8), st.one_of(st.none(), st.integers(0, 2 ** 32 - 1)),
       st.integers(0, 10 ** 6), st.sampled_from(channel.PRESET_NAMES))
def test_config_json_fixed_point(mod, rate, cores, payload, seed, preset):
    cfg = ExperimentConfig(modulation=mod, bit_rate=rate, n_cores=cores, payload=payload,
                           rng_seed=seed, preset=preset, channel={"distance_cm": 7.5})
    again = ExperimentConfig.loads(cfg.dumps())
    assert again == cfg and again.dumps() == cfg.dumps()


def test_config_file_round_trip(tmp_path):
    cfg = ExperimentConfig(receiver={"moving_average_window": 3}, sensor={"sample_rate_hz": 50})
    assert ExperimentConfig.load(cfg.save(tmp_path / "c.json")) == cfg
    assert cfg.channel_config().sensor.sample_rate_hz == 50
    assert cfg.receiver_config().averaging_window == 3


@pytest.mark.parametrize("text", ['{"colour": 1}', '{"channel": {"gain": 2}}', "[1]", "{",
                                  '{"modulation": "psk"}', '{"bits": "012"}',
                                  '{"payload": 4294967296}', '{"preset": "lab"}'])
def test_config_rejects_bad_input(text):
    with pytest.raises(UsageError):
        ExperimentConfig.loads(text)


def test_config_bad_rate_is_usage_error():
    with pytest.raises(UsageError):
        ExperimentConfig(bit_rate=3.0).modulation_params()


# --- traces ---

def ook_trace_stream(payload=0x1234ABCD, preset="default", seed=4):
    params = OokParams.for_bit_rate(1.0)
    rc = ReceiverConfig.for_params(params)
    bits = framing.build_frame(payload).bits
    ch = channel.channel_preset(preset)
    return frame_stream(bits, params, ch, rc.guard_s + 1, rc.guard_s + 1, seed=seed), rc


def test_trace_round_trip_is_bit_exact(tmp_path):
    stream, _ = ook_trace_stream()
    tr = read_trace(write_trace(tmp_path / "t.csv", stream))
    assert tr.sample_rate_hz == 100.0 and tr.device == "simulated" and tr.skipped_rows == 0
    assert np.array_equal(tr.samples, stream.samples)
    assert np.array_equal(tr.timestamps, stream.times())


def test_decode_trace_matches_in_memory(tmp_path):
    stream, rc = ook_trace_stream()
    path = write_trace(tmp_path / "t.csv", stream)
    got = ex.cmd_decode_trace(path, ExperimentConfig())
    rx = Receiver(rc)
    want = rx.process_stream(stream) + rx.finalize()
    assert [(e.kind, e.sample_index, e.bits) for e in got.events] == \
        [(e.kind, e.sample_index, e.bits) for e in want]
    assert got.payloads == [0x1234ABCD]


def test_shuffled_rows_are_dropped_and_counted(tmp_path):
    stream, _ = ook_trace_stream(preset="noiseless")
    path = write_trace(tmp_path / "t.csv", stream)
    lines = path.read_text().splitlines()
    head, rows = lines[:4], lines[4:]
    # move a block of early rows to the end: they arrive out of order
    rows = rows[:50] + rows[60:] + rows[50:60]
    path.write_text("\n".join(head + rows) + "\n")
    res = ex.cmd_decode_trace(path, ExperimentConfig())
    assert res.dropped_out_of_order == 10
    assert res.payloads == [0x1234ABCD]


def test_malformed_rows_skipped(tmp_path):
    p = tmp_path / "t.csv"
    good = "".join(f"{i / 100},1,2,3\n" for i in range(3, 20))
    p.write_text(HEADER + "0.0,1,2,3\n0.01,abc,2,3\n0.02,1,2\n" + good)
    tr = read_trace(p)
    assert len(tr) == 18 and tr.skipped_rows == 2


@pytest.mark.parametrize("header", ["# units=uT\n", "# sample_rate_hz=fast\n",
                                    "# sample_rate_hz=-5\n", "# sample_rate_hz=50\n"])
def test_bad_rate_header(tmp_path, header):
    p = tmp_path / "t.csv"
    p.write_text(header + "".join(f"{i / 100},1,2,3\n" for i in range(20)))
    with pytest.raises(TraceError):
        read_trace(p)


def test_truncated_trace_reports_signal_lost(tmp_path):
    stream, rc = ook_trace_stream(preset="noiseless")
    cut = int(round((rc.guard_s + 1 + 20.0) * 100))  # half-way through the frame
    short = channel.FieldSampleStream(100.0, stream.samples[:cut])
    res = ex.cmd_decode_trace(write_trace(tmp_path / "t.csv", short), ExperimentConfig())
    kinds = [e.kind for e in res.events]
    assert EventKind.SIGNAL_LOST in kinds and not res.payloads


# --- BER sweep ---

def small_cfg(**kw):
    return replace(ExperimentConfig(distances_cm=[5.0, 12.5], bit_rates=[1.0], trials=3), **kw)


def test_ber_csv_format():
    text = ex.ber_csv(ex.ber_sweep(small_cfg()))
    rows = list(csv.reader(io.StringIO(text)))
    assert text.splitlines()[0] == "distance_cm,bit_rate,trials,bits,bit_errors,ber,ci95"
    assert [r[:4] for r in rows[1:]] == [["5", "1", "3", "108"], ["12.5", "1", "3", "108"]]
    for r in rows[1:]:
        assert float(r[5]) == pytest.approx(int(r[4]) / 108, abs=1e-6)


def test_ber_sweep_is_deterministic():
    assert ex.ber_csv(ex.ber_sweep(small_cfg())) == ex.ber_csv(ex.ber_sweep(small_cfg()))


def test_single_cell_equals_loopback():
    cfg = small_cfg(distances_cm=[12.5], trials=1, rng_seed=7)
    cell = ex.ber_sweep(cfg)[0]
    rep = ex.cmd_loopback(cfg, distance_cm=12.5)
    assert (cell.bits, cell.bit_errors) == (rep.bits, rep.bit_errors)


def test_ber_ci():
    c = ex.BerCell(5.0, 1.0, 10, 400, 100)
    assert c.ber == 0.25
    assert c.ci95 == pytest.approx(1.96 * (0.25 * 0.75 / 400) ** 0.5)
    assert ex.BerCell(5.0, 1.0, 0, 0, 0).ci95 == 0.0


# --- SNR sweep ---

def test_snr_csv_and_svg():
    rows = ex.snr_sweep(replace(ExperimentConfig(), snr_trials=2, snr_distances_cm=[5.0, 10.0]))
    text = ex.snr_csv(rows)
    assert text.splitlines()[0] == ",".join(ex.SNR_COLUMNS)
    assert len(rows) == 2 and rows[0].snr_db > rows[1].snr_db
    ET.fromstring(ex.snr_svg(rows))


# --- spectrogram ---

def test_dominance_threshold_matches_noise_statistics():
    """For white noise the orthogonal bins are i.i.d. exponential powers, so the
    noise-only dominance distribution can be sampled without any DFT."""
    rng = np.random.default_rng(99)
    p = rng.exponential(size=(200_000, ex.SPECTROGRAM_BINS))
    top = p.max(axis=1)
    ratio = top / ((p.sum(axis=1) - top) / (ex.SPECTROGRAM_BINS - 1))
    q999 = np.percentile(ratio, 99.9)
    assert q999 == pytest.approx(17.9, abs=0.6)
    assert ex.DOMINANCE_THRESHOLD == pytest.approx(np.ceil(q999), abs=1.0)


def test_spectrogram_zero_bits_sit_on_f0():
    cfg = ExperimentConfig(modulation="fsk", bit_rate=0.25, bits="0000")
    spec = ex.cmd_spectrogram(cfg)
    assert len(spec.symbols) == 4
    assert all(s.dominant and s.dominant_hz == 0.25 for s in spec.symbols)
    assert spec.power.shape == (len(spec.times_s), ex.SPECTROGRAM_BINS)


def test_spectrogram_noise_only_has_no_dominant_bin():
    cfg = ExperimentConfig(modulation="fsk", bit_rate=0.25, bits="0101")
    assert not any(s.dominant for s in ex.cmd_spectrogram(cfg, noise_only=True).symbols)


def test_spectrogram_outputs():
    spec = ex.cmd_spectrogram(ExperimentConfig(modulation="fsk", bit_rate=0.25))
    sym = list(csv.DictReader(io.StringIO(spec.symbols_csv())))
    assert [r["dominant_hz"] for r in sym] == ["0.25", "0.5", "0.25", "0.5"]
    assert spec.matrix_csv().splitlines()[0].startswith("time_s,0.25,0.5,0.75")
    ET.fromstring(spec.to_svg())


def test_dominance_edge_cases():
    assert ex.dominance(np.zeros(4)) == (0, 0.0)
    assert ex.dominance(np.array([0.0, 2.0, 0.0])) == (1, float("inf"))
    assert ex.dominance(np.array([1.0, 4.0, 3.0])) == (1, 2.0)


# --- CLI ---

def test_cli_loopback(capsys):
    assert cli.main(["loopback", "--payload", "0xdeadbeef", "--seed", "1"]) == 0
    assert "decoded   0xdeadbeef (received)" in capsys.readouterr().out


def test_cli_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly"])
    assert exc.value.code == 1
    assert cli.main(["loopback", "--bit-rate", "3"]) == 1
    bad = tmp_path / "c.json"
    bad.write_text('{"nope": 1}')
    assert cli.main(["--config", str(bad), "loopback"]) == 1


def test_cli_runtime_error(tmp_path):
    assert cli.main(["decode-trace", str(tmp_path / "missing.csv")]) == 2


def test_cli_decode_exit_codes(tmp_path, capsys):
    stream, _ = ook_trace_stream(preset="noiseless")
    good = write_trace(tmp_path / "good.csv", stream)
    assert cli.main(["decode-trace", str(good)]) == 0
    assert "payload 0x1234abcd" in capsys.readouterr().out
    quiet = channel.FieldSampleStream(100.0, np.tile(stream.samples[:1], (3000, 1)))
    assert cli.main(["decode-trace", str(write_trace(tmp_path / "q.csv", quiet))]) == 3


def test_cli_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["ber-sweep", "--distances", "5", "--rates", "1", "--trials", "1",
                     "--out", str(out)]) == 0
    assert (out / "ber.csv").read_text().startswith("distance_cm,")
    assert cli.main(["snr-sweep", "--axis", "faraday", "--trials", "1", "--out", str(out)]) == 0
    assert (out / "snr_faraday.csv").exists() and (out / "snr_faraday.svg").exists()
    assert cli.main(["spectrogram", "--out", str(out)]) == 0
    for name in ("spectrogram.csv", "spectrogram_symbols.csv", "spectrogram.svg"):
        assert (out / name).exists()
    assert cli.main(["calibrate", "--out", str(out)]) == 0
    cal = ExperimentConfig.load(out / "calibrated.json")
    assert cal.channel["noise_sigma_uT"] == pytest.approx(channel.CALIBRATED_NOISE_SIGMA_UT,
                                                          rel=1e-5)


def test_cli_tx_dry_run(capsys):
    assert cli.main(["tx", "--dry-run", "--payload", "0x1"]) == 0
    out = capsys.readouterr().out
    assert str(framing.build_frame(1)) in out


def test_cmd_tx_dry_run_has_no_report():
    summary, report = ex.cmd_tx(ExperimentConfig(payload=5), dry_run=True)
    assert report is None and "40 symbols" in summary
