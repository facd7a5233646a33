"""``magmodem`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 decode found no frame.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .. import channel
from . import experiments as ex
from .config import SNR_AXES, ExperimentConfig, UsageError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NOTHING = 0, 1, 2, 3

log = logging.getLogger("magmodem")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma separated numbers, got {text!r}") from None


def _payload(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad payload {text!r}") from None


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", metavar="PATH", help="JSON experiment config", **d)
    p.add_argument("--seed", type=int, metavar="N", help="base rng seed", **d)
    p.add_argument("--out", metavar="DIR", help="output directory", **d)
    p.add_argument("--preset", choices=channel.PRESET_NAMES, help="channel preset", **d)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging", **d)


def _signal_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modulation", choices=("ook", "fsk"))
    p.add_argument("--bit-rate", type=float)
    p.add_argument("--cores", type=int, dest="n_cores")
    p.add_argument("--payload", type=_payload, help="32-bit payload, e.g. 0xdeadbeef")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="magmodem", description="CPU load magnetic covert-channel modem")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = add("loopback", "simulated tx -> channel -> rx for one frame")
    _signal_flags(p)
    p.add_argument("--distance", type=float, help="cm")

    p = add("ber-sweep", "bit error rate over distance x bit rate")
    p.add_argument("--modulation", choices=("ook", "fsk"))
    p.add_argument("--distances", type=_floats, dest="distances_cm")
    p.add_argument("--rates", type=_floats, dest="bit_rates")
    p.add_argument("--trials", type=int)

    p = add("snr-sweep", "SNR against one axis")
    p.add_argument("--axis", choices=SNR_AXES, dest="snr_axis")
    p.add_argument("--distances", type=_floats, dest="snr_distances_cm")
    p.add_argument("--trials", type=int, dest="snr_trials")

    p = add("spectrogram", "FSK time-frequency map")
    p.add_argument("--bits", help="bit string, e.g. 0101")
    p.add_argument("--noise-only", action="store_true")

    p = add("decode-trace", "decode a recorded magnetometer trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--modulation", choices=("ook", "fsk"))
    p.add_argument("--bit-rate", type=float)

    p = add("tx", "transmit one frame as CPU load")
    _signal_flags(p)
    p.add_argument("--dry-run", action="store_true", help="print the schedule only")
    p.add_argument("--no-pin", action="store_true", help="do not pin workers to cores")

    p = add("calibrate", "fit reference amplitude and noise sigma to SNR targets")
    p.add_argument("--target", type=_pair, action="append", metavar="CM:DB",
                   help="repeatable; defaults to the built-in distance targets")
    p.add_argument("--anchor", type=_pair, metavar="CM:UT",
                   default=channel.MEASURED_AMPLITUDE_ANCHOR)
    return parser


_CONFIG_FIELDS = ("modulation", "bit_rate", "n_cores", "payload", "distances_cm", "bit_rates",
                  "trials", "snr_axis", "snr_distances_cm", "snr_trials", "bits")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else \
        ExperimentConfig()
    kw = {k: getattr(args, k) for k in _CONFIG_FIELDS if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        kw["rng_seed"] = args.seed
    if getattr(args, "preset", None) is not None:
        kw["preset"] = args.preset
    if getattr(args, "out", None) is not None:
        kw["out_dir"] = args.out
    cfg = replace(cfg, **kw)
    if args.command == "spectrogram" and getattr(args, "config", None) is None:
        cfg = replace(cfg, modulation="fsk", bit_rate=0.25)
    cfg.validate()
    return cfg


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    cmd = args.command

    if cmd == "loopback":
        report = ex.cmd_loopback(cfg, args.distance)
        print("\n".join(report.lines()))
        return EXIT_OK

    if cmd == "ber-sweep":
        text = ex.ber_csv(ex.ber_sweep(cfg))
        path = _write(out, "ber.csv", text)
        print(text, end="")
        log.info("wrote %s", path)
        return EXIT_OK

    if cmd == "snr-sweep":
        rows = ex.snr_sweep(cfg)
        text = ex.snr_csv(rows)
        _write(out, f"snr_{cfg.snr_axis}.csv", text)
        _write(out, f"snr_{cfg.snr_axis}.svg", ex.snr_svg(rows))
        print(text, end="")
        return EXIT_OK

    if cmd == "spectrogram":
        spec = ex.cmd_spectrogram(cfg, noise_only=args.noise_only)
        _write(out, "spectrogram.csv", spec.matrix_csv())
        _write(out, "spectrogram_symbols.csv", spec.symbols_csv())
        _write(out, "spectrogram.svg", spec.to_svg())
        print(spec.symbols_csv(), end="")
        return EXIT_OK

    if cmd == "decode-trace":
        result = ex.cmd_decode_trace(args.trace, cfg)
        print("\n".join(result.lines()))
        return EXIT_OK if result.payloads else EXIT_NOTHING

    if cmd == "tx":
        summary, report = ex.cmd_tx(cfg, dry_run=args.dry_run, pin=not args.no_pin)
        print(summary)
        if report is not None:
            print(f"intended {report.intended_duration_s:.3f} s, actual "
                  f"{report.actual_duration_s:.3f} s (drift {100 * report.drift_fraction:.2f}%), "
                  f"boundary error mean {1e3 * report.mean_boundary_error_s:.3f} ms max "
                  f"{1e3 * report.max_boundary_error_s:.3f} ms, {report.n_workers} workers, "
                  f"pinned={report.pinned}, aborted={report.aborted}")
            for w in report.warnings:
                print(f"warning: {w}")
        return EXIT_OK

    if cmd == "calibrate":
        targets = args.target or channel.MEASURED_SNR_TARGETS
        result, new_cfg = ex.cmd_calibrate(cfg, targets, args.anchor)
        path = new_cfg.save(out / "calibrated.json")
        print(f"reference_amplitude_uT {result.reference_amplitude_uT:.6g}")
        print(f"noise_sigma_uT {result.noise_sigma_uT:.6g}")
        for (d, target), r in zip(targets, result.residuals_db):
            print(f"  {d:g} cm: target {target:g} dB, residual {r:+.2f} dB")
        print(f"anchor residual {result.anchor_residual_db:+.2f} dB")
        print(f"wrote {path}")
        return EXIT_OK

    raise UsageError(f"unknown command {cmd!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except UsageError as exc:
        print(f"magmodem: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("magmodem: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"magmodem: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
