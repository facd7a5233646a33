"""Magnetometer trace files.

Format::

    # sample_rate_hz=100
    # units=uT
    # device=simulated
    timestamp_s,x,y,z
    0.0,56.0,0.0,-12.2
    ...

Values are written with ``repr`` so a written trace reads back bit-exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import FieldSampleStream

log = logging.getLogger(__name__)

COLUMNS = ("timestamp_s", "x", "y", "z")
RATE_TOLERANCE = 0.10


class TraceError(ValueError):
    pass


@dataclass
class TraceFile:
    sample_rate_hz: float
    timestamps: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    units: str = "uT"
    device: str = ""
    skipped_rows: int = 0
    header: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def to_stream(self) -> FieldSampleStream:
        return FieldSampleStream(self.sample_rate_hz, self.samples, self.timestamps)


def write_trace(path: str | Path, stream: FieldSampleStream, device: str = "simulated") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = stream.times()
    with path.open("w") as fh:
        fh.write(f"# sample_rate_hz={stream.sample_rate_hz!r}\n# units=uT\n# device={device}\n")
        fh.write(",".join(COLUMNS) + "\n")
        for ti, (x, y, z) in zip(t.tolist(), stream.samples.tolist()):
            fh.write(f"{ti!r},{x!r},{y!r},{z!r}\n")
    return path


def read_trace(path: str | Path) -> TraceFile:
    """Parse a trace; malformed rows are skipped and counted, not fatal."""
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[tuple[float, float, float, float]] = []
    skipped = 0
    seen_columns = False
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            if not seen_columns and line.replace(" ", "").split(",")[0] == COLUMNS[0]:
                seen_columns = True
                continue
            parts = line.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError("expected 4 fields")
                rows.append(tuple(float(p) for p in parts))
            except ValueError:
                skipped += 1
                log.debug("%s:%d: skipped malformed row", path, lineno)
    if "sample_rate_hz" not in header:
        raise TraceError(f"{path}: missing sample_rate_hz header")
    try:
        rate = float(header["sample_rate_hz"])
    except ValueError:
        raise TraceError(f"{path}: bad sample_rate_hz {header['sample_rate_hz']!r}") from None
    if not rate > 0:
        raise TraceError(f"{path}: sample_rate_hz must be positive")
    data = np.array(rows, dtype=float).reshape(-1, 4)
    check_rate(data[:, 0], rate, str(path))
    if skipped:
        log.warning("%s: skipped %d malformed rows", path, skipped)
    return TraceFile(rate, data[:, 0].copy(), data[:, 1:].copy(), header.get("units", "uT"),
                     header.get("device", ""), skipped, header)


def check_rate(timestamps: np.ndarray, rate: float, where: str = "trace") -> None:
    """Declared rate must match the median spacing of the (sorted) timestamps to 10%."""
    t = np.unique(timestamps[np.isfinite(timestamps)])
    if len(t) < 2:
        return
    spacing = float(np.median(np.diff(t)))
    measured = 1.0 / spacing
    if abs(measured - rate) > RATE_TOLERANCE * rate:
        raise TraceError(f"{where}: declared {rate} Hz but timestamps indicate {measured:.3g} Hz")
