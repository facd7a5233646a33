"""Single-bin band estimator shared by the channel SNR meter and the receiver.

The estimate for a window is the magnitude of one Hann-windowed DFT bin of
the mean-removed samples, scaled by 2/sum(w) so that a sinusoid of amplitude
``a`` sitting exactly on the bin reads ``a``. Band power is its square.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import signal as sps

# window-mean-relative floor below which an amplitude is numerical residue
RELATIVE_FLOOR = 1e-9
DEFAULT_CYCLES = 4


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (exact DFT-bin relations)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def window_length(freq_hz: float, sample_rate_hz: float, cycles: float = DEFAULT_CYCLES) -> int:
    if freq_hz <= 0:
        raise ValueError("frequency must be positive")
    return max(2, int(round(cycles * sample_rate_hz / freq_hz)))


def bin_index(freq_hz: float, n: int, sample_rate_hz: float) -> int:
    return int(round(freq_hz * n / sample_rate_hz))


def band_kernel(freq_hz: float, n: int, sample_rate_hz: float) -> np.ndarray:
    """Complex weights, in window order (oldest sample first)."""
    k = bin_index(freq_hz, n, sample_rate_hz)
    w = hann(n)
    return (2.0 / w.sum()) * w * np.exp(-2j * np.pi * k * np.arange(n) / n)


def band_amplitude(window: np.ndarray, freq_hz: float, sample_rate_hz: float) -> float:
    x = np.asarray(window, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("window must be a 1-d array of at least 2 samples")
    mean = x.mean()
    value = abs(np.dot(band_kernel(freq_hz, len(x), sample_rate_hz), x - mean))
    return 0.0 if value < RELATIVE_FLOOR * abs(mean) else float(value)


class SlidingBand:
    """Trailing-window band amplitude at one frequency.

    ``apply(x)`` returns one value per window that fits, i.e. for a full window
    ending at each index from ``n - 1`` onward.
    """

    def __init__(self, freq_hz: float, n: int, sample_rate_hz: float):
        self.freq_hz = freq_hz
        self.n = n
        self.sample_rate_hz = sample_rate_hz
        self.kernel = band_kernel(freq_hz, n, sample_rate_hz)
        self.kernel_sum = complex(self.kernel.sum())
        # reversed for convolution
        self._rev = self.kernel[::-1].copy()

    def apply(self, x: np.ndarray, means: np.ndarray | None = None) -> np.ndarray:
        """``means`` optionally carries ``window_means(x, n)``, shared across bands."""
        x = np.asarray(x, dtype=float)
        n = self.n
        count = len(x) - n + 1
        if count <= 0:
            return np.zeros(0)
        ref = x[n - 1]
        xr = x - ref
        if count <= 64:
            views = np.lib.stride_tricks.sliding_window_view(xr, n)
            acc = views @ self.kernel
            means = views.mean(axis=1)
        else:
            acc = sps.oaconvolve(xr, self._rev, mode="valid")
            means = window_means(x, n) if means is None else means
        values = np.abs(acc - means * self.kernel_sum)
        floor = RELATIVE_FLOOR * np.abs(means + ref)
        values[values < floor] = 0.0
        return values


DIRECT_SUM_MAX = 8  # shifted adds beat block prefix sums for short windows


def window_sums(x: np.ndarray, m: int) -> np.ndarray:
    """Sum of every length-``m`` window along axis 0.

    Each sum adds a block suffix to the next block's prefix, so it only ever
    touches the window's own values. A running cumsum difference would carry
    the rounding error of everything before the window.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if m < 1:
        raise ValueError("m must be >= 1")
    count = n - m + 1
    if count <= 0:
        return np.zeros((0,) + x.shape[1:])
    if m <= DIRECT_SUM_MAX:
        out = x[:count].copy()
        for j in range(1, m):
            out += x[j:j + count]
        return out
    nb = -(-n // m) + 1
    blocks = np.zeros((nb * m,) + x.shape[1:])
    blocks[:n] = x
    blocks = blocks.reshape((nb, m) + x.shape[1:])
    pref = np.cumsum(blocks, axis=1)
    suff = np.cumsum(blocks[:, ::-1], axis=1)[:, ::-1]
    # window starting at k*m + j: suffix of block k from j plus prefix of block k+1 below j
    sums = suff[:-1].copy()
    sums[:, 1:] += pref[1:, :-1]
    return sums.reshape((-1,) + x.shape[1:])[:count]


def window_means(x: np.ndarray, n: int) -> np.ndarray:
    """Mean of every length-``n`` window, offset by ``x[n - 1]`` as SlidingBand uses them."""
    x = np.asarray(x, dtype=float)
    return window_sums(x - x[n - 1], n) / n


def moving_average(values: np.ndarray, w: int, history: np.ndarray | None = None) -> np.ndarray:
    """Trailing mean over ``w`` values along axis 0; the first ``w - 1`` use the available prefix.

    ``history`` holds up to ``w - 1`` values preceding ``values`` for streaming use.
    """
    if w < 1:
        raise ValueError("W must be >= 1")
    v = np.asarray(values, dtype=float)
    if w == 1:
        return v.copy()
    tail = v.shape[1:]
    h = np.zeros((0,) + tail) if history is None else \
        np.asarray(history, dtype=float).reshape((-1,) + tail)[-(w - 1):]
    missing = w - 1 - len(h)
    full = np.concatenate([np.zeros((missing,) + tail), h, v])
    sums = window_sums(full, w)
    idx = np.arange(len(h), len(h) + len(v))
    count = np.minimum(idx + 1, w).reshape((-1,) + (1,) * len(tail))
    return sums / count


def default_moving_average_window(sample_rate_hz: float, freq_hz: float) -> int:
    return max(1, int(round(sample_rate_hz / (4 * freq_hz))))


def db(ratio: float) -> float:
    if ratio <= 0:
        return -math.inf
    return 10.0 * math.log10(ratio)
