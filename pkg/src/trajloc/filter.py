"""Recursive weighted-average RSSI smoothing.

Two cascaded unity-gain recursions per feature along time::

    y1[n] = b1*x[n]  + b2*y1[n-1]
    y[n]  = b3*y1[n] + b4*y[n-1] + b5*y[n-2]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BETAS = (0.8, 0.2, 0.8, 0.15, 0.05)


@dataclass(frozen=True)
class FilterConfig:
    betas: tuple = DEFAULT_BETAS
    taps: int = 3
    enabled: bool = True

    def __post_init__(self):
        b = tuple(float(v) for v in self.betas)
        if len(b) != 5:
            raise ValueError("need five weights")
        if abs(b[0] + b[1] - 1.0) > 1e-9 or abs(b[2] + b[3] + b[4] - 1.0) > 1e-9:
            raise ValueError(f"stage weights must each sum to 1, got {b}")
        object.__setattr__(self, "betas", b)


def filter_sequence(series, config: FilterConfig = FilterConfig(), init="first") -> np.ndarray:
    """Filter along axis 0. ``series`` is (T,) or (T, ...) with features trailing.

    ``init="first"`` seeds every delay element with the first sample; ``"zero"``
    starts from rest.
    """
    x = np.asarray(series, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty series")
    if not config.enabled:
        return x.copy()
    b1, b2, b3, b4, b5 = config.betas
    if init == "first":
        y1 = y_1 = y_2 = x[0]
    elif init == "zero":
        y1 = y_1 = y_2 = np.zeros_like(x[0])
    else:
        raise ValueError(f"unknown init {init!r}")
    out = np.empty_like(x)
    for n in range(x.shape[0]):
        y1 = b1 * x[n] + b2 * y1
        y = b3 * y1 + b4 * y_1 + b5 * y_2
        out[n] = y
        y_1, y_2 = y, y_1
    return out


def filter_batch(sequences, config: FilterConfig = FilterConfig()) -> np.ndarray:
    """Filter (B, T, N) along the time axis, each sequence independently."""
    x = np.asarray(sequences, dtype=float)
    return np.moveaxis(filter_sequence(np.moveaxis(x, 1, 0), config), 0, 1)


def frequency_response(config: FilterConfig, omega) -> np.ndarray:
    """Complex gain of the cascade at normalized frequency ``omega`` (rad/sample)."""
    b1, b2, b3, b4, b5 = config.betas
    z1 = np.exp(-1j * np.asarray(omega, dtype=float))
    return (b1 / (1.0 - b2 * z1)) * (b3 / (1.0 - b4 * z1 - b5 * z1 * z1))
