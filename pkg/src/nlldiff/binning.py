"""Shared binning conventions.

Every histogram in the package files a value ``v`` under the integer bin
``floor((v - origin) / width)``.  NLL histograms use ``origin = 0``;
difference histograms use ``origin = -width / 2`` so that one bin is
centered exactly on zero.  Band membership is half-open, ``lo <= v < hi``,
which makes binned and exact memberships coincide whenever the band edges
sit on bin edges.
"""

from __future__ import annotations

import math

import numpy as np


def bin_index(value: float, width: float, origin: float = 0.0) -> int:
    return math.floor((value - origin) / width)


def bin_index_array(values: np.ndarray, width: float, origin: float = 0.0) -> np.ndarray:
    return np.floor((values - origin) / width).astype(np.int64)


def bin_center(index: int, width: float, origin: float = 0.0) -> float:
    return origin + (index + 0.5) * width


def centered_origin(width: float) -> float:
    """Origin that puts a bin center exactly at zero."""
    return -0.5 * width


def in_band(value: float, band: tuple[float, float]) -> bool:
    return band[0] <= value < band[1]


def in_band_array(values: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    return (values >= band[0]) & (values < band[1])
