"""Circular descriptive statistics.

All angles are radians on ``[0, 2*pi)``. Directions follow the
meteorological convention: 0 is north and angles grow clockwise, so
``pi / 2`` is wind from the east.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Iterable, List, Tuple, Union

import numpy as np

from .exceptions import EmptyInputError, InvalidArgumentError, UndefinedDirectionError

TWO_PI = 2.0 * np.pi

#: An angle in radians, canonically in ``[0, 2*pi)``.
Angle = float

ArrayLike = Union[float, Iterable[float], np.ndarray]

DISTANCES = ("cosine", "arc")


@dataclass(frozen=True)
class CircularSummary:
    """Descriptive statistics of a circular sample."""

    n: int
    mean_dir: float
    median_dir: float
    resultant_length: float
    variance: float
    std_dev: float


def wrap(r: ArrayLike) -> Union[float, np.ndarray]:
    """Reduce radians to ``[0, 2*pi)``.

    Accepts scalars or arrays; scalars come back as ``float``.
    """
    if isinstance(r, (float, int)):
        if not math.isfinite(r):
            raise InvalidArgumentError("cannot wrap a non-finite angle")
        out = math.fmod(r, TWO_PI)
        if out < 0:
            out += TWO_PI
        return 0.0 if out >= TWO_PI else float(out)
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("cannot wrap a non-finite angle")
    out = np.mod(arr, TWO_PI)
    # fmod of a tiny negative number rounds up to exactly 2*pi
    out = np.where(out >= TWO_PI, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def deg_to_rad(d: ArrayLike) -> Union[float, np.ndarray]:
    arr = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("cannot convert a non-finite angle")
    return wrap(np.deg2rad(arr))


def rad_to_deg(r: ArrayLike) -> Union[float, np.ndarray]:
    return np.rad2deg(wrap(r))


def atan2_star(s: float, c: float) -> float:
    """Quadrant-aware inverse tangent on ``[0, 2*pi)``.

    Parameters
    ----------
    s, c
        Quantities proportional to the sine and cosine of the angle.

    Raises
    ------
    UndefinedDirectionError
        If both arguments are zero.
    """
    if s == 0.0 and c == 0.0:
        raise UndefinedDirectionError("direction of the zero vector is undefined")
    return wrap(math.atan2(s, c))


def circ_dist(a: ArrayLike, b: ArrayLike, kind: str = "cosine"):
    """Circular distance between angles.

    ``kind="cosine"`` gives ``1 - cos(a - b)`` with range ``[0, 2]``;
    ``kind="arc"`` gives the shorter arc length with range ``[0, pi]``.
    Broadcasts like numpy.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if kind == "cosine":
        out = 1.0 - np.cos(diff)
    elif kind == "arc":
        d = np.mod(np.abs(diff), TWO_PI)
        out = np.minimum(d, TWO_PI - d)
    else:
        raise InvalidArgumentError(f"unknown distance kind {kind!r}; expected one of {DISTANCES}")
    if np.ndim(out) == 0:
        return float(out)
    return out


def _as_sample(xs: ArrayLike) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(xs, dtype=float)).ravel()
    if arr.size == 0:
        raise EmptyInputError("circular statistic of an empty sample")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("sample contains non-finite angles")
    return arr


def _mean_vector(arr: np.ndarray) -> Tuple[float, float]:
    return float(np.mean(np.cos(arr))), float(np.mean(np.sin(arr)))


def circ_resultant(xs: ArrayLike) -> float:
    """Mean resultant length, in ``[0, 1]``."""
    c, s = _mean_vector(_as_sample(xs))
    return min(1.0, math.hypot(c, s))


# resultants below this are treated as exactly balanced samples
_ZERO_RESULTANT = 1e-12
# circular variances below this are rounding noise
_ROUNDOFF_VARIANCE = 8 * sys.float_info.epsilon


def circ_mean(xs: ArrayLike) -> float:
    arr = _as_sample(xs)
    c, s = _mean_vector(arr)
    if math.hypot(c, s) < _ZERO_RESULTANT:
        raise UndefinedDirectionError("mean direction undefined: resultant length is zero")
    return atan2_star(s, c)


def circ_median(xs: ArrayLike) -> float:
    """Median direction.

    The median is the observed angle minimising the mean arc-length
    distance to the sample. Ties go to the smallest angle.
    """
    arr = wrap(_as_sample(xs))
    arr = np.atleast_1d(arr)
    cost = np.mean(circ_dist(arr[:, None], arr[None, :], kind="arc"), axis=1)
    best = cost.min()
    tied = arr[cost <= best + 1e-12 * max(1.0, best)]
    return float(tied.min())


def describe(xs: ArrayLike) -> CircularSummary:
    arr = _as_sample(xs)
    rbar = circ_resultant(arr)
    if rbar < _ZERO_RESULTANT:
        raise UndefinedDirectionError("sample has zero resultant length")
    variance = 1.0 - rbar
    # a constant sample can land a few ulps below rbar = 1
    if variance < _ROUNDOFF_VARIANCE:
        variance = 0.0
    return CircularSummary(
        n=int(arr.size),
        mean_dir=circ_mean(arr),
        median_dir=circ_median(arr),
        resultant_length=rbar,
        variance=variance,
        std_dev=std_from_variance(variance),
    )


def std_from_variance(variance: float) -> float:
    """Circular standard deviation ``sqrt(-2 ln(1 - variance))``."""
    if not 0.0 <= variance < 1.0:
        raise InvalidArgumentError(f"circular variance must lie in [0, 1), got {variance}")
    return math.sqrt(-2.0 * math.log1p(-variance))


def rose_histogram(xs: ArrayLike, nbins: int = 16) -> List[Tuple[float, int]]:
    """Counts per equal-width sector, the first sector starting at north.

    Returns a list of ``(bin_start, count)`` pairs covering
    ``[0, 2*pi)`` with half-open bins.
    """
    if int(nbins) != nbins or nbins < 1:
        raise InvalidArgumentError(f"nbins must be a positive integer, got {nbins}")
    nbins = int(nbins)
    arr = np.atleast_1d(np.asarray(xs, dtype=float)).ravel()
    width = TWO_PI / nbins
    counts = np.zeros(nbins, dtype=int)
    if arr.size:
        idx = np.floor(np.atleast_1d(wrap(arr)) / width).astype(int)
        np.add.at(counts, np.clip(idx, 0, nbins - 1), 1)
    return [(k * width, int(counts[k])) for k in range(nbins)]
