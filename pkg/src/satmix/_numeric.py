"""Small numerical helpers shared across modules."""

import math

import numpy as np


class ExactSum:
    """Running floating-point sum without accumulated rounding error.

    Keeps Shewchuk's list of non-overlapping partials, so the final value is the
    correctly rounded sum of everything added, independent of insertion order.
    """

    __slots__ = ("_partials",)

    def __init__(self) -> None:
        self._partials: list[float] = []

    def add(self, x: float) -> None:
        x = float(x)
        i = 0
        partials = self._partials
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]

    def add_many(self, values) -> None:
        # fsum is correctly rounded per block; one rounding per block is the only loss
        self.add(math.fsum(np.asarray(values, dtype=float).ravel()))

    def merge(self, other: "ExactSum") -> None:
        for x in other._partials:
            self.add(x)

    @property
    def value(self) -> float:
        return math.fsum(self._partials)


def fmean(x) -> float:
    x = np.asarray(x, dtype=float)
    return math.fsum(x) / x.size


def sample_variance(x) -> float:
    """Sample variance with the (n - 1) denominator; exactly 0 for constant input."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("sample variance needs at least two values")
    if np.ptp(x) == 0:
        return 0.0
    d = x - fmean(x)
    return math.fsum(d * d) / (x.size - 1)


def sample_covariance(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return math.fsum((x - fmean(x)) * (y - fmean(y))) / (x.size - 1)
