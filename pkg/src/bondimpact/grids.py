"""Uniform time grids and tabulated forward curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridError, MissingInputError

__all__ = ["TimeGrid", "ForwardCurve"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps`` intervals on ``[t0, t1]`` (years)."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.t1)):
            raise GridError("grid endpoints must be finite")
        if self.n_steps < 1:
            raise GridError("n_steps must be >= 1")
        if self.t1 <= self.t0:
            raise GridError("grid must be strictly increasing (t1 > t0)")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)


@dataclass(frozen=True)
class ForwardCurve:
    """Market instantaneous forward curve sampled on a maturity grid.

    Values between samples are linearly interpolated; queries outside the
    sampled support raise instead of extrapolating.
    """

    maturities: np.ndarray
    rates: np.ndarray
    _spacing: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if mats.ndim != 1 or mats.size < 2 or mats.shape != rates.shape:
            raise MissingInputError("forward curve needs >= 2 (maturity, rate) samples")
        if np.any(np.diff(mats) <= 0):
            raise GridError("forward curve maturities must be strictly increasing")
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "_spacing", float(np.min(np.diff(mats))))

    @classmethod
    def flat(cls, rate: float, t_max: float = 50.0, n: int = 501) -> "ForwardCurve":
        grid = np.linspace(0.0, t_max, n)
        return cls(grid, np.full(n, float(rate)))

    @classmethod
    def from_csv(cls, path) -> "ForwardCurve":
        """Two-column CSV (maturity_years, forward_rate); header optional."""
        mats, rates = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    m, r = float(row[0]), float(row[1])
                except ValueError:
                    continue  # header row
                mats.append(m)
                rates.append(r)
        return cls(np.asarray(mats), np.asarray(rates))

    def _check_support(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.maturities[0] - 1e-12) or np.any(t > self.maturities[-1] + 1e-12):
            raise DomainError(
                f"maturity outside curve support [{self.maturities[0]}, {self.maturities[-1]}]"
            )
        return t

    def value(self, t):
        t = self._check_support(t)
        return np.interp(t, self.maturities, self.rates)

    def derivative(self, t):
        """Maturity derivative by centered finite difference with the curve's
        native spacing; one-sided at the support endpoints."""
        t = self._check_support(t)
        h = self._spacing
        lo, hi = self.maturities[0], self.maturities[-1]
        tl = np.maximum(np.asarray(t) - h, lo)
        tr = np.minimum(np.asarray(t) + h, hi)
        fl = np.interp(tl, self.maturities, self.rates)
        fr = np.interp(tr, self.maturities, self.rates)
        return (fr - fl) / (tr - tl)

    def integral(self, t: float) -> float:
        """Exact integral of the piecewise-linear curve over [0, t]."""
        t = float(self._check_support(t))
        mats, rates = self.maturities, self.rates
        if mats[0] > 0:
            raise DomainError("curve support must start at 0 for discount factors")
        k = int(np.searchsorted(mats, t, side="right") - 1)
        k = min(k, mats.size - 2)
        total = float(np.trapezoid(rates[: k + 1], mats[: k + 1]))
        f_t = np.interp(t, mats, rates)
        total += 0.5 * (rates[k] + f_t) * (t - mats[k])
        return total

    def discount(self, t: float) -> float:
        """Discount factor exp(-integral of the forward curve over [0, t])."""
        return float(np.exp(-self.integral(t)))
