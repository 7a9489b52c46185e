"""Impacted forward-rate lattices and the no-arbitrage drift-condition check.

The lattice stores deterministic surfaces on a calendar x maturity grid:
forward values, volatility, drift and the forward-rate impact density. The
module verifies structure (bond reconstruction round trips, the drift
condition residual); it does not re-simulate paths.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridError, MissingInputError

__all__ = [
    "ForwardLattice",
    "forward_impact_density",
    "reconstruct_bond_from_forwards",
    "hjm_coeffs",
    "hjm_condition_residual",
    "fit_gamma",
    "impacted_short_rate_from_lattice",
]


@dataclass(frozen=True)
class ForwardLattice:
    """Surfaces on calendar times t_grid (rows) and maturities T_grid (cols).

    Values are meaningful on the triangular region T >= t. ``f`` holds the
    (impacted) forward rates; it may be None when only drift-condition
    checks are needed.
    """

    t_grid: np.ndarray
    T_grid: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    Jf: np.ndarray
    f: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        T = np.asarray(self.T_grid, dtype=float)
        if np.any(np.diff(t) <= 0) or np.any(np.diff(T) <= 0):
            raise GridError("lattice grids must be strictly increasing")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "T_grid", T)
        for name in ("sigma", "alpha", "Jf", "f"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != (t.size, T.size):
                raise GridError(f"surface {name} must have shape (n_t, n_T)")
            object.__setattr__(self, name, v)
        for name in ("sigma", "alpha", "Jf"):
            v = getattr(self, name)
            mask = self.T_grid[None, :] >= self.t_grid[:, None] - 1e-12
            if not np.all(np.isfinite(v[mask])):
                raise MissingInputError(f"surface {name} has non-finite entries on T >= t")

    def row_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[i] - t) > 1e-9:
            raise MissingInputError(f"calendar time {t} not on the lattice grid")
        return i

    @classmethod
    def from_csv(cls, path) -> "ForwardLattice":
        """Stacked CSV: header (surface, t, maturities...); one row per
        (surface, calendar time)."""
        blocks: dict[str, dict[float, list[float]]] = {}
        T_grid = None
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            T_grid = np.asarray([float(x) for x in header[2:]])
            for row in reader:
                if not row:
                    continue
                name = row[0].strip().lower()
                blocks.setdefault(name, {})[float(row[1])] = [float(x) for x in row[2:]]
        needed = {"sigma", "alpha", "jf"}
        if T_grid is None or not needed.issubset(blocks):
            raise MissingInputError("lattice CSV must provide sigma, alpha and jf blocks")
        t_grid = np.asarray(sorted(next(iter(blocks.values())).keys()))

        def surface(name):
            if name not in blocks:
                return None
            return np.asarray([blocks[name][t] for t in t_grid])

        return cls(
            t_grid=t_grid,
            T_grid=T_grid,
            sigma=surface("sigma"),
            alpha=surface("alpha"),
            Jf=surface("jf"),
            f=surface("f"),
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["surface", "t"] + [repr(float(x)) for x in self.T_grid])
            for name, surf in (("sigma", self.sigma), ("alpha", self.alpha), ("jf", self.Jf), ("f", self.f)):
                if surf is None:
                    continue
                for i, t in enumerate(self.t_grid):
                    w.writerow([name, repr(float(t))] + [repr(float(x)) for x in surf[i]])


def forward_impact_density(impact, prices, T_grid) -> np.ndarray:
    """Forward-rate impact from bond impact: maturity derivative of
    -log(1 - I_T / P(t,T)) by centered differences (one-sided at the ends)."""
    impact = np.asarray(impact, dtype=float)
    prices = np.asarray(prices, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    if impact.shape != prices.shape or impact.shape != T_grid.shape:
        raise MissingInputError("impact, prices and maturity grid must align")
    ratio = impact / prices
    if np.any(ratio >= 1.0):
        raise DomainError("impacted price P - I must stay positive")
    L = -np.log1p(-ratio)
    return np.gradient(L, T_grid, edge_order=2)


def _cumulative_from(T_grid: np.ndarray, values: np.ndarray, s: float) -> np.ndarray:
    """Trapezoid cumulative integral from s to each maturity node >= s;
    NaN below s."""
    out = np.full(T_grid.size, np.nan)
    if s < T_grid[0] - 1e-12 or s > T_grid[-1] + 1e-12:
        raise MissingInputError("calendar time outside the maturity grid")
    j0 = int(np.searchsorted(T_grid, s - 1e-15))
    v_s = np.interp(s, T_grid, values)
    if j0 < T_grid.size:
        out[j0] = 0.5 * (v_s + values[j0]) * (T_grid[j0] - s)
        if j0 + 1 < T_grid.size:
            inc = 0.5 * (values[j0 + 1 :] + values[j0:-1]) * np.diff(T_grid[j0:])
            out[j0 + 1 :] = out[j0] + np.cumsum(inc)
    return out


def reconstruct_bond_from_forwards(lattice: ForwardLattice, t: float, T: float) -> float:
    """P(t,T) = exp(-integral of f(t, u) du over [t, T]) by trapezoid."""
    if lattice.f is None:
        raise MissingInputError("lattice carries no forward values")
    if T < t:
        raise DomainError("need t <= T")
    if T > lattice.T_grid[-1] + 1e-12:
        raise MissingInputError("maturity grid does not cover [t, T]")
    i = lattice.row_index(t)
    cum = _cumulative_from(lattice.T_grid, lattice.f[i], t)
    j = int(np.searchsorted(lattice.T_grid, T - 1e-15))
    if abs(lattice.T_grid[j] - T) < 1e-12:
        integral = cum[j]
    else:
        if j == 0 or np.isnan(cum[j - 1]):
            f_t = np.interp(t, lattice.T_grid, lattice.f[i])
            f_T = np.interp(T, lattice.T_grid, lattice.f[i])
            integral = 0.5 * (f_t + f_T) * (T - t)
        else:
            f_lo = lattice.f[i][j - 1]
            f_T = np.interp(T, lattice.T_grid, lattice.f[i])
            integral = cum[j - 1] + 0.5 * (f_lo + f_T) * (T - lattice.T_grid[j - 1])
    return float(np.exp(-integral))


def hjm_coeffs(lattice: ForwardLattice, s: float, T: float) -> tuple[float, float]:
    """Lognormal bond coefficients nu(s,T) = -int sigma and
    b(s,T) = -int alpha - int Jf + nu^2 / 2 (maturity integrals over [s,T])."""
    if T < s:
        raise DomainError("need s <= T")
    i = lattice.row_index(s)
    grid = lattice.T_grid
    if T > grid[-1] + 1e-12:
        raise MissingInputError("maturity grid does not cover [s, T]")

    def integral(values):
        cum = _cumulative_from(grid, values, s)
        j = int(np.searchsorted(grid, T - 1e-15))
        if abs(grid[j] - T) < 1e-12:
            return float(cum[j])
        base = 0.0 if j == 0 or np.isnan(cum[j - 1]) else float(cum[j - 1])
        lo = max(s, grid[j - 1]) if j > 0 else s
        v_lo = np.interp(lo, grid, values)
        v_T = np.interp(T, grid, values)
        return base + 0.5 * (v_lo + v_T) * (T - lo)

    nu = -integral(lattice.sigma[i])
    b = -integral(lattice.alpha[i]) - integral(lattice.Jf[i]) + 0.5 * nu**2
    return float(nu), float(b)


def _coeff_surfaces(lattice: ForwardLattice):
    n_t, n_T = lattice.t_grid.size, lattice.T_grid.size
    nu = np.full((n_t, n_T), np.nan)
    b = np.full((n_t, n_T), np.nan)
    for i, s in enumerate(lattice.t_grid):
        c_sig = _cumulative_from(lattice.T_grid, lattice.sigma[i], s)
        c_alp = _cumulative_from(lattice.T_grid, lattice.alpha[i], s)
        c_jf = _cumulative_from(lattice.T_grid, lattice.Jf[i], s)
        nu[i] = -c_sig
        b[i] = -c_alp - c_jf + 0.5 * c_sig**2
    return nu, b


def hjm_condition_residual(lattice: ForwardLattice, gamma_tilde) -> np.ndarray:
    """Residual surface b(t,T) + nu(t,T) gamma(t) whose sup norm certifies
    (or refutes) the martingale-measure drift condition at grid accuracy.
    Entries with T < t are NaN."""
    gamma = np.asarray(gamma_tilde, dtype=float)
    if gamma.shape != lattice.t_grid.shape:
        raise MissingInputError("gamma must be sampled on the calendar grid")
    nu, b = _coeff_surfaces(lattice)
    return b + nu * gamma[:, None]


def fit_gamma(lattice: ForwardLattice) -> np.ndarray:
    """Per calendar time, the least-squares gamma minimizing the residual."""
    nu, b = _coeff_surfaces(lattice)
    out = np.empty(lattice.t_grid.size)
    for i in range(out.size):
        valid = ~np.isnan(nu[i])
        num = np.nansum(nu[i][valid] * b[i][valid])
        den = np.nansum(nu[i][valid] ** 2)
        out[i] = -num / den if den > 0 else 0.0
    return out


def impacted_short_rate_from_lattice(lattice: ForwardLattice, t: float) -> float:
    """Diagonal read-out f(t, t), interpolating staggered grids linearly."""
    if lattice.f is None:
        raise MissingInputError("lattice carries no forward values")
    tg = lattice.t_grid
    if t < tg[0] - 1e-12 or t > tg[-1] + 1e-12:
        raise MissingInputError("calendar time outside the lattice")
    if t < lattice.T_grid[0] - 1e-12 or t > lattice.T_grid[-1] + 1e-12:
        raise MissingInputError("diagonal not covered by the maturity grid")
    i1 = int(np.searchsorted(tg, t))
    i0 = max(i1 - 1, 0)
    v0 = np.interp(t, lattice.T_grid, lattice.f[i0])
    if i1 == i0 or i1 >= tg.size:
        return float(v0)
    v1 = np.interp(t, lattice.T_grid, lattice.f[i1])
    w = (t - tg[i0]) / (tg[i1] - tg[i0]) if tg[i1] > tg[i0] else 0.0
    return float((1 - w) * v0 + w * v1)
