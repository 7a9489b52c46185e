"""One-factor short-rate models, their simulation and analytic moments.

Models are parametrized under a pricing/physical measure tag carried on the
instance. A market-price-of-risk slope can be supplied at simulation time;
the sign convention is such that the slope extracted from simulated bond
drift/volatility ratios equals the supplied slope (see ``bonds.zcb_drift_vol``).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import mc
from .errors import (
    GridError,
    MeasureTransformError,
    ParameterError,
    UnsupportedModelError,
)
from .grids import ForwardCurve, TimeGrid

__all__ = [
    "MEASURES",
    "VasicekModel",
    "HullWhiteModel",
    "GenericAffineModel",
    "PathSet",
    "simulate_short_rate",
    "analytic_moments",
    "hull_white_theta",
    "apply_impacted_measure",
]

MEASURES = ("P", "Q", "Qtilde")

_CHUNK = 4096


def _check_measure(measure: str):
    if measure not in MEASURES:
        raise ParameterError(f"measure must be one of {MEASURES}, got {measure!r}")


@dataclass(frozen=True)
class VasicekModel:
    """Mean-reverting Gaussian short rate dr = k (theta - r) dt + sigma dW."""

    k: float
    theta: float
    sigma: float
    r0: float
    measure: str = "Q"

    def __post_init__(self):
        for name in ("k", "theta", "sigma", "r0"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.k <= 0:
            raise ParameterError("mean-reversion speed k must be positive")
        if self.sigma < 0:
            raise ParameterError("sigma must be nonnegative")
        _check_measure(self.measure)

    def drift(self, t, r):
        return self.k * (self.theta - r)

    def diffusion(self, t, r):
        return np.broadcast_to(np.float64(self.sigma), np.shape(r)).copy() if np.shape(r) else self.sigma


@dataclass(frozen=True)
class HullWhiteModel:
    """dr = (theta(t) - a r) dt + sigma dW with theta(t) fitted to a market
    forward curve.

    ``theta_a`` is the mean-reversion speed used inside the theta(t) fit; it
    equals ``a`` for a freshly calibrated model and keeps its original value
    when ``a`` is shifted by a measure change.
    """

    a: float
    sigma: float
    r0: float
    fwd_curve: ForwardCurve
    theta_a: float | None = None
    measure: str = "Q"

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a <= 0:
            raise ParameterError("mean-reversion speed a must be positive")
        if self.sigma < 0:
            raise ParameterError("sigma must be nonnegative")
        if self.theta_a is None:
            object.__setattr__(self, "theta_a", self.a)
        _check_measure(self.measure)

    def theta(self, t):
        return hull_white_theta(self.fwd_curve, self.theta_a, self.sigma, t)

    def drift(self, t, r):
        return self.theta(t) - self.a * r

    def diffusion(self, t, r):
        return np.broadcast_to(np.float64(self.sigma), np.shape(r)).copy() if np.shape(r) else self.sigma


@dataclass(frozen=True)
class GenericAffineModel:
    """Affine diffusion with tabulated coefficients.

    sigma^2(t, r) = a(t) + alpha(t) r and mu(t, r) = b(t) + beta(t) r, each
    coefficient sampled on ``t_grid`` and linearly interpolated. Either
    alpha == 0 with a >= 0 (state space R) or a == 0 with alpha >= 0 and
    b >= 0 (state space R+).
    """

    t_grid: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    r0: float
    measure: str = "P"

    def __post_init__(self):
        grids = [np.asarray(x, dtype=float) for x in (self.t_grid, self.a, self.alpha, self.b, self.beta)]
        t = grids[0]
        if any(g.shape != t.shape for g in grids[1:]):
            raise ParameterError("coefficient tables must share the t_grid shape")
        if np.any(np.diff(t) <= 0):
            raise GridError("t_grid must be strictly increasing")
        for name, g in zip(("t_grid", "a", "alpha", "b", "beta"), grids):
            if not np.all(np.isfinite(g)):
                raise ParameterError(f"{name} table contains non-finite values")
        object.__setattr__(self, "t_grid", t)
        for name, g in zip(("a", "alpha", "b", "beta"), grids[1:]):
            object.__setattr__(self, name, g)
        real_line = np.all(self.alpha == 0) and np.all(self.a >= 0)
        half_line = np.all(self.a == 0) and np.all(self.alpha >= 0) and np.all(self.b >= 0)
        if not (real_line or half_line):
            raise ParameterError(
                "affine coefficients must satisfy alpha==0, a>=0 (state space R) "
                "or a==0, alpha>=0, b>=0 (state space R+)"
            )
        _check_measure(self.measure)

    def _interp(self, table, t):
        return np.interp(t, self.t_grid, table)

    def drift(self, t, r):
        return self._interp(self.b, t) + self._interp(self.beta, t) * r

    def diffusion(self, t, r):
        var = self._interp(self.a, t) + self._interp(self.alpha, t) * r
        # Euler steps may leave the state space; truncate the radicand.
        return np.sqrt(np.maximum(var, 0.0))


@dataclass(frozen=True)
class PathSet:
    """Simulated paths plus the randomness bookkeeping that produced them."""

    grid: TimeGrid
    seed: int
    stream_ids: np.ndarray
    rates: np.ndarray  # (n_paths, n_steps + 1)
    extras: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.rates.shape[0]


def _euler_chunk(model, grid: TimeGrid, seed: int, ids: np.ndarray, mpr_slope: float) -> np.ndarray:
    n = grid.n_steps
    times = grid.times
    dt = grid.dt
    dw = mc.normal_increment_matrix(seed, ids, n, dt)
    r = np.empty((ids.size, n + 1))
    r[:, 0] = model.r0
    for i in range(n):
        ri = r[:, i]
        sig = model.diffusion(times[i], ri)
        mu = model.drift(times[i], ri) + sig * mpr_slope * ri
        r[:, i + 1] = ri + mu * dt + sig * dw[:, i]
    return r


def simulate_short_rate(
    model,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    mpr_slope: float = 0.0,
    threads: int = 1,
) -> PathSet:
    """Euler-Maruyama paths of the short rate.

    Each path is a deterministic function of (seed, path index); worker
    count only affects scheduling, never values. ``mpr_slope`` adds
    sigma * slope * r to the drift (measure shift with lambda(t) = slope * r).
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    if grid.dt <= 0:
        raise GridError("dt must be positive")
    ids = np.arange(n_paths, dtype=np.int64)
    chunks = [ids[i : i + _CHUNK] for i in range(0, n_paths, _CHUNK)]
    rates = np.empty((n_paths, grid.n_steps + 1))

    def run(chunk_ids):
        return _euler_chunk(model, grid, seed, chunk_ids, mpr_slope)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for chunk_ids, block in zip(chunks, results):
        rates[chunk_ids[0] : chunk_ids[-1] + 1] = block
    return PathSet(grid=grid, seed=seed, stream_ids=ids, rates=rates)


def analytic_moments(model, s: float, t: float, r_s: float) -> tuple[float, float]:
    """Conditional mean and variance of r(t) given r(s) = r_s."""
    if t < s:
        raise GridError("need s <= t")
    dt = t - s
    if isinstance(model, VasicekModel):
        e = np.exp(-model.k * dt)
        mean = r_s * e + model.theta * (1.0 - e)
        var = model.sigma**2 * (1.0 - np.exp(-2.0 * model.k * dt)) / (2.0 * model.k)
        return float(mean), float(var)
    if isinstance(model, HullWhiteModel):
        a = model.a
        e = np.exp(-a * dt)
        var = model.sigma**2 * (1.0 - np.exp(-2.0 * a * dt)) / (2.0 * a)
        if model.a == model.theta_a:
            alpha_t = _hw_alpha(model, t)
            alpha_s = _hw_alpha(model, s)
            return float(r_s * e + alpha_t - alpha_s * e), float(var)
        # shifted mean-reversion: integrate theta(t) against the new kernel
        mean = r_s * e + _exp_kernel_integral(model, s, t)
        return float(mean), float(var)
    raise UnsupportedModelError("analytic moments only for Vasicek and Hull-White")


def _hw_alpha(model: HullWhiteModel, t: float) -> float:
    a = model.theta_a
    f = float(model.fwd_curve.value(t))
    return f + model.sigma**2 * (1.0 - np.exp(-a * t)) ** 2 / (2.0 * a**2)


def _exp_kernel_integral(model: HullWhiteModel, s: float, t: float, step: float = 1e-3) -> float:
    """Simpson quadrature of exp(-a (t-u)) theta(u) over [s, t]."""
    if t == s:
        return 0.0
    n = max(2, int(np.ceil((t - s) / step)))
    n += n % 2  # Simpson needs an even interval count
    u = np.linspace(s, t, n + 1)
    g = np.exp(-model.a * (t - u)) * hull_white_theta(model.fwd_curve, model.theta_a, model.sigma, u)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((t - s) / n / 3.0 * np.sum(w * g))


def hull_white_theta(fwd_curve: ForwardCurve, a: float, sigma: float, t):
    """Drift fit theta(t) = d/dT f(0,t) + a f(0,t) + sigma^2 (1-e^{-2at})/(2a).

    The maturity derivative is a centered finite difference at the curve's
    native spacing (one-sided at the support endpoints).
    """
    t = np.asarray(t, dtype=float)
    out = fwd_curve.derivative(t) + a * fwd_curve.value(t)
    out = out + sigma**2 * (1.0 - np.exp(-2.0 * a * t)) / (2.0 * a)
    return out if out.shape else float(out)


def apply_impacted_measure(model, lam: float, lam_tilde: float):
    """Re-parametrize a model under the impact-adjusted pricing measure.

    With lambda(t) = lam * r and its impacted counterpart lam_tilde * r, the
    mean-reversion speed shifts by sigma * (lam_tilde - lam); Vasicek keeps
    k theta invariant, so theta rescales accordingly.
    """
    d = lam_tilde - lam
    if isinstance(model, VasicekModel):
        if model.sigma * d == 0.0:
            return replace(model, measure="Qtilde")
        k_t = model.k - model.sigma * d
        if k_t <= 0:
            raise MeasureTransformError(
                f"need k > sigma*(lam_tilde-lam): k={model.k}, sigma*(lam_tilde-lam)={model.sigma * d}"
            )
        return replace(model, k=k_t, theta=model.k * model.theta / k_t, measure="Qtilde")
    if isinstance(model, HullWhiteModel):
        a_t = model.a - model.sigma * d
        if a_t <= 0:
            raise MeasureTransformError(
                f"need a > sigma*(lam_tilde-lam): a={model.a}, sigma*(lam_tilde-lam)={model.sigma * d}"
            )
        return replace(model, a=a_t, theta_a=model.theta_a, measure="Qtilde")
    raise UnsupportedModelError("measure transform only for Vasicek and Hull-White")
