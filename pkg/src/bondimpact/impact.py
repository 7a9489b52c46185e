"""Trading-speed schedules, transient impact state and impacted bond prices.

Sign convention: positive speed means selling, so a buy program uses a
negative speed and pushes the impacted price above the unimpacted one.
The instantaneous and transient kernels l, K come from the power-law family
l(t) = kappa (1 - t/T)^alpha, K(t) = (1 - t/T)^beta (vanishing at the traded
maturity), with a constant-kernel variant used by the execution solver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .bonds import CouponSchedule, coupon_bond_price
from .errors import AggregationError, DomainError, ParameterError
from .grids import TimeGrid

__all__ = [
    "ImpactSpec",
    "SpeedSchedule",
    "inventory",
    "transient_impact",
    "overall_impact",
    "impact_density",
    "impacted_zcb",
    "degenerate_paths",
    "impacted_coupon_bond",
    "coupon_aggregates",
    "CouponAggregates",
]


@dataclass(frozen=True)
class ImpactSpec:
    """Impact kernels and transient-state parameters for one traded maturity.

    rho: transient decay (1/years); gamma: push coefficient; y: initial
    transient state; T: traded bond maturity; tau: trading horizon.
    """

    rho: float
    gamma: float
    y: float
    T: float
    tau: float
    kappa: float = 0.01
    alpha: float = 1.0
    beta: float = 1.0
    family: str = "power"
    K0: float = 1.0

    def __post_init__(self):
        if self.rho <= 0 or self.gamma <= 0:
            raise ParameterError("rho and gamma must be positive")
        if self.y < 0:
            raise ParameterError("initial transient state y must be nonnegative")
        if self.T <= 0 or self.tau <= 0:
            raise ParameterError("T and tau must be positive")
        if self.kappa <= 0:
            raise ParameterError("kappa must be positive")
        if self.family == "power":
            if self.alpha < 1 or self.beta < 1:
                raise ParameterError("kernel exponents alpha, beta must be >= 1")
            if self.tau >= self.T:
                raise ParameterError("tau < T required: l must stay positive on [0, tau]")
        elif self.family == "constant":
            if self.K0 <= 0:
                raise ParameterError("constant kernel K0 must be positive")
            if self.tau > self.T:
                raise ParameterError("tau <= T required")
        else:
            raise ParameterError(f"unknown kernel family {self.family!r}")

    @classmethod
    def constant(cls, l0: float, K0: float, rho: float, gamma: float, y: float, tau: float, T: float) -> "ImpactSpec":
        return cls(rho=rho, gamma=gamma, y=y, T=T, tau=tau, kappa=l0, K0=K0, family="constant")

    def for_maturity(self, T: float) -> "ImpactSpec":
        from dataclasses import replace

        return replace(self, T=T)

    def l(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.full(t.shape, self.kappa)
        else:
            out = self.kappa * np.maximum(1.0 - t / self.T, 0.0) ** self.alpha
        return out if out.shape else float(out)

    def K(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.full(t.shape, self.K0)
        else:
            out = np.maximum(1.0 - t / self.T, 0.0) ** self.beta
        return out if out.shape else float(out)

    def dl_dt(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.zeros(t.shape)
        else:
            out = -(self.kappa * self.alpha / self.T) * np.maximum(1.0 - t / self.T, 0.0) ** (self.alpha - 1.0)
        return out if out.shape else float(out)

    def dK_dt(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            out = np.zeros(t.shape)
        else:
            out = -(self.beta / self.T) * np.maximum(1.0 - t / self.T, 0.0) ** (self.beta - 1.0)
        return out if out.shape else float(out)


def _poly_eval(coeffs, u):
    out = np.zeros_like(np.asarray(u, dtype=float))
    for j, c in enumerate(coeffs):
        if c != 0.0:
            out = out + c * np.asarray(u) ** j
    return out


def _poly_antideriv(coeffs):
    return [0.0] + [c / (j + 1) for j, c in enumerate(coeffs)]


def _poly_deriv(coeffs):
    return [c * j for j, c in enumerate(coeffs)][1:] or [0.0]


def _exp_poly_integral(rho: float, coeffs, lo: float, hi: float, piece_start: float, t_ref: float) -> float:
    """Exact integral of exp(rho (s - t_ref)) * poly(s - piece_start) over [lo, hi].

    Intended for t_ref >= hi so the exponent stays nonpositive.
    """
    if hi <= lo:
        return 0.0

    def F(u):  # antiderivative of u^j e^{rho u}, summed over coefficients
        total = 0.0
        for j, c in enumerate(coeffs):
            if c == 0.0:
                continue
            term = 0.0
            fact = 1.0
            for i in range(j + 1):
                term += ((-1.0) ** i) * fact * u ** (j - i) / rho ** (i + 1)
                fact *= j - i
            total += c * term
        return math.exp(rho * u) * total

    shift = math.exp(rho * (piece_start - t_ref))
    return shift * (F(hi - piece_start) - F(lo - piece_start))


@dataclass(frozen=True)
class SpeedSchedule:
    """Piecewise-polynomial trading speed on [0, tau], identically 0 after.

    ``coeffs[i]`` are the local-time polynomial coefficients (constant term
    first) on [breaks[i], breaks[i+1]).
    """

    breaks: np.ndarray
    coeffs: tuple

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ParameterError("breaks must be strictly increasing with >= 2 knots")
        if abs(b[0]) > 0:
            raise ParameterError("schedule must start at t = 0")
        if len(self.coeffs) != b.size - 1:
            raise ParameterError("need one coefficient tuple per piece")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "coeffs", tuple(tuple(float(c) for c in p) for p in self.coeffs))

    @property
    def tau(self) -> float:
        return float(self.breaks[-1])

    @classmethod
    def constant(cls, c: float, tau: float) -> "SpeedSchedule":
        return cls(np.array([0.0, tau]), ((float(c),),))

    @classmethod
    def polynomial(cls, coeffs, tau: float) -> "SpeedSchedule":
        return cls(np.array([0.0, tau]), (tuple(float(c) for c in coeffs),))

    @classmethod
    def zero(cls, tau: float) -> "SpeedSchedule":
        return cls.constant(0.0, tau)

    @classmethod
    def from_csv(cls, path) -> "SpeedSchedule":
        """Rows (t_start, t_end, c0, c1, ...) in ascending order."""
        breaks, coeffs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    vals = [float(x) for x in row]
                except ValueError:
                    continue
                if not breaks:
                    breaks.append(vals[0])
                breaks.append(vals[1])
                coeffs.append(tuple(vals[2:]))
        return cls(np.asarray(breaks), tuple(coeffs))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_start", "t_end", "c0..."])
            for i, p in enumerate(self.coeffs):
                w.writerow(
                    [repr(float(self.breaks[i])), repr(float(self.breaks[i + 1]))]
                    + [repr(float(c)) for c in p]
                )

    def is_zero(self) -> bool:
        return all(all(c == 0.0 for c in p) for p in self.coeffs)

    def _piece_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.breaks, t, side="right") - 1)
        return min(idx, len(self.coeffs) - 1)

    def value(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t_arr)
        inside = (t_arr >= 0.0) & (t_arr <= self.tau)
        for i, p in enumerate(self.coeffs):
            lo, hi = self.breaks[i], self.breaks[i + 1]
            sel = inside & (t_arr >= lo) & ((t_arr < hi) | (i == len(self.coeffs) - 1))
            if np.any(sel):
                out[sel] = _poly_eval(p, t_arr[sel] - lo)
        return out if np.shape(t) else float(out[0])

    def derivative(self, t):
        """Pointwise a.e. time derivative (0 outside [0, tau])."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t_arr)
        inside = (t_arr >= 0.0) & (t_arr <= self.tau)
        for i, p in enumerate(self.coeffs):
            lo, hi = self.breaks[i], self.breaks[i + 1]
            sel = inside & (t_arr >= lo) & ((t_arr < hi) | (i == len(self.coeffs) - 1))
            if np.any(sel):
                out[sel] = _poly_eval(_poly_deriv(p), t_arr[sel] - lo)
        return out if np.shape(t) else float(out[0])

    def integral(self, t):
        """Exact cumulative integral of the speed over [0, t]."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        piece_full = np.array(
            [
                _poly_eval(_poly_antideriv(p), self.breaks[i + 1] - self.breaks[i])
                for i, p in enumerate(self.coeffs)
            ]
        )
        cum = np.concatenate([[0.0], np.cumsum(piece_full)])
        out = np.empty_like(t_arr)
        for j, tj in enumerate(t_arr):
            if tj <= 0.0:
                out[j] = 0.0
            elif tj >= self.tau:
                out[j] = cum[-1]
            else:
                i = self._piece_index(tj)
                out[j] = cum[i] + _poly_eval(_poly_antideriv(self.coeffs[i]), tj - self.breaks[i])
        return out if np.shape(t) else float(out[0])

    def exp_weighted_integral(self, rho: float, lo: float, hi: float, t_ref: float) -> float:
        """Exact integral of exp(rho (s - t_ref)) v(s) over [lo, hi]."""
        lo = max(lo, 0.0)
        hi = min(hi, self.tau)
        if hi <= lo:
            return 0.0
        total = 0.0
        for i, p in enumerate(self.coeffs):
            a = max(lo, self.breaks[i])
            b = min(hi, self.breaks[i + 1])
            if b > a:
                total += _exp_poly_integral(rho, p, a, b, self.breaks[i], t_ref)
        return total


def inventory(x: float, v: SpeedSchedule, grid: TimeGrid) -> np.ndarray:
    """Holdings path X(t) = x - integral of the selling rate."""
    return x - v.integral(grid.times)


def transient_impact(v: SpeedSchedule, spec: ImpactSpec, grid: TimeGrid) -> np.ndarray:
    """Transient state y e^{-rho t} + gamma * (exp decay convolved with v).

    Advanced with the exact exponential-integrator recursion per grid step
    (the polynomial pieces are integrated in closed form), never by Euler.
    """
    times = grid.times
    out = np.empty(times.size)
    rho, gamma = spec.rho, spec.gamma
    out[0] = spec.y * math.exp(-rho * times[0])
    if times[0] > 0:
        out[0] += gamma * v.exp_weighted_integral(rho, 0.0, times[0], times[0])
    for i in range(times.size - 1):
        t0, t1 = times[i], times[i + 1]
        out[i + 1] = out[i] * math.exp(-rho * (t1 - t0)) + gamma * v.exp_weighted_integral(rho, t0, t1, t1)
    return out


def overall_impact(v: SpeedSchedule, spec: ImpactSpec, grid: TimeGrid) -> np.ndarray:
    """I(t) = l(t) v(t) + K(t) Upsilon(t) on the grid nodes."""
    times = grid.times
    if times[-1] > spec.T + 1e-12:
        raise DomainError("impact evaluated beyond the traded maturity")
    ups = transient_impact(v, spec, grid)
    return spec.l(times) * v.value(times) + spec.K(times) * ups


def impact_density(v: SpeedSchedule, spec: ImpactSpec, grid: TimeGrid) -> np.ndarray:
    """Pointwise time derivative of the overall impact (a.e. in t).

    J = l' v + l v' + K' Upsilon + K (-rho Upsilon + v); jumps of v itself
    (start/stop of a block trade) are not represented, so integrating J
    reproduces I only between jump times.
    """
    times = grid.times
    ups = transient_impact(v, spec, grid)
    vv = v.value(times)
    return (
        spec.dl_dt(times) * vv
        + spec.l(times) * v.derivative(times)
        + spec.dK_dt(times) * ups
        + spec.K(times) * (-spec.rho * ups + vv)
    )


def impacted_zcb(P, v: SpeedSchedule, spec: ImpactSpec, grid: TimeGrid):
    """Impacted price P - I along the last axis of P.

    Degenerate outputs (<= 0 anywhere) are the caller's to exclude from
    yield statistics; see ``degenerate_paths``.
    """
    impact = overall_impact(v, spec, grid)
    P = np.asarray(P, dtype=float)
    if P.shape[-1] != impact.size:
        raise DomainError("price path and grid sizes disagree")
    return P - impact


def degenerate_paths(ptilde) -> np.ndarray:
    """Mask of paths whose impacted price hits <= 0 at any node."""
    p = np.atleast_2d(np.asarray(ptilde, dtype=float))
    return (p <= 0.0).any(axis=-1)


def impacted_coupon_bond(schedule: CouponSchedule, impacted_prices) -> float:
    """Coupon bond priced off impacted zero-coupon bonds."""
    return coupon_bond_price(schedule, impacted_prices)


@dataclass(frozen=True)
class CouponAggregates:
    """Aggregated kernel and trading speed for a coupon bond.

    K_B(t) = sum_i c_i K(t,T_i) + N K(t,T_n); v_B(t, s) is the K-weighted
    average of the per-maturity speeds (rows indexed by t, columns by s).
    """

    times: np.ndarray
    K_B: np.ndarray
    v_B: np.ndarray
    _spec: ImpactSpec
    _weights: np.ndarray  # (n_legs, n_times) kernel weights incl. notional
    _speeds: tuple

    def reconstruct(self, coupon_bond_path, grid: TimeGrid) -> np.ndarray:
        """Impacted coupon-bond path from the aggregates.

        The instantaneous leg enters directly as kappa K(t,T_i) v_i(t) (the
        formal Dirac term is never integrated); the transient leg uses the
        exact per-leg convolution. Equals the linear combination of impacted
        zero-coupon bonds to machine precision when l = kappa K.
        """
        times = grid.times
        base = np.asarray(coupon_bond_path, dtype=float)
        spec = self._spec
        out = base - spec.y * np.exp(-spec.rho * times) * self.K_B
        for w_row, (leg_spec, v) in zip(self._weights, self._speeds):
            conv = transient_impact(v, leg_spec, grid) - leg_spec.y * np.exp(-spec.rho * times)
            out = out - spec.kappa * w_row * v.value(times) - w_row * conv
        return out


def coupon_aggregates(
    schedule: CouponSchedule,
    spec: ImpactSpec,
    speeds,
    grid: TimeGrid,
) -> CouponAggregates:
    """Aggregate kernels/speeds for coupon-bond impact; requires l = kappa K.

    ``spec`` is the kernel template (its T is replaced per coupon maturity);
    ``speeds`` is one SpeedSchedule per coupon maturity.
    """
    if spec.family == "power" and spec.alpha != spec.beta:
        raise AggregationError("aggregation requires l proportional to K (alpha == beta)")
    if len(speeds) != schedule.maturities.size:
        raise AggregationError("need one speed schedule per coupon maturity")
    times = grid.times
    legs = []
    weights = []
    amounts = schedule.coupons.copy()
    amounts[-1] += schedule.notional
    for T_i, amount, v in zip(schedule.maturities, amounts, speeds):
        leg_spec = spec.for_maturity(float(T_i))
        legs.append((leg_spec, v))
        weights.append(amount * np.asarray(leg_spec.K(times)))
    weights = np.asarray(weights)
    K_B = weights.sum(axis=0)
    if np.any(K_B <= 0):
        raise AggregationError("aggregated kernel must stay positive on the grid")
    v_vals = np.asarray([v.value(times) for _, v in legs])  # (legs, s)
    v_B = (weights[:, :, None] * v_vals[:, None, :]).sum(axis=0) / K_B[:, None]
    return CouponAggregates(
        times=times,
        K_B=K_B,
        v_B=v_B,
        _spec=spec,
        _weights=weights,
        _speeds=tuple(legs),
    )
