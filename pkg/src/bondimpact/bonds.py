"""Zero-coupon bond closed forms, Riccati integration, yields and coupon bonds.

Affine models price bonds as P(t,T) = A(t,T) exp(-B(t,T) r(t)). Vasicek and
Hull-White expose closed forms; generic affine coefficient tables go through
the backward Riccati ODE integrator, which doubles as the oracle for the
closed forms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVolatilityError,
    DomainError,
    MissingInputError,
    ParameterError,
    UnsupportedModelError,
)
from .grids import TimeGrid
from .rates import HullWhiteModel, VasicekModel

__all__ = [
    "BondCoeffs",
    "BondCoeffsTable",
    "affine_coeffs",
    "riccati_solve",
    "zcb_price",
    "zcb_drift_vol",
    "yield_from_price",
    "CouponSchedule",
    "coupon_bond_price",
]


@dataclass(frozen=True)
class BondCoeffs:
    A: float
    B: float


@dataclass(frozen=True)
class BondCoeffsTable:
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray


def _vasicek_AB(k: float, theta: float, sigma: float, t, T):
    tau = T - t
    B = (1.0 - np.exp(-k * tau)) / k
    lnA = (theta - sigma**2 / (2.0 * k**2)) * (B - tau) - sigma**2 * B**2 / (4.0 * k)
    return np.exp(lnA), B


def _hw_quadrature_lnA(model: HullWhiteModel, t: float, T: float, step: float = 1e-3) -> float:
    """ln A(t,T) = integral of (0.5 sigma^2 B(u,T)^2 - theta(u) B(u,T)) over [t,T]
    (Simpson), from the backward bond ODE d/du ln A = theta B - 0.5 sigma^2 B^2.

    Needed when the mean-reversion speed was shifted by a measure change and
    no longer matches the speed inside the theta(t) fit.
    """
    from .rates import hull_white_theta

    if T == t:
        return 0.0
    n = max(2, int(np.ceil((T - t) / step)))
    n += n % 2
    u = np.linspace(t, T, n + 1)
    B = (1.0 - np.exp(-model.a * (T - u))) / model.a
    theta = hull_white_theta(model.fwd_curve, model.theta_a, model.sigma, u)
    g = 0.5 * model.sigma**2 * B**2 - theta * B
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((T - t) / n / 3.0 * np.sum(w * g))


def affine_coeffs(model, t: float, T: float) -> BondCoeffs:
    """Closed-form (A, B) with the model's own (possibly shifted) parameters."""
    if t > T:
        raise DomainError(f"need t <= T, got t={t}, T={T}")
    if isinstance(model, VasicekModel):
        A, B = _vasicek_AB(model.k, model.theta, model.sigma, t, T)
        return BondCoeffs(float(A), float(B))
    if isinstance(model, HullWhiteModel):
        a = model.a
        B = (1.0 - np.exp(-a * (T - t))) / a
        if model.a == model.theta_a:
            curve = model.fwd_curve
            pm_T, pm_t = curve.discount(T), curve.discount(t)
            f_t = float(curve.value(t))
            lnA = np.log(pm_T / pm_t) + B * f_t - model.sigma**2 * (
                1.0 - np.exp(-2.0 * a * t)
            ) * B**2 / (4.0 * a)
            return BondCoeffs(float(np.exp(lnA)), float(B))
        return BondCoeffs(float(np.exp(_hw_quadrature_lnA(model, t, T))), float(B))
    raise UnsupportedModelError("closed-form coefficients only for Vasicek and Hull-White")


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def riccati_solve(
    t_table,
    a,
    alpha,
    b,
    beta,
    T: float,
    grid: TimeGrid,
    max_step: float = 1e-3,
) -> BondCoeffsTable:
    """Integrate the affine bond ODEs backward from (A, B)(T) = (1, 0).

    d/dt B    = 0.5 alpha(t) B^2 - beta(t) B - 1
    d/dt ln A = -0.5 a(t) B^2 + b(t) B

    Classical RK4 with step at most ``max_step`` (and at most the grid
    spacing); coefficients are linearly interpolated from the sampled tables,
    which must cover [grid.t0, T].
    """
    t_table = np.asarray(t_table, dtype=float)
    tabs = {name: np.asarray(v, dtype=float) for name, v in zip("a alpha b beta".split(), (a, alpha, b, beta))}
    if t_table[0] > grid.t0 + 1e-12 or t_table[-1] < T - 1e-12:
        raise MissingInputError("coefficient tables must cover [grid.t0, T]")
    if grid.t1 > T + 1e-12:
        raise DomainError("grid may not extend beyond the bond maturity")

    def coef(name, t):
        return np.interp(t, t_table, tabs[name])

    def rhs(t, y):
        lnA, B = y
        return np.array(
            [
                -0.5 * coef("a", t) * B * B + coef("b", t) * B,
                0.5 * coef("alpha", t) * B * B - coef("beta", t) * B - 1.0,
            ]
        )

    times = grid.times
    out_lnA = np.empty(times.size)
    out_B = np.empty(times.size)
    y = np.array([0.0, 0.0])
    t_cur = T
    effective_step = min(max_step, grid.dt)
    for idx in range(times.size - 1, -1, -1):
        target = times[idx]
        if target > T:
            out_lnA[idx], out_B[idx] = np.nan, np.nan
            continue
        span = t_cur - target
        if span > 0:
            n_sub = max(1, int(np.ceil(span / effective_step)))
            h = -span / n_sub
            for _ in range(n_sub):
                y = _rk4_step(rhs, t_cur, y, h)
                t_cur += h
            t_cur = target
        out_lnA[idx], out_B[idx] = y
    return BondCoeffsTable(times=times.copy(), A=np.exp(out_lnA), B=out_B)


def zcb_price(model, t: float, T: float, r):
    """P(t,T) = A e^{-B r}; exactly 1 at t = T, positive everywhere."""
    cf = affine_coeffs(model, t, T)
    return cf.A * np.exp(-cf.B * np.asarray(r, dtype=float))


def zcb_drift_vol(model, t: float, T: float, r, lam: float = 0.0):
    """Physical-measure drift and volatility of the T-bond price.

    The pricing-measure coefficients (A, B) are combined with the short-rate
    drift shifted by sigma * lam * r, so the extracted drift-to-vol excess
    ratio of the output equals lam * r by construction. The volatility is
    negative by convention (sigma_T = -sigma A B e^{-B r}).
    """
    if t >= T:
        raise DegenerateVolatilityError("t >= T gives zero bond volatility")
    r = np.asarray(r, dtype=float)
    if isinstance(model, VasicekModel):
        k, theta, sigma = model.k, model.theta, model.sigma
        A, B = _vasicek_AB(k, theta, sigma, t, T)
        B_t = -np.exp(-k * (T - t))
        A_t = A * ((theta - sigma**2 / (2.0 * k**2)) * (B_t + 1.0) - sigma**2 / (2.0 * k) * B * B_t)
        sig_r = sigma
        m = k * (theta - r) + sig_r * lam * r
    elif isinstance(model, HullWhiteModel):
        a, sigma = model.a, model.sigma
        cf = affine_coeffs(model, t, T)
        A, B = cf.A, cf.B
        B_t = -np.exp(-a * (T - t))
        # d/dt ln A = theta(t) B - 0.5 sigma^2 B^2 (backward bond ODE)
        A_t = A * (float(model.theta(t)) * B - 0.5 * sigma**2 * B**2)
        sig_r = sigma
        m = model.drift(t, r) + sig_r * lam * r
    else:
        raise UnsupportedModelError("drift/vol only for Vasicek and Hull-White")
    e = np.exp(-B * r)
    mu_T = e * (A_t - A * B_t * r + 0.5 * A * B**2 * sig_r**2 - A * B * m)
    sigma_T = -sig_r * A * B * e
    return mu_T, sigma_T


def yield_from_price(price, T: float, t: float = 0.0, convention: str = "paper"):
    """Yield P^{-1/T} - 1.

    ``convention='paper'`` uses the absolute maturity T in the exponent at
    every observation time (the reproduction target); 'time-to-maturity'
    uses T - t instead.
    """
    price = np.asarray(price, dtype=float)
    if np.any(price <= 0):
        raise DomainError("yield undefined for price <= 0")
    if convention == "paper":
        expo = T
    elif convention == "time-to-maturity":
        expo = T - t
    else:
        raise ParameterError(f"unknown yield convention {convention!r}")
    if expo <= 0:
        raise DomainError("yield exponent horizon must be positive")
    out = price ** (-1.0 / expo) - 1.0
    return out if out.shape else float(out)


@dataclass(frozen=True)
class CouponSchedule:
    """Coupon payment dates/amounts plus the reimbursement notional."""

    maturities: np.ndarray
    coupons: np.ndarray
    notional: float

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        cpns = np.asarray(self.coupons, dtype=float)
        if mats.ndim != 1 or mats.size == 0 or mats.shape != cpns.shape:
            raise ParameterError("need matching nonempty maturity/coupon arrays")
        if np.any(np.diff(mats) <= 0):
            raise ParameterError("coupon maturities must be strictly increasing")
        if np.any(cpns < 0):
            raise ParameterError("coupons must be nonnegative")
        if self.notional <= 0:
            raise ParameterError("notional must be positive")
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "coupons", cpns)

    @classmethod
    def from_csv(cls, path, notional: float) -> "CouponSchedule":
        """CSV rows (maturity_years, coupon); header optional."""
        mats, cpns = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    m, c = float(row[0]), float(row[1])
                except ValueError:
                    continue
                mats.append(m)
                cpns.append(c)
        return cls(np.asarray(mats), np.asarray(cpns), notional)


def coupon_bond_price(schedule: CouponSchedule, zcb_prices) -> float:
    """Sum of coupon legs plus notional: sum c_i P(t,T_i) + N P(t,T_n)."""
    p = np.asarray(zcb_prices, dtype=float)
    if p.shape != schedule.maturities.shape or np.any(~np.isfinite(p)):
        raise MissingInputError("need one finite zero-coupon price per coupon maturity")
    return float(np.dot(schedule.coupons, p) + schedule.notional * p[-1])
