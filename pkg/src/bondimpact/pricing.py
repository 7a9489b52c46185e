"""Market price of risk, impacted rates and Eurodollar futures pricing.

All measure changes are realized as parameter transforms on the short-rate
model (never as simulated density processes). The impacted futures price is
available both in closed form and as a Monte-Carlo estimate, each usable as
the oracle for the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mc
from .bonds import affine_coeffs
from .errors import DegenerateVolatilityError, DomainError, ParameterError
from .grids import TimeGrid
from .rates import (
    HullWhiteModel,
    VasicekModel,
    analytic_moments,
    apply_impacted_measure,
    _euler_chunk,
)

__all__ = [
    "MprConfig",
    "market_price_of_risk",
    "impacted_mpr",
    "year_fraction",
    "impacted_libor",
    "eurodollar_closed_form",
    "eurodollar_mc",
    "impacted_zcb_expectation_mc",
]

_MC_CHUNK = 4096


@dataclass(frozen=True)
class MprConfig:
    """Slopes of the affine market price of risk lambda(t) = lam * r(t) and
    its impact-adjusted counterpart lam_tilde * r(t)."""

    lam: float = 0.0
    lam_tilde: float = 0.0


def market_price_of_risk(mu_T, sigma_T, P, r):
    """(mu_T - r P) / sigma_T; maturity-independent for consistent inputs."""
    sigma_T = np.asarray(sigma_T, dtype=float)
    if np.any(sigma_T == 0.0):
        raise DegenerateVolatilityError("sigma_T = 0: market price of risk undefined")
    return (np.asarray(mu_T) - np.asarray(r) * np.asarray(P)) / sigma_T


def impacted_mpr(mu_T, sigma_T, P_tilde, J_T, r):
    """(mu_T - r P_tilde - J_T) / sigma_T, the impact-absorbing analogue."""
    sigma_T = np.asarray(sigma_T, dtype=float)
    if np.any(sigma_T == 0.0):
        raise DegenerateVolatilityError("sigma_T = 0: impacted market price of risk undefined")
    return (np.asarray(mu_T) - np.asarray(r) * np.asarray(P_tilde) - np.asarray(J_T)) / sigma_T


def year_fraction(S: float, T: float, daycount: str = "act365") -> float:
    if T <= S:
        raise DomainError("need S < T for a positive accrual period")
    if daycount == "act365":
        return T - S
    if daycount == "act360":
        return (T - S) * 365.0 / 360.0
    raise ParameterError(f"unknown daycount {daycount!r}")


def impacted_libor(p_tilde, S: float, T: float, daycount: str = "act365"):
    """Simply-compounded rate consistent with the impacted bond price.

    Negative outputs are legitimate (impact can push the price above par).
    """
    tau = year_fraction(S, T, daycount)
    p = np.asarray(p_tilde, dtype=float)
    if np.any(p <= 0.0):
        raise DomainError("impacted LIBOR undefined for price <= 0")
    out = (1.0 - p) / (tau * p)
    return out if out.shape else float(out)


def _tilde_model(model, mpr: MprConfig):
    if getattr(model, "measure", None) == "Qtilde":
        return model
    return apply_impacted_measure(model, mpr.lam, mpr.lam_tilde)


def _inverse_price_moment(model, mpr: MprConfig, t: float, T: float, mean_convention: str):
    """E[1 / P(t,T)] under the impacted pricing measure, in closed form."""
    tilde = _tilde_model(model, mpr)
    cf = affine_coeffs(tilde, t, T)
    if isinstance(tilde, VasicekModel):
        k_t = tilde.k
        if mean_convention == "dynamics-consistent":
            theta_used = tilde.theta
        elif mean_convention == "paper-literal":
            # long-run level of the *unshifted* dynamics inside the mean
            theta_used = tilde.k * tilde.theta / (tilde.k + tilde.sigma * (mpr.lam_tilde - mpr.lam)) \
                if getattr(model, "measure", None) == "Qtilde" else model.theta
        else:
            raise ParameterError(f"unknown mean convention {mean_convention!r}")
        e = np.exp(-k_t * t)
        mean_r = tilde.r0 * e + theta_used * (1.0 - e)
        var_r = tilde.sigma**2 * (1.0 - np.exp(-2.0 * k_t * t)) / (2.0 * k_t) if tilde.sigma > 0 else 0.0
    elif isinstance(tilde, HullWhiteModel):
        mean_r, var_r = analytic_moments(tilde, 0.0, t, tilde.r0)
    else:
        raise ParameterError("Eurodollar pricing needs a Vasicek or Hull-White model")
    return float(np.exp(cf.B * mean_r + 0.5 * cf.B**2 * var_r) / cf.A)


def eurodollar_closed_form(
    model,
    mpr: MprConfig,
    t: float,
    T: float,
    notional: float = 1.0,
    daycount: str = "act365",
    mean_convention: str = "dynamics-consistent",
) -> float:
    """Impacted Eurodollar futures price N (1 + 1/tau - E[1/P(t,T)] / tau).

    No discounting is applied (continuous rebalancing of the future).
    ``mean_convention`` switches the long-run level used inside the Gaussian
    mean between the shifted dynamics value ('dynamics-consistent', default)
    and the unshifted one ('paper-literal'); the distinction only exists for
    Vasicek.
    """
    tau = year_fraction(t, T, daycount)
    inv = _inverse_price_moment(model, mpr, t, T, mean_convention)
    return notional * (1.0 + 1.0 / tau - inv / tau)


def _discount_factors(model, t0: float, t1: float, seed: int, n_paths: int, steps_per_year: int):
    """Per-path exp(-integral of r over [t0, t1]) via Euler paths + trapezoid."""
    n_steps = max(1, int(np.ceil((t1 - t0) * steps_per_year)))
    grid = TimeGrid(t0, t1, n_steps)
    disc = np.empty(n_paths)
    terminal = np.empty(n_paths)
    for start in range(0, n_paths, _MC_CHUNK):
        ids = np.arange(start, min(start + _MC_CHUNK, n_paths), dtype=np.int64)
        r = _euler_chunk(model, grid, seed, ids, 0.0)
        integral = np.trapezoid(r, dx=grid.dt, axis=1)
        disc[ids] = np.exp(-integral)
        terminal[ids] = r[:, -1]
    return disc, terminal


def eurodollar_mc(
    model,
    mpr: MprConfig,
    t: float,
    T: float,
    notional: float = 1.0,
    daycount: str = "act365",
    seed: int = 0,
    n_paths: int = 100_000,
    steps_per_year: int = 365,
) -> tuple[float, float]:
    """Monte-Carlo Eurodollar price and its standard error.

    Simulates the short rate under the impacted pricing measure to the
    futures expiry t, evaluates 1/P(t,T) = e^{B r(t)} / A per path and maps
    the sample mean through the futures formula. The map is affine in the
    mean, so the delta-method standard error is exact.
    """
    if n_paths < 2:
        raise ParameterError("n_paths must be >= 2")
    tilde = _tilde_model(model, mpr)
    tau = year_fraction(t, T, daycount)
    cf = affine_coeffs(tilde, t, T)
    n_steps = max(1, int(np.ceil(t * steps_per_year)))
    grid = TimeGrid(0.0, t, n_steps)
    inv = np.empty(n_paths)
    for start in range(0, n_paths, _MC_CHUNK):
        ids = np.arange(start, min(start + _MC_CHUNK, n_paths), dtype=np.int64)
        r = _euler_chunk(tilde, grid, seed, ids, 0.0)
        inv[ids] = np.exp(cf.B * r[:, -1]) / cf.A
    mean, se = mc.reduce_mean_se(inv)
    price = notional * (1.0 + 1.0 / tau - mean / tau)
    return float(price), float(notional * se / tau)


def impacted_zcb_expectation_mc(
    model,
    t: float,
    T: float,
    seed: int = 0,
    n_paths: int = 100_000,
    steps_per_year: int = 365,
) -> tuple[float, float]:
    """Sample mean of exp(-integral of r over [t, T]) and its standard error.

    The model is simulated with its own parameters (pass the shifted model
    for impacted prices); paths start from r(t) = model.r0, so the estimate
    targets the time-t bond price at that rate and matches the closed form
    within Monte-Carlo error.
    """
    if t > T:
        raise DomainError("need t <= T")
    if t == T:
        return 1.0, 0.0
    if n_paths < 2:
        raise ParameterError("n_paths must be >= 2")
    disc, _ = _discount_factors(model, t, T, seed, n_paths, steps_per_year)
    mean, se = mc.reduce_mean_se(disc)
    return float(mean), float(se)
