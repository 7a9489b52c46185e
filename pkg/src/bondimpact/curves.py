"""Cross-impact propagation across maturities and the averaged-curve experiment.

Trading one maturity pins the impact-adjusted market price of risk; every
other bond on the curve must adjust its drift to keep that ratio maturity
independent. The simulator runs the resulting coupled system path by path:

  1. Euler path of the short rate.
  2. Closed-form unimpacted prices P(t, S) at the simulated rate, all S.
  3. Unimpacted yields.
  4. Directly impacted price of the traded bond: P - (instantaneous +
     transient impact).
  5. Its impacted yield.
  6. Euler integration of the cross-impacted price of every other maturity,
     driven by the same Brownian increments as the short rate.
  7. Cross-impacted yields.
  8. Fixed-order averaging over paths.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import mc
from .bonds import yield_from_price
from .errors import ConfigError, DegenerateVolatilityError, GridError
from .grids import TimeGrid
from .impact import ImpactSpec, SpeedSchedule, impact_density, overall_impact
from .rates import VasicekModel

__all__ = [
    "CurveExperimentConfig",
    "CurveSnapshot",
    "CurveResult",
    "cross_impact_drift",
    "simulate_curve_paths",
    "simulate_impacted_curve",
    "first_crossing_time",
    "rho_sweep",
    "mean_reversion_sweep",
]

_CHUNK = 1024


@dataclass(frozen=True)
class CurveExperimentConfig:
    model: VasicekModel
    maturities: tuple
    traded_maturity: float
    impact: ImpactSpec
    speed: SpeedSchedule
    horizon: float
    n_steps: int
    n_paths: int
    seed: int
    lam: float = 0.0
    snapshot_days: tuple = (5, 11, 270)
    crossing_atol: float = 1e-6

    def __post_init__(self):
        if self.traded_maturity not in tuple(self.maturities):
            raise ConfigError("maturities must contain the traded maturity")
        if abs(self.impact.T - self.traded_maturity) > 1e-12:
            raise ConfigError("impact.T must equal the traded maturity")
        if abs(self.speed.tau - self.impact.tau) > 1e-12:
            raise ConfigError("speed schedule horizon must equal impact.tau")
        if self.impact.tau >= self.traded_maturity:
            raise ConfigError("tau must be < traded maturity (kernel positivity)")
        if self.horizon <= 0 or self.n_steps < 1 or self.n_paths < 1:
            raise ConfigError("horizon, n_steps and n_paths must be positive")
        if self.horizon > min(self.maturities) + 1e-12 and self.horizon > self.traded_maturity:
            raise ConfigError("observation horizon may not exceed the traded maturity")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.horizon, self.n_steps)

    def snapshot_indices(self) -> list[int]:
        dt = self.grid.dt
        idx = []
        for d in self.snapshot_days:
            t = d / 365.0
            i = int(round(t / dt))
            if i < 0 or i > self.n_steps:
                raise ConfigError(f"snapshot day {d} outside the simulated window")
            idx.append(i)
        return idx


@dataclass(frozen=True)
class CurveSnapshot:
    """Cross-sectional averages at one observation time."""

    t: float
    day: float
    maturities: np.ndarray
    P_mean: np.ndarray
    P_se: np.ndarray
    Ptilde_mean: np.ndarray
    Ptilde_se: np.ndarray
    Y_mean: np.ndarray
    Y_se: np.ndarray
    Ytilde_mean: np.ndarray
    Ytilde_se: np.ndarray
    Y_of_mean_price: np.ndarray
    Ytilde_of_mean_price: np.ndarray
    degenerate_counts: np.ndarray


@dataclass(frozen=True)
class CurveResult:
    config: CurveExperimentConfig
    times: np.ndarray
    P_mean: np.ndarray  # (n_maturities, n_times)
    P_se: np.ndarray
    Ptilde_mean: np.ndarray
    Ptilde_se: np.ndarray
    snapshots: tuple
    degenerate_counts: np.ndarray
    pull_to_par_gap: dict = field(default_factory=dict)


def cross_impact_drift(r, p_tilde_T, j_T, mu_T, sigma_T, sigma_S, p_tilde_S):
    """Drift forced on a non-traded maturity by the shared market price of risk.

    mu_S = (sigma_S / sigma_T) (mu_T - r P_tilde_T - J_T) + r P_tilde_S.
    """
    sigma_T = np.asarray(sigma_T, dtype=float)
    if np.any(sigma_T == 0.0):
        raise DegenerateVolatilityError("sigma_T = 0 in cross-impact drift")
    r = np.asarray(r, dtype=float)
    return (np.asarray(sigma_S) / sigma_T) * (
        np.asarray(mu_T) - r * np.asarray(p_tilde_T) - np.asarray(j_T)
    ) + r * np.asarray(p_tilde_S)


def _coefficient_tables(cfg: CurveExperimentConfig):
    """Closed-form A, B and their time derivatives per (maturity, grid time)."""
    m = cfg.model
    times = cfg.grid.times
    mats = np.asarray(cfg.maturities, dtype=float)
    tau_mat = mats[:, None] - times[None, :]
    if np.any(tau_mat < -1e-12):
        raise GridError("grid extends beyond a quoted maturity")
    tau_mat = np.maximum(tau_mat, 0.0)
    B = (1.0 - np.exp(-m.k * tau_mat)) / m.k
    lnA = (m.theta - m.sigma**2 / (2.0 * m.k**2)) * (B - tau_mat) - m.sigma**2 * B**2 / (4.0 * m.k)
    A = np.exp(lnA)
    B_t = -np.exp(-m.k * tau_mat)
    A_t = A * ((m.theta - m.sigma**2 / (2.0 * m.k**2)) * (B_t + 1.0) - m.sigma**2 / (2.0 * m.k) * B * B_t)
    return A, B, A_t, B_t


def simulate_curve_paths(cfg: CurveExperimentConfig, stream_ids) -> dict:
    """Per-path arrays (short rate, unimpacted and impacted prices) for the
    given substreams. Building block of the averaged experiment; also handy
    for pointwise consistency checks."""
    ids = np.asarray(stream_ids, dtype=np.int64)
    grid = cfg.grid
    times, dt, n = grid.times, grid.dt, grid.n_steps
    model = cfg.model
    mats = np.asarray(cfg.maturities, dtype=float)
    jT = int(np.argmin(np.abs(mats - cfg.traded_maturity)))
    A, B, A_t, B_t = _coefficient_tables(cfg)

    impact = overall_impact(cfg.speed, cfg.impact, grid)
    dens = impact_density(cfg.speed, cfg.impact, grid)

    dW = mc.normal_increment_matrix(cfg.seed, ids, n, dt)
    r = np.empty((ids.size, n + 1))
    r[:, 0] = model.r0
    sig = model.sigma
    for i in range(n):
        ri = r[:, i]
        drift = model.k * (model.theta - ri) + sig * cfg.lam * ri
        r[:, i + 1] = ri + drift * dt + sig * dW[:, i]

    P = A[:, None, :] * np.exp(-B[:, None, :] * r[None, :, :])  # (mats, paths, times)
    Pt = P.copy()

    if cfg.impact.y == 0.0 and cfg.speed.is_zero():
        return {"times": times, "r": r, "P": P, "Ptilde": Pt, "traded_index": jT}

    Pt[jT] = P[jT] - impact[None, :]

    cross = [j for j in range(mats.size) if j != jT]
    if cross:
        if sig == 0.0:
            raise DegenerateVolatilityError(
                "cross-impact propagation needs sigma > 0 (bond volatilities vanish)"
            )
        cx = np.array(cross)
        for i in range(n):
            ri = r[:, i]
            eT = np.exp(-B[jT, i] * ri)
            muT = eT * (
                A_t[jT, i]
                - A[jT, i] * B_t[jT, i] * ri
                + 0.5 * A[jT, i] * B[jT, i] ** 2 * sig**2
                - A[jT, i] * B[jT, i] * (model.k * (model.theta - ri) + sig * cfg.lam * ri)
            )
            sigT = -sig * A[jT, i] * B[jT, i] * eT
            common = (muT - ri * Pt[jT, :, i] - dens[i]) / sigT  # shared lambda term
            sigS = -sig * (A[cx, i, None] * B[cx, i, None]) * np.exp(-B[cx, i, None] * ri[None, :])
            drift = ri[None, :] * Pt[cx, :, i] + sigS * common[None, :]
            Pt[cx, :, i + 1] = Pt[cx, :, i] + drift * dt + sigS * dW[None, :, i]
    return {"times": times, "r": r, "P": P, "Ptilde": Pt, "traded_index": jT}


def _accumulate(cfg: CurveExperimentConfig, ids, snap_idx):
    data = simulate_curve_paths(cfg, ids)
    P, Pt = data["P"], data["Ptilde"]
    n_mats = P.shape[0]
    bad = (Pt <= 0.0).any(axis=2)  # (mats, paths)
    acc = {
        "sum_P": P.sum(axis=1),
        "sumsq_P": (P**2).sum(axis=1),
        "sum_Pt": Pt.sum(axis=1),
        "sumsq_Pt": (Pt**2).sum(axis=1),
        "bad": bad.sum(axis=1),
    }
    mats = np.asarray(cfg.maturities, dtype=float)
    nY = len(snap_idx)
    sum_Y = np.zeros((n_mats, nY))
    sumsq_Y = np.zeros((n_mats, nY))
    sum_Yt = np.zeros((n_mats, nY))
    sumsq_Yt = np.zeros((n_mats, nY))
    n_valid = np.zeros(n_mats, dtype=np.int64)
    for j in range(n_mats):
        ok = ~bad[j]
        n_valid[j] = ok.sum()
        if n_valid[j] == 0:
            continue
        expo = -1.0 / mats[j]
        for s, i in enumerate(snap_idx):
            y = P[j, ok, i] ** expo - 1.0
            yt = Pt[j, ok, i] ** expo - 1.0
            sum_Y[j, s] = y.sum()
            sumsq_Y[j, s] = (y**2).sum()
            sum_Yt[j, s] = yt.sum()
            sumsq_Yt[j, s] = (yt**2).sum()
    acc.update(sum_Y=sum_Y, sumsq_Y=sumsq_Y, sum_Yt=sum_Yt, sumsq_Yt=sumsq_Yt, n_valid=n_valid)
    return acc


def _mean_se(total, total_sq, n):
    n = np.asarray(n, dtype=float)
    mean = total / n
    var = np.maximum(total_sq - n * mean**2, 0.0) / np.maximum(n - 1.0, 1.0)
    return mean, np.sqrt(var / np.maximum(n, 1.0))


def simulate_impacted_curve(cfg: CurveExperimentConfig, threads: int = 1) -> CurveResult:
    """Averaged impacted vs unimpacted curves over the full path ensemble.

    Chunks of fixed size are reduced in a fixed order, so the output is
    bit-identical for any worker count.
    """
    snap_idx = cfg.snapshot_indices()
    ids = np.arange(cfg.n_paths, dtype=np.int64)
    chunks = [ids[i : i + _CHUNK] for i in range(0, cfg.n_paths, _CHUNK)]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(lambda c: _accumulate(cfg, c, snap_idx), chunks))
    else:
        partials = [_accumulate(cfg, c, snap_idx) for c in chunks]

    total = partials[0]
    for part in partials[1:]:  # fixed chunk order
        for key in total:
            total[key] = total[key] + part[key]

    n = cfg.n_paths
    P_mean, P_se = _mean_se(total["sum_P"], total["sumsq_P"], n)
    Pt_mean, Pt_se = _mean_se(total["sum_Pt"], total["sumsq_Pt"], n)
    n_valid = total["n_valid"]
    Y_mean, Y_se = _mean_se(total["sum_Y"], total["sumsq_Y"], n_valid[:, None])
    Yt_mean, Yt_se = _mean_se(total["sum_Yt"], total["sumsq_Yt"], n_valid[:, None])

    mats = np.asarray(cfg.maturities, dtype=float)
    times = cfg.grid.times
    snapshots = []
    for s, i in enumerate(snap_idx):
        snapshots.append(
            CurveSnapshot(
                t=float(times[i]),
                day=float(times[i] * 365.0),
                maturities=mats,
                P_mean=P_mean[:, i],
                P_se=P_se[:, i],
                Ptilde_mean=Pt_mean[:, i],
                Ptilde_se=Pt_se[:, i],
                Y_mean=Y_mean[:, s],
                Y_se=Y_se[:, s],
                Ytilde_mean=Yt_mean[:, s],
                Ytilde_se=Yt_se[:, s],
                Y_of_mean_price=np.array(
                    [yield_from_price(P_mean[j, i], mats[j]) for j in range(mats.size)]
                ),
                Ytilde_of_mean_price=np.array(
                    [
                        yield_from_price(Pt_mean[j, i], mats[j]) if Pt_mean[j, i] > 0 else np.nan
                        for j in range(mats.size)
                    ]
                ),
                degenerate_counts=total["bad"].astype(int),
            )
        )

    pull_to_par = {}
    for j, S in enumerate(mats):
        if S <= cfg.horizon + 1e-12:
            i = int(round(S / cfg.grid.dt))
            pull_to_par[float(S)] = float(Pt_mean[j, i] - 1.0)

    return CurveResult(
        config=cfg,
        times=times,
        P_mean=P_mean,
        P_se=P_se,
        Ptilde_mean=Pt_mean,
        Ptilde_se=Pt_se,
        snapshots=tuple(snapshots),
        degenerate_counts=total["bad"].astype(int),
        pull_to_par_gap=pull_to_par,
    )


def first_crossing_time(result: CurveResult, atol: float | None = None) -> dict:
    """Per maturity, first time (in days, after tau) the averaged impacted and
    unimpacted prices meet: a sign change of their difference or |diff| < atol.

    Returns {maturity: {"day": float | None, "degenerate": bool}}; day is None
    when the curves never meet inside the simulated window.
    """
    cfg = result.config
    if atol is None:
        atol = cfg.crossing_atol
    times = result.times
    tau = cfg.impact.tau
    start = int(np.searchsorted(times, tau, side="right"))
    out = {}
    for j, S in enumerate(np.asarray(cfg.maturities, dtype=float)):
        diff = result.Ptilde_mean[j] - result.P_mean[j]
        if start >= times.size:
            out[float(S)] = {"day": None, "degenerate": False}
            continue
        if abs(diff[start]) < atol:
            out[float(S)] = {"day": float(times[start] * 365.0), "degenerate": True}
            continue
        s0 = np.sign(diff[start])
        day = None
        for i in range(start + 1, times.size):
            if abs(diff[i]) < atol or np.sign(diff[i]) != s0:
                day = float(times[i] * 365.0)
                break
        out[float(S)] = {"day": day, "degenerate": False}
    return out


def rho_sweep(cfg: CurveExperimentConfig, rho_values, sweep_maturity: float = 1.0, threads: int = 1) -> dict:
    """Averaged cross-impacted price path of one maturity for several decay
    speeds, under common random numbers (same master seed throughout)."""
    mats = np.asarray(cfg.maturities, dtype=float)
    j = int(np.argmin(np.abs(mats - sweep_maturity)))
    if abs(mats[j] - sweep_maturity) > 1e-9:
        raise ConfigError("sweep maturity must be one of the quoted maturities")
    out = {"times": cfg.grid.times, "maturity": float(sweep_maturity), "impacted": {}}
    for rho in rho_values:
        run = simulate_impacted_curve(replace(cfg, impact=replace(cfg.impact, rho=float(rho))), threads=threads)
        out["impacted"][float(rho)] = run.Ptilde_mean[j]
        out["unimpacted"] = run.P_mean[j]  # identical across rho (same seed)
    return out


def mean_reversion_sweep(cfg: CurveExperimentConfig, k_values, obs_day: float = 270.0, threads: int = 1) -> dict:
    """Impacted vs unimpacted yield curves at one observation day for several
    mean-reversion speeds, paired by seed."""
    days = tuple(cfg.snapshot_days)
    if obs_day not in days:
        cfg = replace(cfg, snapshot_days=days + (obs_day,))
    out = {}
    for k in k_values:
        run = simulate_impacted_curve(replace(cfg, model=replace(cfg.model, k=float(k))), threads=threads)
        snap = next(s for s in run.snapshots if abs(s.day - obs_day) < 0.5)
        out[float(k)] = snap
    return out
