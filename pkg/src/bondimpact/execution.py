"""Linear-feedback optimal execution with transient impact on a bond.

The optimality system couples inventory X, transient state Upsilon, speed v
and an auxiliary adjoint Z through a time-dependent 4x4 linear ODE system.
The solver builds the fundamental solution, forms the propagator and the
terminal-condition vector, and forward-integrates the feedback law. Two
price regimes are implemented: martingale (zero drift) and deterministic
drift; in both, every conditional expectation in the feedback reduces to a
plain integral, closed by a damped fixed-point iteration when the kernels
are time varying.

An independent brute-force oracle discretizes the speed as piecewise
constant, assembles the objective as an exact concave quadratic and solves
the stationarity system directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AdmissibilityError,
    ConditioningError,
    DomainError,
    ParameterError,
    RegimeError,
)
from .impact import ImpactSpec

__all__ = [
    "ExecutionProblem",
    "ExecutionSolution",
    "AdmissibilityReport",
    "lambda_fn",
    "lambda_deriv",
    "build_A",
    "fundamental_solution",
    "psi",
    "g_vector",
    "feedback_coeffs",
    "check_admissibility",
    "solve_execution",
    "objective",
    "brute_force_qp",
    "foc_residual",
]


@dataclass(frozen=True)
class ExecutionProblem:
    """Unwind ``x`` units of the T-bond over [0, tau] against impact costs.

    price0 is P(0,T). ``mu`` is an optional sampled deterministic drift
    (times, values); None means the martingale price regime.
    """

    x: float
    tau: float
    phi: float
    varrho: float
    impact: ImpactSpec
    price0: float
    mu: tuple | None = None

    def __post_init__(self):
        if self.phi < 0 or self.varrho < 0:
            raise ParameterError("phi and varrho must be nonnegative")
        if abs(self.tau - self.impact.tau) > 1e-12:
            raise ParameterError("problem tau must match impact.tau")
        if self.mu is not None:
            t, v = (np.asarray(a, dtype=float) for a in self.mu)
            if t.shape != v.shape or t.ndim != 1:
                raise ParameterError("mu must be a (times, values) table")
            object.__setattr__(self, "mu", (t, v))

    def price_drift(self, t):
        if self.mu is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return np.interp(t, self.mu[0], self.mu[1])

    def price_mean(self, t):
        """Expected unimpacted price path (exact for the martingale regime)."""
        t = np.asarray(t, dtype=float)
        if self.mu is None:
            return np.full(t.shape, self.price0)
        tt, vv = self.mu
        # integral of the piecewise-linear drift up to each t
        out = np.empty(t.shape)
        flat = t.ravel()
        for idx, ti in enumerate(flat):
            grid = np.linspace(0.0, ti, 201)
            out.ravel()[idx] = self.price0 + np.trapezoid(np.interp(grid, tt, vv), grid)
        return out


def lambda_fn(spec: ImpactSpec, t):
    """Lambda(t) = 1 / (2 l(t,T)); well defined on [0, tau] by kernel positivity."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > spec.tau + 1e-12):
        raise DomainError("Lambda only defined on the trading window [0, tau]")
    out = 1.0 / (2.0 * np.asarray(spec.l(t_arr)))
    return out if out.shape else float(out)


def lambda_deriv(spec: ImpactSpec, t):
    """Closed-form Lambda'(t) = -l'(t) / (2 l(t)^2)."""
    t_arr = np.asarray(t, dtype=float)
    l = np.asarray(spec.l(t_arr))
    out = -np.asarray(spec.dl_dt(t_arr)) / (2.0 * l**2)
    return out if out.shape else float(out)


def build_A(problem: ExecutionProblem, t: float) -> np.ndarray:
    """Time-dependent system matrix of the (X, Upsilon, v, Z) linear ODE."""
    spec = problem.impact
    lam = lambda_fn(spec, t)
    lam_p = lambda_deriv(spec, t)
    K = float(spec.K(t))
    K_p = float(spec.dK_dt(t))
    rho, gamma = spec.rho, spec.gamma
    return np.array(
        [
            [0.0, 0.0, -1.0, 0.0],
            [0.0, -rho, gamma, 0.0],
            [-2.0 * problem.phi * lam, rho * K * lam - lam_p * K - lam * K_p, 0.0, lam_p + rho * lam],
            [0.0, 0.0, K * gamma, rho],
        ]
    )


@dataclass(frozen=True)
class PhiTable:
    times: np.ndarray
    Phi: np.ndarray  # (n_times, 4, 4)
    liouville_error: float


def fundamental_solution(problem: ExecutionProblem, n_steps: int = 2000) -> PhiTable:
    """Phi' = A(t) Phi, Phi(0) = Id, by classical RK4 on n_steps intervals.

    The trace of A vanishes identically, so det Phi must stay at 1
    (Liouville); a collapse of the determinant raises a conditioning error.
    """
    tau = problem.tau
    h = tau / n_steps
    times = np.linspace(0.0, tau, n_steps + 1)
    Phi = np.empty((n_steps + 1, 4, 4))
    Phi[0] = np.eye(4)
    y = np.eye(4)
    for i in range(n_steps):
        t = times[i]
        k1 = build_A(problem, t) @ y
        k2 = build_A(problem, t + 0.5 * h) @ (y + 0.5 * h * k1)
        k3 = build_A(problem, t + 0.5 * h) @ (y + 0.5 * h * k2)
        k4 = build_A(problem, t + h) @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Phi[i + 1] = y
    if not np.all(np.isfinite(Phi)):
        raise ConditioningError("fundamental solution overflowed (system too stiff)")
    with np.errstate(over="raise"):
        try:
            dets = np.linalg.det(Phi)
        except FloatingPointError as exc:
            raise ConditioningError("fundamental solution determinant overflowed") from exc
    if np.any(~np.isfinite(dets)) or np.any(np.abs(dets) < 1e-12):
        raise ConditioningError("fundamental solution became numerically singular")
    return PhiTable(times=times, Phi=Phi, liouville_error=float(np.max(np.abs(dets - 1.0))))


def psi(table: PhiTable) -> np.ndarray:
    """State-transition matrix Psi(t, tau) = Phi(tau) Phi(t)^{-1} for every
    tabulated t, formed by linear solves (never an explicit inverse).

    This is the propagator the variation-of-constants solution of the
    optimality system uses: X(tau) = Psi(t, tau) X(t) + integral term.
    """
    target = np.broadcast_to(table.Phi[-1].T, table.Phi.shape)
    try:
        return np.linalg.solve(np.transpose(table.Phi, (0, 2, 1)), target).transpose(0, 2, 1)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("fundamental solution not invertible") from exc


def g_vector(problem: ExecutionProblem, psi_t: np.ndarray) -> np.ndarray:
    """Terminal-condition vector G^j = (varrho/l(tau)) Psi^{1j}
    - (K(tau)/(2 l(tau))) Psi^{2j} - Psi^{3j} (rows of Psi, per time)."""
    spec = problem.impact
    l_tau = float(spec.l(problem.tau))
    K_tau = float(spec.K(problem.tau))
    return (
        (problem.varrho / l_tau) * psi_t[..., 0, :]
        - (K_tau / (2.0 * l_tau)) * psi_t[..., 1, :]
        - psi_t[..., 2, :]
    )


def feedback_coeffs(psi_t: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Feedback functions (v0, v1, v2, v3) per tabulated time."""
    G1, G2, G3, G4 = G[..., 0], G[..., 1], G[..., 2], G[..., 3]
    p41, p42, p43, p44 = (psi_t[..., 3, j] for j in range(4))
    denom = G3 * p44
    v0 = 1.0 / (1.0 - G4 * p43 / denom)
    v1 = G4 * p41 / denom - G1 / G3
    v2 = G4 * p42 / denom - G2 / G3
    v3 = G4 / G3
    return np.stack([v0, v1, v2, v3], axis=-1)


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    a1_margin: float  # inf |G4 Psi43 - G3 Psi44|
    a2_sup_psi4: float
    a2_sup_G: float
    a3_psi44_margin: float
    a3_g3_margin: float
    offending_t: float | None = None

    def as_dict(self) -> dict:
        return {
            "ok": bool(self.ok),
            "a1_margin": self.a1_margin,
            "a2_sup_psi4": self.a2_sup_psi4,
            "a2_sup_G": self.a2_sup_G,
            "a3_psi44_margin": self.a3_psi44_margin,
            "a3_g3_margin": self.a3_g3_margin,
            "offending_t": self.offending_t,
        }


def _signed_margin(times: np.ndarray, values: np.ndarray) -> tuple[float, float | None]:
    """(inf |values|, first zero-crossing time); a sign change forces the
    continuous infimum to zero even if no grid node lands on it."""
    margin = float(np.min(np.abs(values)))
    signs = np.sign(values)
    flips = np.nonzero(signs[1:] * signs[:-1] < 0)[0]
    if flips.size or np.any(signs == 0):
        idx = flips[0] + 1 if flips.size else int(np.nonzero(signs == 0)[0][0])
        return 0.0, float(times[idx])
    return margin, None


def check_admissibility(problem: ExecutionProblem, n_steps: int = 2000) -> AdmissibilityReport:
    """Numerical inf/sup margins for the three solvability assumptions.

    Report-only: a sign change of a guarded quantity zeroes its margin and
    records the offending time.
    """
    table = fundamental_solution(problem, n_steps)
    psi_t = psi(table)
    G = g_vector(problem, psi_t)
    a1, t1 = _signed_margin(table.times, G[:, 3] * psi_t[:, 3, 2] - G[:, 2] * psi_t[:, 3, 3])
    sup_psi4 = float(np.max(np.abs(psi_t[:, 3, :])))
    sup_G = float(np.max(np.abs(G)))
    a3_psi44, t2 = _signed_margin(table.times, psi_t[:, 3, 3])
    a3_g3, t3 = _signed_margin(table.times, G[:, 2])
    ok = a1 > 0 and np.isfinite(sup_psi4) and np.isfinite(sup_G) and a3_psi44 > 0 and a3_g3 > 0
    offending = next((t for t in (t1, t2, t3) if t is not None), None)
    return AdmissibilityReport(ok, a1, sup_psi4, sup_G, a3_psi44, a3_g3, offending)


@dataclass(frozen=True)
class ExecutionSolution:
    times: np.ndarray
    v: np.ndarray
    X: np.ndarray
    Upsilon: np.ndarray
    Z: np.ndarray
    objective: float
    coeffs: np.ndarray  # (n+1, 4): v0..v3 at the output nodes
    G: np.ndarray  # (n+1, 4)
    admissibility: AdmissibilityReport
    foc: np.ndarray
    terminal_identity_error: float
    picard_iterations: int
    liouville_error: float

    @property
    def foc_sup(self) -> float:
        return float(np.max(np.abs(self.foc)))


def _lin_exp_weights(rho: float, h: float) -> tuple[float, float]:
    """Weights (w_near, w_far) of the exact integral of a linear function
    against e^{-rho u} over a step: int_0^h (g0 (1-u/h) + g1 u/h) e^{-rho u} du
    = g0 w_near + g1 w_far ... returned as (I0 - I1/h, I1/h)."""
    I0 = (1.0 - np.exp(-rho * h)) / rho
    I1 = (1.0 - np.exp(-rho * h) * (1.0 + rho * h)) / rho**2
    return I0 - I1 / h, I1 / h


def _transient_sampled(times: np.ndarray, v: np.ndarray, rho: float, gamma: float, y: float) -> np.ndarray:
    """Transient state driven by a sampled speed (linear between nodes),
    advanced with the exact exponential integrator."""
    out = np.empty(times.size)
    out[0] = y
    for i in range(times.size - 1):
        h = times[i + 1] - times[i]
        # weight near the step end (u = 0 of e^{-rho u}) belongs to v[i+1]
        w_end, w_start = _lin_exp_weights(rho, h)
        out[i + 1] = out[i] * np.exp(-rho * h) + gamma * (v[i] * w_start + v[i + 1] * w_end)
    return out


def _z_path(times: np.ndarray, v: np.ndarray, spec: ImpactSpec) -> np.ndarray:
    """Adjoint Z(s) = -int_s^tau K(t) gamma v(t) e^{-rho (t-s)} dt, backward
    exact recursion with K gamma v linear between nodes."""
    g = np.asarray(spec.K(times)) * spec.gamma * v
    Z = np.zeros(times.size)
    rho = spec.rho
    for i in range(times.size - 2, -1, -1):
        h = times[i + 1] - times[i]
        w0, w1 = _lin_exp_weights(rho, h)
        Z[i] = np.exp(-rho * h) * Z[i + 1] - (g[i] * w0 + g[i + 1] * w1)
    return Z


def _right_cumtrapz(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """R(t_i) = int_{t_i}^{tau} values dt by trapezoid."""
    inc = 0.5 * (values[1:] + values[:-1]) * np.diff(times)
    out = np.zeros(times.size)
    out[:-1] = np.cumsum(inc[::-1])[::-1]
    return out


def solve_execution(
    problem: ExecutionProblem,
    n_steps: int = 2000,
    picard_tol: float = 1e-9,
    picard_max: int = 200,
) -> ExecutionSolution:
    """Forward-integrate the optimal feedback law.

    Coefficient tables live on a grid of half the output step so the closed
    loop advances by classical RK4 with exact table lookups at the stage
    points. With time-varying kernels, the expectation terms couple back to
    the solution through the inventory functional; a damped fixed-point
    iteration (factor 0.5 on non-monotone residuals) closes the loop.
    """
    report = check_admissibility(problem, 2 * n_steps)
    if not report.ok:
        raise AdmissibilityError(f"solvability assumptions violated: {report.as_dict()}")

    spec = problem.impact
    table = fundamental_solution(problem, 2 * n_steps)
    tf = table.times  # fine grid, 2 n_steps + 1 nodes
    psi_t = psi(table)
    G = g_vector(problem, psi_t)
    coeff = feedback_coeffs(psi_t, G)  # (2n+1, 4)
    lam_f = lambda_fn(spec, tf)
    lam_ratio = np.asarray(lambda_deriv(spec, tf)) / lam_f
    mu_f = problem.price_drift(tf)
    p43 = psi_t[:, 3, 2]
    p44 = psi_t[:, 3, 3]
    G3 = G[:, 2]

    n_out = n_steps + 1
    times = tf[::2]
    h = problem.tau / n_steps
    rho, gamma = spec.rho, spec.gamma
    kernels_constant = np.allclose(lam_ratio, 0.0)

    gamma_term = np.zeros(tf.size)
    v_prev = None
    v_nodes = np.zeros(n_out)
    X = np.zeros(n_out)
    U = np.zeros(n_out)
    iterations = 0
    residual_prev = np.inf
    damping = 1.0

    for iteration in range(picard_max):
        iterations = iteration + 1
        src = lam_f * (mu_f + gamma_term)
        E1_int = _right_cumtrapz(tf, src * p43)
        E2_int = _right_cumtrapz(tf, src * G3)
        forcing = coeff[:, 3] * E1_int / p44 - E2_int / G3

        def speed(idx_f, x, u):
            c = coeff[idx_f]
            return c[0] * (c[1] * x + c[2] * u + forcing[idx_f])

        X[0], U[0] = problem.x, spec.y
        for i in range(n_steps):
            i0 = 2 * i
            x, u = X[i], U[i]
            v1 = speed(i0, x, u)
            k1 = (-v1, -rho * u + gamma * v1)
            v2 = speed(i0 + 1, x + 0.5 * h * k1[0], u + 0.5 * h * k1[1])
            k2 = (-v2, -rho * (u + 0.5 * h * k1[1]) + gamma * v2)
            v3_ = speed(i0 + 1, x + 0.5 * h * k2[0], u + 0.5 * h * k2[1])
            k3 = (-v3_, -rho * (u + 0.5 * h * k2[1]) + gamma * v3_)
            v4 = speed(i0 + 2, x + h * k3[0], u + h * k3[1])
            k4 = (-v4, -rho * (u + h * k3[1]) + gamma * v4)
            X[i + 1] = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            U[i + 1] = u + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        for i in range(n_out):
            v_nodes[i] = speed(2 * i, X[i], U[i])

        if kernels_constant and problem.mu is None:
            break
        if v_prev is not None:
            residual = float(np.max(np.abs(v_nodes - v_prev)))
            if residual <= picard_tol * max(1.0, float(np.max(np.abs(v_nodes)))):
                break
            if residual > residual_prev:
                damping = 0.5
            residual_prev = residual
        v_prev = v_nodes.copy()
        # refresh the expectation source from the new trajectory
        X_f = np.interp(tf, times, X)
        R = _right_cumtrapz(tf, X_f)
        drift_tail = _right_cumtrapz(tf, mu_f)
        new_gamma = lam_ratio * (2.0 * problem.phi * R + 2.0 * problem.varrho * X[-1] - drift_tail)
        gamma_term = damping * new_gamma + (1.0 - damping) * gamma_term
    else:
        raise RegimeError(
            "fixed-point iteration for the expectation terms did not converge; "
            "try a shorter horizon or constant kernels"
        )

    Z = _z_path(times, v_nodes, spec)
    obj = objective(problem, times, v_nodes)
    foc = foc_residual(problem, times, v_nodes)
    l_tau = float(spec.l(problem.tau))
    K_tau = float(spec.K(problem.tau))
    term_err = abs(v_nodes[-1] - (problem.varrho / l_tau) * X[-1] + (K_tau / (2.0 * l_tau)) * U[-1])
    return ExecutionSolution(
        times=times,
        v=v_nodes,
        X=X,
        Upsilon=U,
        Z=Z,
        objective=obj,
        coeffs=coeff[::2],
        G=G[::2],
        admissibility=report,
        foc=foc,
        terminal_identity_error=float(term_err),
        picard_iterations=iterations,
        liouville_error=table.liouville_error,
    )


def objective(problem: ExecutionProblem, times: np.ndarray, v: np.ndarray) -> float:
    """Performance functional of a sampled deterministic speed.

    Expected-revenue terms use the deterministic price mean (exact in the
    martingale regime); the transient state is advanced exactly for the
    linear interpolant of v, and time integrals are trapezoidal.
    """
    times = np.asarray(times, dtype=float)
    v = np.asarray(v, dtype=float)
    spec = problem.impact
    U = _transient_sampled(times, v, spec.rho, spec.gamma, spec.y)
    dX = -0.5 * (v[1:] + v[:-1]) * np.diff(times)
    X = problem.x + np.concatenate([[0.0], np.cumsum(dX)])
    P = problem.price_mean(times)
    K_vals = np.asarray(spec.K(times))
    l_vals = np.asarray(spec.l(times))
    revenue = np.trapezoid((P - K_vals * U) * v, times)
    cost = np.trapezoid(l_vals * v**2, times)
    running = np.trapezoid(X**2, times)
    return float(
        revenue - cost + X[-1] * P[-1] - problem.phi * running - problem.varrho * X[-1] ** 2
    )


def foc_residual(problem: ExecutionProblem, times: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pointwise stationarity residual of the objective along a schedule.

    Zero (up to discretization) exactly at the optimum:
    2 phi int_s^tau X + 2 varrho X(tau) - int_s^tau mu - K Upsilon + Z - 2 l v.
    """
    times = np.asarray(times, dtype=float)
    v = np.asarray(v, dtype=float)
    spec = problem.impact
    U = _transient_sampled(times, v, spec.rho, spec.gamma, spec.y)
    Z = _z_path(times, v, spec)
    dX = -0.5 * (v[1:] + v[:-1]) * np.diff(times)
    X = problem.x + np.concatenate([[0.0], np.cumsum(dX)])
    tail_X = _right_cumtrapz(times, X)
    tail_mu = _right_cumtrapz(times, problem.price_drift(times))
    return (
        2.0 * problem.phi * tail_X
        + 2.0 * problem.varrho * X[-1]
        - tail_mu
        - np.asarray(spec.K(times)) * U
        + Z
        - 2.0 * np.asarray(spec.l(times)) * v
    )


def _interval_kernel_integrals(spec: ImpactSpec, edges: np.ndarray):
    """Per-interval integrals of l, K and K e^{-rho t} (closed form for
    constant kernels, 20-point Gauss-Legendre otherwise: machine accurate
    for the smooth power-law family on short intervals)."""
    h = np.diff(edges)
    rho = spec.rho
    if spec.family == "constant":
        L = spec.kappa * h
        Gk = spec.K0 * h
        F = spec.K0 * (np.exp(-rho * edges[:-1]) - np.exp(-rho * edges[1:])) / rho
        return L, Gk, F
    nodes, weights = np.polynomial.legendre.leggauss(20)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * h
    t = mid[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * weights[None, :]
    L = np.sum(w * spec.l(t), axis=1)
    K_t = spec.K(t)
    Gk = np.sum(w * K_t, axis=1)
    F = np.sum(w * K_t * np.exp(-rho * t), axis=1)
    return L, Gk, F


def brute_force_qp(problem: ExecutionProblem, n_steps: int = 500):
    """Independent oracle: piecewise-constant speed, exact concave quadratic.

    Returns (edges, v_star, objective). The Hessian assembly integrates the
    exponential memory kernel over interval pairs exactly, so the optimum is
    limited only by the piecewise-constant restriction of the speed.
    """
    if n_steps > 2000:
        raise ParameterError("oracle restricted to n_steps <= 2000")
    spec = problem.impact
    tau = problem.tau
    edges = np.linspace(0.0, tau, n_steps + 1)
    h = tau / n_steps
    rho, gamma = spec.rho, spec.gamma
    L, Gk, F = _interval_kernel_integrals(spec, edges)
    E = (np.exp(rho * edges[1:]) - np.exp(rho * edges[:-1])) / rho

    n = n_steps
    W = np.tril(np.outer(F, E), k=-1)
    np.fill_diagonal(W, (Gk - np.exp(rho * edges[:-1]) * F) / rho)

    P_mean = problem.price_mean(edges)
    p_int = np.empty(n)
    if problem.mu is None:
        p_int[:] = problem.price0 * h
    else:
        p_int[:] = 0.5 * (P_mean[1:] + P_mean[:-1]) * h  # drift is piecewise linear

    A1 = h * np.tril(np.ones((n, n)), k=-1)
    A2 = h * np.tril(np.ones((n, n)), k=0)
    ones = np.ones(n)

    c = p_int - spec.y * F - P_mean[-1] * h * ones
    c += problem.phi * h * (A1 + A2).T @ ones * problem.x
    c += 2.0 * problem.varrho * problem.x * h * ones

    R = np.diag(L) + gamma * W
    R += problem.phi * (h / 3.0) * (A1.T @ A1 + A2.T @ A2 + A1.T @ A2)
    R += problem.varrho * h**2 * np.outer(ones, ones)

    Q = R + R.T
    eigmin = float(np.linalg.eigvalsh(Q).min())
    if eigmin <= 0:
        raise ConditioningError(f"objective quadratic not concave (min eig {eigmin:g})")
    v_star = np.linalg.solve(Q, c)

    c0 = (
        problem.x * P_mean[-1]
        - problem.phi * h * n * problem.x**2
        - problem.varrho * problem.x**2
    )
    obj = float(c0 + c @ v_star - v_star @ R @ v_star)
    return edges, v_star, obj
