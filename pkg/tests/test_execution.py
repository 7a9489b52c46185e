import numpy as np
import pytest
from scipy.linalg import expm

from bondimpact import (
    ExecutionProblem,
    ImpactSpec,
    brute_force_qp,
    check_admissibility,
    foc_residual,
    objective,
    solve_execution,
)
from bondimpact.errors import AdmissibilityError, DomainError, ParameterError
from bondimpact.execution import (
    build_A,
    feedback_coeffs,
    fundamental_solution,
    g_vector,
    lambda_fn,
    psi,
    _z_path,
)

TAU = 10.0 / 365.0


def constant_spec(l0=0.01, K0=0.01, rho=2.0, gamma=1.0, y=0.0, tau=TAU):
    return ImpactSpec.constant(l0=l0, K0=K0, rho=rho, gamma=gamma, y=y, tau=tau, T=5.0)


def benchmark():
    return ExecutionProblem(
        x=2.0, tau=TAU, phi=0.1, varrho=1.0, impact=constant_spec(), price0=0.9
    )


def power_problem(**over):
    spec = ImpactSpec(rho=2.0, gamma=1.0, y=0.0, T=5.0, tau=TAU, kappa=0.01, alpha=1.0, beta=1.0)
    cfg = dict(x=2.0, tau=TAU, phi=0.1, varrho=1.0, impact=spec, price0=0.9)
    cfg.update(over)
    return ExecutionProblem(**cfg)


class TestLambda:
    def test_constant_kernel(self):
        assert lambda_fn(constant_spec(l0=0.01), 0.0) == 50.0

    def test_power_kernel_at_zero(self):
        spec = ImpactSpec(rho=2.0, gamma=1.0, y=0.0, T=5.0, tau=TAU, kappa=0.01, alpha=1.0)
        assert lambda_fn(spec, 0.0) == pytest.approx(50.0, rel=1e-14)

    def test_finite_at_tau(self):
        spec = ImpactSpec(rho=2.0, gamma=1.0, y=0.0, T=5.0, tau=TAU, kappa=0.01, alpha=1.0)
        assert np.isfinite(lambda_fn(spec, TAU))

    def test_outside_window_rejected(self):
        with pytest.raises(DomainError):
            lambda_fn(constant_spec(), 2 * TAU)


class TestSystemMatrix:
    def test_first_two_rows_kernel_independent(self):
        for prob in (benchmark(), power_problem()):
            A = build_A(prob, 0.01)
            rho, gamma = prob.impact.rho, prob.impact.gamma
            np.testing.assert_array_equal(A[0], [0.0, 0.0, -1.0, 0.0])
            np.testing.assert_array_equal(A[1], [0.0, -rho, gamma, 0.0])

    def test_constant_kernel_third_row(self):
        prob = benchmark()
        A = build_A(prob, 0.005)
        lam = 50.0
        K = 0.01
        np.testing.assert_allclose(A[2], [-2 * 0.1 * lam, 2.0 * K * lam, 0.0, 2.0 * lam], rtol=1e-14)

    def test_constant_in_time_when_kernels_constant(self):
        prob = benchmark()
        np.testing.assert_array_equal(build_A(prob, 0.0), build_A(prob, TAU / 2))

    def test_trace_vanishes(self):
        for prob in (benchmark(), power_problem()):
            for t in (0.0, TAU / 3, TAU):
                assert abs(np.trace(build_A(prob, t))) < 1e-12


class TestFundamentalSolution:
    def test_starts_at_identity(self):
        table = fundamental_solution(benchmark(), 100)
        np.testing.assert_array_equal(table.Phi[0], np.eye(4))

    def test_matrix_exponential_oracle_1e8(self):
        prob = benchmark()  # constant kernels => constant A
        table = fundamental_solution(prob, 2000)
        A = build_A(prob, 0.0)
        for idx in (500, 1000, 2000):
            exact = expm(A * table.times[idx])
            assert np.max(np.abs(table.Phi[idx] - exact)) < 1e-8

    def test_liouville_det_one(self):
        table = fundamental_solution(power_problem(), 1000)
        assert table.liouville_error < 1e-8

    def test_psi_terminal_identity(self):
        table = fundamental_solution(benchmark(), 200)
        psi_t = psi(table)
        np.testing.assert_allclose(psi_t[-1], np.eye(4), atol=1e-12)

    def test_psi_cocycle_1e8(self):
        prob = power_problem()
        table = fundamental_solution(prob, 1000)
        psi_t = psi(table)
        i, j = 250, 750  # s = times[i], t = times[j]
        lhs = psi_t[j]
        rhs = psi_t[i] @ table.Phi[i] @ np.linalg.inv(table.Phi[j])
        assert np.max(np.abs(lhs - rhs)) < 1e-8


class TestGVector:
    def test_terminal_values(self):
        prob = benchmark()
        table = fundamental_solution(prob, 100)
        G = g_vector(prob, psi(table))
        l_tau, K_tau = 0.01, 0.01
        np.testing.assert_allclose(G[-1], [1.0 / l_tau, -K_tau / (2 * l_tau), -1.0, 0.0], atol=1e-12)

    def test_terminal_values_zero_varrho(self):
        prob = ExecutionProblem(x=1.0, tau=TAU, phi=0.1, varrho=0.0, impact=constant_spec(), price0=0.9)
        table = fundamental_solution(prob, 100)
        G = g_vector(prob, psi(table))
        np.testing.assert_allclose(G[-1], [0.0, -0.5, -1.0, 0.0], atol=1e-12)

    def test_grid_refinement_oracle_1e6(self):
        prob = benchmark()
        coarse = fundamental_solution(prob, 500)
        fine = fundamental_solution(prob, 1000)
        G_c = g_vector(prob, psi(coarse))
        G_f = g_vector(prob, psi(fine))
        assert np.max(np.abs(G_c - G_f[::2])) < 1e-6


class TestFeedbackCoeffs:
    def test_terminal_reproduces_boundary_condition(self):
        prob = benchmark()
        table = fundamental_solution(prob, 100)
        psi_t = psi(table)
        coeff = feedback_coeffs(psi_t, g_vector(prob, psi_t))
        v0, v1, v2, v3 = coeff[-1]
        assert v0 == pytest.approx(1.0, abs=1e-12)
        assert v1 == pytest.approx(1.0 / 0.01, rel=1e-12)
        assert v2 == pytest.approx(-0.5, rel=1e-12)
        assert v3 == pytest.approx(0.0, abs=1e-12)

    def test_smooth_on_benchmark(self):
        prob = benchmark()
        table = fundamental_solution(prob, 1000)
        psi_t = psi(table)
        coeff = feedback_coeffs(psi_t, g_vector(prob, psi_t))
        assert np.all(np.isfinite(coeff))
        assert np.max(np.abs(np.diff(coeff[:, 0]))) < 1e-2  # no denominator blowups


class TestAdmissibility:
    def test_benchmark_satisfied_with_positive_margins(self):
        report = check_admissibility(benchmark())
        assert report.ok
        assert report.a1_margin > 0.5
        assert report.a3_psi44_margin > 0.5
        assert report.a3_g3_margin > 0.5
        assert np.isfinite(report.a2_sup_G)

    def test_g3_crossing_detected(self):
        # strong push (gamma=5) against a big transient kernel makes the
        # terminal-condition coefficient of v cross zero inside the window
        prob = ExecutionProblem(
            x=1.0, tau=0.6, phi=0.5, varrho=0.0,
            impact=ImpactSpec.constant(l0=0.01, K0=0.6, rho=3.0, gamma=5.0, y=0.0, tau=0.6, T=5.0),
            price0=0.9,
        )
        report = check_admissibility(prob, 400)
        assert not report.ok
        assert report.a3_g3_margin == 0.0
        assert report.offending_t is not None
        assert 0.0 < report.offending_t <= 0.6

    def test_short_horizon_trivially_satisfied(self):
        prob = ExecutionProblem(
            x=1.0, tau=1e-3, phi=0.1, varrho=1.0,
            impact=ImpactSpec.constant(0.01, 0.01, 2.0, 1.0, 0.0, 1e-3, 5.0), price0=0.9,
        )
        report = check_admissibility(prob, 100)
        assert report.ok
        assert report.a3_g3_margin > 0.9  # G3 ~ -1 near t = tau

    def test_solver_refuses_inadmissible_problem(self):
        prob = ExecutionProblem(
            x=1.0, tau=0.6, phi=0.5, varrho=0.0,
            impact=ImpactSpec.constant(l0=0.01, K0=0.6, rho=3.0, gamma=5.0, y=0.0, tau=0.6, T=5.0),
            price0=0.9,
        )
        with pytest.raises(AdmissibilityError):
            solve_execution(prob, n_steps=400)


class TestSolve:
    def test_nothing_to_trade(self):
        prob = ExecutionProblem(x=0.0, tau=TAU, phi=0.0, varrho=0.0, impact=constant_spec(), price0=0.9)
        sol = solve_execution(prob, n_steps=400)
        assert np.max(np.abs(sol.v)) < 1e-12
        assert sol.objective == pytest.approx(0.0, abs=1e-12)

    def test_sell_program_monotone_inventory(self):
        prob = ExecutionProblem(x=2.0, tau=TAU, phi=0.0, varrho=1.0, impact=constant_spec(), price0=0.9)
        sol = solve_execution(prob, n_steps=1000)
        assert np.all(sol.v > 0)
        assert np.all(np.diff(sol.X) < 0)
        l_tau = K_tau = 0.01
        expected_terminal = (1.0 / l_tau) * sol.X[-1] - (K_tau / (2 * l_tau)) * sol.Upsilon[-1]
        assert abs(sol.v[-1] - expected_terminal) < 1e-8

    def test_benchmark_certificate(self):
        prob = benchmark()
        sol = solve_execution(prob)
        _, _, oracle_obj = brute_force_qp(prob, 500)
        assert abs(sol.objective - oracle_obj) / abs(oracle_obj) <= 1e-3
        assert sol.foc_sup < 1e-6 * prob.price0
        assert sol.terminal_identity_error < 1e-8
        assert sol.admissibility.ok

    def test_power_kernels_picard_converges(self):
        prob = power_problem()
        sol = solve_execution(prob)
        assert sol.picard_iterations >= 2
        _, _, oracle_obj = brute_force_qp(prob, 500)
        assert abs(sol.objective - oracle_obj) / abs(oracle_obj) <= 1e-3
        assert sol.foc_sup < 1e-6 * prob.price0

    def test_deterministic_drift_regime(self):
        mu = (np.array([0.0, TAU]), np.array([0.4, 0.4]))  # rising price while selling
        prob = ExecutionProblem(x=2.0, tau=TAU, phi=0.1, varrho=1.0, impact=constant_spec(), price0=0.9, mu=mu)
        sol = solve_execution(prob)
        _, _, oracle_obj = brute_force_qp(prob, 500)
        assert abs(sol.objective - oracle_obj) / abs(oracle_obj) <= 1e-3
        drift_free = solve_execution(ExecutionProblem(
            x=2.0, tau=TAU, phi=0.1, varrho=1.0, impact=constant_spec(), price0=0.9))
        # rising prices postpone selling: less volume early on
        assert sol.v[0] < drift_free.v[0]

    def test_step_halving_stability(self):
        prob = benchmark()
        a = solve_execution(prob, n_steps=1000)
        b = solve_execution(prob, n_steps=2000)
        assert abs(a.objective - b.objective) / abs(b.objective) < 1e-6

    def test_z_terminal_and_forward_consistency_1e8(self):
        prob = benchmark()
        sol = solve_execution(prob, n_steps=1000)
        assert sol.Z[-1] == 0.0
        # forward midpoint integration of dZ = (rho Z + K gamma v) dt
        spec = prob.impact
        g = spec.K(sol.times) * spec.gamma * sol.v
        h = np.diff(sol.times)
        resid = np.diff(sol.Z) - h * (
            spec.rho * 0.5 * (sol.Z[1:] + sol.Z[:-1]) + 0.5 * (g[1:] + g[:-1])
        )
        assert np.max(np.abs(resid)) < 1e-8


class TestObjective:
    def test_no_trading_book_value_with_penalties(self):
        prob = ExecutionProblem(x=1.5, tau=TAU, phi=0.2, varrho=0.7, impact=constant_spec(), price0=0.9)
        times = np.linspace(0, TAU, 501)
        got = objective(prob, times, np.zeros(501))
        expected = 1.5 * 0.9 - 0.2 * 1.5**2 * TAU - 0.7 * 1.5**2
        assert got == pytest.approx(expected, rel=1e-12)

    def test_no_trading_no_penalties(self):
        prob = ExecutionProblem(x=1.5, tau=TAU, phi=0.0, varrho=0.0, impact=constant_spec(), price0=0.9)
        times = np.linspace(0, TAU, 101)
        assert objective(prob, times, np.zeros(101)) == pytest.approx(1.5 * 0.9, rel=1e-12)

    def test_cost_term_linear_in_l(self):
        times = np.linspace(0, TAU, 501)
        v = np.full(501, 10.0)
        base = ExecutionProblem(x=2.0, tau=TAU, phi=0.0, varrho=0.0, impact=constant_spec(l0=0.01), price0=0.9)
        double = ExecutionProblem(x=2.0, tau=TAU, phi=0.0, varrho=0.0, impact=constant_spec(l0=0.02), price0=0.9)
        cost = np.trapezoid(0.01 * v**2, times)
        assert objective(base, times, v) - objective(double, times, v) == pytest.approx(cost, rel=1e-10)

    def test_concavity_on_sampled_pairs(self):
        prob = benchmark()
        times = np.linspace(0, TAU, 301)
        rng = np.random.default_rng(0)
        for _ in range(5):
            v1 = rng.normal(50, 10, 301)
            v2 = rng.normal(50, 10, 301)
            lam = rng.uniform(0.2, 0.8)
            mix = objective(prob, times, lam * v1 + (1 - lam) * v2)
            split = lam * objective(prob, times, v1) + (1 - lam) * objective(prob, times, v2)
            assert mix >= split - 1e-12


class TestOracle:
    def test_zero_position_zero_schedule(self):
        prob = ExecutionProblem(x=0.0, tau=TAU, phi=0.1, varrho=1.0, impact=constant_spec(), price0=0.9)
        _, v_star, obj = brute_force_qp(prob, 200)
        np.testing.assert_allclose(v_star, 0.0, atol=1e-14)
        assert obj == pytest.approx(0.0, abs=1e-14)

    def test_feedback_cannot_beat_oracle_beyond_slack(self):
        prob = benchmark()
        sol = solve_execution(prob)
        _, _, oracle_obj = brute_force_qp(prob, 500)
        assert sol.objective <= oracle_obj + 1e-6 * abs(oracle_obj)

    def test_step_limit(self):
        with pytest.raises(ParameterError):
            brute_force_qp(benchmark(), 4000)

    def test_fast_decay_limit_approaches_pure_temporary(self):
        # rho -> infinity with gamma/rho fixed: transient acts like extra
        # temporary impact with coefficient K * gamma / rho
        cbar = 0.5
        target = ExecutionProblem(
            x=2.0, tau=TAU, phi=0.1, varrho=1.0,
            impact=ImpactSpec.constant(
                l0=0.01 + 0.01 * cbar, K0=0.01, rho=2.0, gamma=1e-9, y=0.0, tau=TAU, T=5.0
            ),
            price0=0.9,
        )
        _, v_limit, _ = brute_force_qp(target, 300)
        dists = []
        for rho in (20.0, 80.0, 320.0):
            prob = ExecutionProblem(
                x=2.0, tau=TAU, phi=0.1, varrho=1.0,
                impact=ImpactSpec.constant(0.01, 0.01, rho, cbar * rho, 0.0, TAU, 5.0),
                price0=0.9,
            )
            _, v_rho, _ = brute_force_qp(prob, 300)
            dists.append(np.sqrt(np.mean((v_rho - v_limit) ** 2)))
        assert dists[0] > dists[1] > dists[2]


class TestFocResidual:
    def test_zero_everything_zero_residual(self):
        prob = ExecutionProblem(x=0.0, tau=TAU, phi=0.0, varrho=0.0, impact=constant_spec(), price0=0.9)
        times = np.linspace(0, TAU, 201)
        resid = foc_residual(prob, times, np.zeros(201))
        np.testing.assert_allclose(resid, 0.0, atol=1e-15)

    def test_optimum_certified(self):
        prob = benchmark()
        sol = solve_execution(prob)
        resid = foc_residual(prob, sol.times, sol.v)
        assert np.max(np.abs(resid)) < 1e-6 * prob.price0

    def test_bump_detected_locally(self):
        # gamma ~ 0 and no inventory penalties: the optimality condition is
        # pointwise, so a local bump must perturb the residual only locally
        prob = ExecutionProblem(
            x=2.0, tau=TAU, phi=0.0, varrho=0.0,
            impact=ImpactSpec.constant(0.01, 0.01, 2.0, 1e-9, 0.5, TAU, 5.0),
            price0=0.9,
        )
        sol = solve_execution(prob, n_steps=500)
        resid0 = foc_residual(prob, sol.times, sol.v)
        bumped = sol.v.copy()
        zone = slice(200, 220)
        bumped[zone] *= 1.01
        resid1 = foc_residual(prob, sol.times, bumped)
        delta = np.abs(resid1 - resid0)
        outside = np.ones(delta.size, dtype=bool)
        outside[zone] = False
        assert delta[zone].max() > 50 * delta[outside].max()
