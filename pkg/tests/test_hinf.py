import numpy as np
import pytest
import scipy.linalg

from minmax_bounds.hinf import (
    GammaTooSmall,
    NoConvergence,
    RiccatiError,
    bounded_real_check,
    closed_loop,
    hinf_optimal_gamma,
    isaacs_iterate,
    isaacs_iterate_discounted,
    solve_discounted,
)
from minmax_bounds.model import random_instance, validate, with_gamma
from minmax_bounds.numerics import is_pd, spectral_radius
from tests.conftest import demo_instance


def scalar_fixed_point(a, b, g, q, r, gamma, iters=100000, tol=1e-14):
    """Independent 1-D oracle: iterate the scalar recursion directly."""
    p = q
    for _ in range(iters):
        mw = gamma**2 - g * p * g
        assert mw > 0
        pbar = p + p * g / mw * g * p
        p_next = q + a * pbar * a - (a * pbar * b) ** 2 / (r + b * pbar * b)
        if abs(p_next - p) < tol * abs(p_next):
            return p_next
        p = p_next
    return p


class TestIsaacsIterate:
    def test_matches_lqr_when_no_disturbance(self):
        rng = np.random.default_rng(1)
        A = 0.9 * rng.standard_normal((4, 4)) / 2
        B = rng.standard_normal((4, 2))
        Q = np.eye(4)
        R = np.eye(2)
        G = np.zeros((4, 1))
        sol = isaacs_iterate(A, B, G, Q, R, gamma=1.0)
        P_lqr = scipy.linalg.solve_discrete_are(A, B, Q, R)
        assert np.linalg.norm(sol.P - P_lqr) <= 1e-8 * np.linalg.norm(P_lqr)

    def test_scalar_fixed_point(self):
        sol = isaacs_iterate(
            np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]),
            np.array([[1.0]]), np.array([[1.0]]), gamma=10.0,
        )
        expect = scalar_fixed_point(0.5, 1.0, 1.0, 1.0, 1.0, 10.0)
        assert sol.P[0, 0] == pytest.approx(expect, rel=1e-10)

    def test_gamma_too_small_raises(self, demo):
        # bracket: the precomputed optimal gain for the benchmark instance is
        # about 4.19, so gamma = 2 must fail and gamma = 10 must succeed
        At, Bt = np.sqrt(demo.alpha) * demo.A, np.sqrt(demo.alpha) * demo.B
        with pytest.raises(GammaTooSmall) as exc:
            isaacs_iterate(At, Bt, demo.G, demo.Q0, demo.R0, gamma=2.0)
        assert exc.value.iteration >= 1
        sol = isaacs_iterate(At, Bt, demo.G, demo.Q0, demo.R0, gamma=10.0)
        assert is_pd(sol.P, 1e-9)

    def test_well_posedness_invariants(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        gt = demo.gamma0 / np.sqrt(demo.alpha)
        m1 = gt**2 * np.eye(demo.l) - demo.G.T @ sol.P @ demo.G
        assert np.linalg.eigvalsh(m1)[0] > 0
        m2 = sol.R + demo.B.T @ sol.Pbar @ demo.B
        assert np.linalg.eigvalsh(m2)[0] > 0

    def test_residual_reported(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        assert sol.residual <= 1e-11

    def test_no_convergence_error(self, demo):
        with pytest.raises(NoConvergence):
            solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0, max_iter=3)

    def test_gamma_monotonicity(self, demo):
        s1 = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        s2 = solve_discounted(demo, demo.Q0, demo.R0, 2.0 * demo.gamma0)
        # weaker adversary: value matrix decreases in the semidefinite order
        diff = s1.P - s2.P
        assert np.linalg.eigvalsh(diff)[0] >= -1e-9 * np.linalg.norm(s1.P)

    def test_lqr_limit(self, demo):
        huge = 1e6 * (1 + np.linalg.norm(demo.G, 2) * np.linalg.norm(demo.Q0, 2))
        sol = solve_discounted(demo, demo.Q0, demo.R0, huge)
        At, Bt = np.sqrt(demo.alpha) * demo.A, np.sqrt(demo.alpha) * demo.B
        P_lqr = scipy.linalg.solve_discrete_are(At, Bt, demo.Q0, demo.R0)
        assert np.linalg.norm(sol.P - P_lqr) <= 1e-5 * np.linalg.norm(P_lqr)


class TestSolveDiscounted:
    def test_alpha_one_equals_undiscounted(self, demo):
        import dataclasses

        p1 = dataclasses.replace(demo, alpha=1.0 - 1e-15)
        sol_d = solve_discounted(p1, demo.Q0, demo.R0, 12.0)
        sol_u = isaacs_iterate(demo.A, demo.B, demo.G, demo.Q0, demo.R0, 12.0)
        assert np.linalg.norm(sol_d.P - sol_u.P) <= 1e-9 * np.linalg.norm(sol_u.P)
        assert np.linalg.norm(sol_d.K - sol_u.K) <= 1e-8 * max(1, np.linalg.norm(sol_u.K))

    def test_two_route_equivalence(self, demo):
        direct = isaacs_iterate_discounted(
            demo.A, demo.B, demo.G, demo.Q0, demo.R0, demo.gamma0, demo.alpha
        )
        via_transform = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        assert np.linalg.norm(direct.P - via_transform.P) <= 1e-8 * np.linalg.norm(direct.P)
        assert np.linalg.norm(direct.K - via_transform.K) <= 1e-8 * max(1, np.linalg.norm(direct.K))
        assert np.linalg.norm(direct.Kw - via_transform.Kw) <= 1e-8 * max(1, np.linalg.norm(direct.Kw))

    def test_demo_instance_converges(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        assert is_pd(sol.P, 1e-9)
        assert np.trace(sol.P) == pytest.approx(3.5306, abs=2e-3)


class TestOptimalGamma:
    def test_bracket_property(self, demo):
        gs = hinf_optimal_gamma(demo, rel_tol=1e-3)
        solve_discounted(demo, demo.Q0, demo.R0, gs * 1.002)  # must succeed
        with pytest.raises(RiccatiError):
            solve_discounted(
                demo, demo.Q0, demo.R0, gs * 0.998, max_iter=30000
            )

    def test_matches_grid_search(self, demo):
        rel_tol = 5e-3
        gs = hinf_optimal_gamma(demo, rel_tol=rel_tol)
        # independent coarse grid search over gamma
        grid = np.linspace(0.8 * gs, 1.2 * gs, 81)
        feas = []
        for g in grid:
            try:
                solve_discounted(demo, demo.Q0, demo.R0, g, max_iter=30000)
                feas.append(True)
            except RiccatiError:
                feas.append(False)
        first = next(i for i, f in enumerate(feas) if f)
        g_grid = grid[first]
        assert abs(gs - g_grid) <= 2 * rel_tol * gs + (grid[1] - grid[0])

    def test_demo_workflow(self, demo):
        gs = hinf_optimal_gamma(demo)
        p = with_gamma(demo, 1.1 * gs)
        sol = solve_discounted(p, p.Q0, p.R0, p.gamma0)
        assert is_pd(sol.P, 1e-9)
        assert gs == pytest.approx(4.1946, rel=1e-3)


class TestClosedLoop:
    def test_zero_gains(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        import dataclasses

        z = dataclasses.replace(sol, K=np.zeros_like(sol.K), Kw=np.zeros_like(sol.Kw))
        assert np.array_equal(closed_loop(demo, z).A_cl, demo.A)

    def test_demo_closed_loop(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        cl = closed_loop(demo, sol)
        assert cl.A_cl.shape == (4, 4)
        assert np.allclose(cl.A_cl, demo.A + demo.B @ sol.K + demo.G @ sol.Kw)
        # reported, not asserted stable: the optimal policies need not stabilize
        rho = spectral_radius(cl.A_cl)
        assert np.isfinite(rho)


class TestBoundedReal:
    def test_converged_solution_passes(self, demo):
        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        slack = 1e-7 * np.linalg.norm(sol.P, 2)
        assert bounded_real_check(demo, sol, demo.gamma0, slack)

    def test_shrunk_value_matrix_fails(self, demo):
        import dataclasses

        sol = solve_discounted(demo, demo.Q0, demo.R0, demo.gamma0)
        bad = dataclasses.replace(sol, P=0.5 * sol.P)
        slack = 1e-7 * np.linalg.norm(sol.P, 2)
        assert not bounded_real_check(demo, bad, demo.gamma0, slack)

    def test_lqr_case(self):
        rng = np.random.default_rng(2)
        p = random_instance(3, 2, 1, 4, seed=17)
        p = with_gamma(p, 1e5)
        import dataclasses

        p = dataclasses.replace(p, G=np.zeros((3, 1)))
        sol = solve_discounted(p, p.Q0, p.R0, p.gamma0)
        slack = 1e-7 * np.linalg.norm(sol.P, 2)
        assert bounded_real_check(p, sol, p.gamma0, slack)

    def test_seeded_instances(self):
        count = 0
        for seed in range(6):
            p = random_instance(4, 2, 4, 6, seed=seed)
            gs = hinf_optimal_gamma(p)
            p = with_gamma(p, 1.1 * gs)
            sol = solve_discounted(p, p.Q0, p.R0, p.gamma0)
            slack = 1e-7 * np.linalg.norm(sol.P, 2)
            assert bounded_real_check(p, sol, p.gamma0, slack), seed
            count += 1
        assert count == 6
