import dataclasses

import numpy as np
import pytest

from minmax_bounds.bounds import (
    DominationInfeasible,
    LmiInfeasible,
    PrefixViolation,
    basic_bound,
    certify,
    ellipsoid_inner,
    evaluate_bound,
    export_certificate,
    optimize_bound,
    verify_initial_state,
)
from minmax_bounds.hinf import solve_discounted
from minmax_bounds.model import BoxInput, DisturbanceEllipsoid
from tests.conftest import demo_instance


@pytest.fixture(scope="module")
def demo_b():
    return demo_instance()


@pytest.fixture(scope="module")
def basic_cert(demo_b):
    return basic_bound(demo_b)


class TestBasicBound:
    def test_matches_published_value(self, basic_cert):
        assert basic_cert.value == pytest.approx(3.526, rel=0.02)

    def test_offset_zero(self, basic_cert):
        assert basic_cert.s == 0.0
        assert basic_cert.offset == 0.0

    def test_value_matrix_matches_riccati(self, demo_b, basic_cert):
        sol = solve_discounted(demo_b, demo_b.Q0, demo_b.R0, demo_b.gamma0)
        assert np.linalg.norm(basic_cert.P - sol.P) <= 1e-6 * np.linalg.norm(sol.P)

    def test_trace_summary_cross_check(self, basic_cert):
        tr = float(np.trace(basic_cert.P))
        assert abs(basic_cert.trace_value - tr) <= 1e-3 * tr

    def test_gamma_below_stage_weight_rejected(self, demo_b):
        with pytest.raises(ValueError):
            basic_bound(demo_b, gamma=0.5 * demo_b.gamma0)


class TestCertify:
    def test_reproduces_basic(self, demo_b, basic_cert):
        cert = certify(demo_b, demo_b.R0, 0.0, demo_b.gamma0)
        assert np.array_equal(cert.P, basic_cert.P)
        assert cert.s == basic_cert.s
        assert cert.trace_value == basic_cert.trace_value

    def test_offset_remaximization_never_hurts(self, demo_b):
        # hand the certifier a pessimistic offset; it must recover s = 0
        cert = certify(demo_b, demo_b.R0, -5.0, demo_b.gamma0)
        assert cert.s == pytest.approx(0.0, abs=1e-6)

    def test_infeasible_pair_rejected(self, demo_b):
        # for a box input any PD weight is certifiable with a negative enough
        # offset, so infeasibility means the *claimed* offset was too large
        with pytest.raises(DominationInfeasible):
            certify(demo_b, demo_b.R0, 1.0, demo_b.gamma0)
        with pytest.raises(DominationInfeasible):
            certify(demo_b, demo_b.R0 + np.diag([0.4, 0.0]), -0.1, demo_b.gamma0)

    def test_grown_diagonal_certifies_with_negative_offset(self, demo_b):
        R = demo_b.R0 + np.diag([0.2, 0.1])
        cert = certify(demo_b, R, -0.3, demo_b.gamma0)
        assert cert.s == pytest.approx(-0.3, abs=1e-5)
        assert cert.value == pytest.approx(cert.trace_value + cert.s / 0.05, rel=1e-9)

    def test_pointwise_domination_sampled(self, demo_b):
        R = demo_b.R0 + np.diag([0.2, 0.1])
        cert = certify(demo_b, R, -0.3, demo_b.gamma0)
        rng = np.random.default_rng(0)
        for _ in range(2000):
            u = rng.uniform(-1, 1, 2)
            w = rng.standard_normal(4)
            w /= max(1.0, np.linalg.norm(w))
            lhs = u @ cert.R @ u - cert.gamma**2 * (w @ w) + cert.s
            rhs = u @ demo_b.R0 @ u - demo_b.gamma0**2 * (w @ w)
            assert lhs <= rhs + 1e-9


class TestOptimizeBound:
    def test_zero_rounds_returns_basic(self, demo_b, basic_cert):
        cert, log = optimize_bound(demo_b, rounds=0)
        assert cert.value == pytest.approx(basic_cert.value, rel=1e-9)
        assert len(log.certified_series()) == 1

    def test_monotone_certified_series(self):
        p = demo_instance(u_max=0.15)
        cert, log = optimize_bound(p, rounds=4)
        series = log.certified_series()
        assert all(b >= a - 1e-9 for a, b in zip(series, series[1:]))

    def test_improves_under_tight_input_constraint(self):
        p = demo_instance(u_max=0.15)
        b = basic_bound(p)
        cert, log = optimize_bound(p, rounds=4)
        assert cert.value > b.value * 1.01
        assert cert.s < 0

    def test_optimized_certificate_recertifies(self):
        p = demo_instance(u_max=0.15)
        cert, _ = optimize_bound(p, rounds=3)
        re = certify(p, cert.R, cert.s, cert.gamma)
        assert re.value == pytest.approx(cert.value, rel=1e-6)


class TestEvaluateBound:
    def test_at_origin(self, basic_cert):
        assert evaluate_bound(basic_cert, np.zeros(4)) == basic_cert.offset

    def test_quadratic_scaling(self, basic_cert):
        x = np.array([0.3, -0.2, 0.5, 0.1])
        v1 = evaluate_bound(basic_cert, x) - basic_cert.offset
        v2 = evaluate_bound(basic_cert, 2 * x) - basic_cert.offset
        assert v2 == pytest.approx(4 * v1, rel=1e-12)

    def test_basis_state(self, basic_cert):
        e1 = np.eye(4)[0]
        assert evaluate_bound(basic_cert, e1) == pytest.approx(
            basic_cert.P[0, 0] + basic_cert.offset
        )

    def test_dimension_mismatch(self, basic_cert):
        with pytest.raises(ValueError):
            evaluate_bound(basic_cert, np.ones(3))


class TestVerification:
    def test_origin_verified(self, demo_b, basic_cert):
        rc = verify_initial_state(demo_b, basic_cert, np.zeros(4), prefix_T=0)
        assert rc.prefix_T == 0
        assert rc.level >= 0

    def test_scale_sweep(self, demo_b, basic_cert):
        x_dir = np.array([1.0, 0.4, -0.2, 0.6])
        # trajectory oracle: find the first scale whose pointwise check fails
        sol = basic_cert
        A_cl = demo_b.A + demo_b.B @ sol.K + demo_b.G @ sol.Kw
        # small scale verifies
        rc = verify_initial_state(demo_b, basic_cert, 0.01 * x_dir, prefix_T=20)
        assert rc.level > 0
        # large scale violates the prefix at the step the oracle predicts
        big = 100.0 * x_dir
        x = big.copy()
        expected_step = None
        for k in range(1000):
            w = sol.Kw @ x
            if w @ demo_b.W.S @ w > demo_b.W.beta:
                expected_step = k
                break
            x = A_cl @ x
        assert expected_step is not None
        with pytest.raises(PrefixViolation) as exc:
            verify_initial_state(demo_b, basic_cert, big, prefix_T=1000)
        assert exc.value.step == expected_step

    def test_region_is_star_shaped(self, demo_b, basic_cert):
        # with prefix 0, scaling a verified state toward the origin stays verified
        x0 = 0.02 * np.ones(4)
        rc = verify_initial_state(demo_b, basic_cert, x0, prefix_T=0)
        for c in (0.5, 0.1):
            x = c * x0
            assert x @ rc.H @ x <= rc.level * (1 + 1e-12)

    def test_lmi_infeasible_is_inconclusive(self, demo_b, basic_cert):
        # prefix 0 with a state whose immediate disturbance exits the set
        x_dir = np.ones(4)
        w = basic_cert.Kw @ x_dir
        scale = 2.0 * np.sqrt(demo_b.W.beta / float(w @ demo_b.W.S @ w))
        with pytest.raises((LmiInfeasible, PrefixViolation)):
            verify_initial_state(demo_b, basic_cert, scale * x_dir, prefix_T=0)


class TestEllipsoidInner:
    def test_ellipsoid_passthrough(self):
        W = DisturbanceEllipsoid(S=2.0 * np.eye(3), beta=4.0)
        S, beta = ellipsoid_inner(W)
        assert np.array_equal(S, W.S) and beta == 4.0

    def test_box_inscribed_ball(self):
        box = BoxInput(u_max=np.array([1.0, 2.0]))
        S, beta = ellipsoid_inner(box)
        assert np.array_equal(S, np.eye(2))
        assert beta == pytest.approx(1.0)

    def test_containment_sampled(self):
        rng = np.random.default_rng(1)
        box = BoxInput(u_max=np.array([1.5, 0.7, 2.0]))
        S, beta = ellipsoid_inner(box)
        for _ in range(2000):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            w = d * np.sqrt(beta / (d @ S @ d))
            assert np.all(np.abs(w) <= box.u_max + 1e-12)

    def test_unsupported(self):
        with pytest.raises(ValueError):
            ellipsoid_inner(42)


class TestExport:
    def test_round_trip_fields(self, demo_b, basic_cert, tmp_path):
        import json

        rc = verify_initial_state(demo_b, basic_cert, 0.01 * np.ones(4), prefix_T=5)
        path = tmp_path / "cert.json"
        export_certificate(basic_cert, path, region=rc)
        doc = json.loads(path.read_text())
        assert doc["schema_version"] == 1
        assert doc["provenance"] == "basic"
        assert np.allclose(np.asarray(doc["P"]), basic_cert.P)
        assert doc["region"]["prefix_T"] == 5
