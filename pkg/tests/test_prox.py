"""Proximal maps: exact values, Moreau identities, and Jacobian checks."""

import numpy as np
import pytest
from conftest import brute_l1_ball, brute_simplex

from metricnear.core import Norm
from metricnear.prox import (
    jac_hstar,
    jac_qstar,
    project_simplex,
    prox_hstar,
    prox_q,
    prox_qstar,
    q_value,
    qstar_feasibility,
)

ALL_NORMS = [Norm.L1, Norm.L2, Norm.LINF]


class TestHstar:
    def test_examples(self):
        assert np.allclose(prox_hstar(np.array([-1.0, 2.0, 0.0])), [0, 2, 0])
        assert np.allclose(prox_hstar(np.array([-3.0, -1.0])), 0.0)
        w = np.array([0.5, 2.0])
        assert np.array_equal(prox_hstar(w), w)

    def test_jacobian(self):
        assert jac_hstar(np.array([-1.0, 2.0, 0.0])).diag.tolist() == [0, 1, 0]
        assert jac_hstar(np.array([1.0, 2.0])).diag.tolist() == [1, 1]
        assert jac_hstar(np.array([-1.0, -2.0])).diag.tolist() == [0, 0]

    def test_moreau_h(self, rng):
        # Prox_{h/sigma}(x) = x - Pi_{R+}(sigma x)/sigma, h the R- indicator
        for _ in range(200):
            x = rng.normal(0, 2, int(rng.integers(1, 9)))
            sigma = float(rng.uniform(0.1, 5))
            lhs = np.minimum(x, 0.0)
            rhs = x - prox_hstar(sigma * x) / sigma
            assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestDualBallProjection:
    def test_examples(self):
        assert np.allclose(prox_qstar(np.array([1.5, -0.2, -3.0]), Norm.L1), [1, -0.2, -1])
        assert np.allclose(prox_qstar(np.array([0.5, 0.8]), Norm.LINF), [0.35, 0.65])
        assert np.allclose(prox_qstar(np.array([3.0, 4.0]), Norm.L2), [0.6, 0.8])
        v = np.array([0.3, -0.4, 0.2])
        assert np.allclose(prox_qstar(v, Norm.LINF), v)

    def test_idempotent_and_nonexpansive(self, rng):
        for norm in ALL_NORMS:
            for _ in range(100):
                d = int(rng.integers(1, 10))
                a, b = rng.normal(0, 2, d), rng.normal(0, 2, d)
                pa, pb = prox_qstar(a, norm), prox_qstar(b, norm)
                assert np.max(np.abs(prox_qstar(pa, norm) - pa)) < 1e-12
                assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12
                assert qstar_feasibility(pa, norm) <= 1e-12

    def test_l1_ball_vs_brute_force(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 8))
            v = rng.normal(0, 1.2, d)
            got = prox_qstar(v, Norm.LINF)
            assert np.max(np.abs(got - brute_l1_ball(v))) < 1e-10


class TestSimplexProjection:
    def test_examples(self):
        assert np.allclose(project_simplex(np.array([0.5, 0.8])), [0.35, 0.65])
        assert np.allclose(project_simplex(np.array([1.0, 0.0])), [1, 0])
        assert np.allclose(project_simplex(np.array([2.0, -1.0])), [1, 0])

    def test_vs_brute_force(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 9))
            v = rng.normal(0, 1.5, d)
            z = project_simplex(v)
            assert abs(z.sum() - 1.0) < 1e-12
            assert z.min() >= 0.0
            assert np.max(np.abs(z - brute_simplex(v))) < 1e-10


class TestJacobians:
    def test_examples(self):
        assert jac_qstar(np.array([1.5, -0.2]), Norm.L1).diag.tolist() == [0, 1]
        J = jac_qstar(np.array([0.5, 0.8]), Norm.LINF)
        assert np.allclose(J.dense(), np.eye(2) - 0.5 * np.ones((2, 2)))
        v = np.array([3.0, 4.0])
        J2 = jac_qstar(v, Norm.L2)
        assert np.allclose(J2.dense(), (np.eye(2) - np.outer(v, v) / 25.0) / 5.0)

    def test_tie_rules(self):
        assert jac_qstar(np.array([1.0, 0.5]), Norm.L1).diag.tolist() == [0, 1]
        assert np.allclose(jac_qstar(np.array([0.6, 0.8]), Norm.L2).dense(), np.eye(2))
        assert np.allclose(jac_qstar(np.array([0.5, 0.5]), Norm.LINF).dense(), np.eye(2))
        assert jac_hstar(np.array([0.0])).diag.tolist() == [0]

    def test_psd_with_unit_spectrum(self, rng):
        for norm in ALL_NORMS:
            for _ in range(50):
                d = int(rng.integers(1, 8))
                J = jac_qstar(rng.normal(0, 1.5, d), norm).dense()
                ev = np.linalg.eigvalsh((J + J.T) / 2)
                assert ev.min() >= -1e-12 and ev.max() <= 1.0 + 1e-12

    def test_matches_finite_differences(self, rng):
        eps = 1e-6
        checked = {norm: 0 for norm in ALL_NORMS}
        while min(checked.values()) < 50:
            norm = ALL_NORMS[int(rng.integers(0, 3))]
            d = int(rng.integers(2, 9))
            v = rng.normal(0, 1.5, d)
            if _near_kink(v, norm):
                continue
            J = jac_qstar(v, norm)
            u = rng.normal(size=d)
            u /= np.linalg.norm(u)
            fd = (prox_qstar(v + eps * u, norm) - prox_qstar(v - eps * u, norm)) / (2 * eps)
            Ju = J.apply(u)
            assert np.linalg.norm(Ju - fd) <= 1e-5 * (1 + np.linalg.norm(Ju)), norm
            checked[norm] += 1


def _near_kink(v, norm, margin=1e-4):
    if norm == Norm.L1:
        return np.any(np.abs(np.abs(v) - 1.0) < margin)
    if norm == Norm.L2:
        return abs(np.linalg.norm(v) - 1.0) < margin
    # linf: l1-ball boundary, support changes of the simplex projection
    if abs(np.abs(v).sum() - 1.0) < margin:
        return True
    if np.abs(v).sum() > 1.0:
        z = project_simplex(np.abs(v))
        theta = np.max(np.abs(v) - z)
        return np.any(np.abs(np.abs(v) - theta) < margin) or np.any(np.abs(v) < margin)
    return False


class TestProxQ:
    def test_examples(self):
        assert np.allclose(prox_q(np.array([2.0, 0.5]), Norm.L1, 1.0), [1, 0])
        for norm in ALL_NORMS:
            assert np.allclose(prox_q(np.zeros(4), norm, 1.0), 0.0)
        assert np.allclose(prox_q(np.array([0.3, 0.4]), Norm.L2, 1.0), 0.0)

    def test_l1_against_scalar_minimization(self, rng):
        # 1-d oracle: argmin |t| + (sigma/2)(t-x)^2 = soft-threshold at 1/sigma
        for _ in range(100):
            x = float(rng.normal(0, 2))
            sigma = float(rng.uniform(0.2, 5))
            ts = np.linspace(x - 3, x + 3, 200001)
            vals = np.abs(ts) + sigma / 2 * (ts - x) ** 2
            t_star = ts[np.argmin(vals)]
            got = prox_q(np.array([x]), Norm.L1, sigma)[0]
            assert abs(got - t_star) < 1e-4

    def test_moreau_identity_all_norms(self, rng):
        # 1e-12 agreement of the two independently coded routes, 1000 draws per norm
        for norm in ALL_NORMS:
            for _ in range(1000):
                d = int(rng.integers(1, 12))
                x = rng.normal(0, 3, d)
                sigma = float(rng.uniform(0.1, 10))
                lhs = prox_q(x, norm, sigma)
                rhs = x - prox_qstar(sigma * x, norm) / sigma
                assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            prox_q(np.zeros(2), Norm.L1, 0.0)


class TestNormValues:
    def test_examples(self):
        x = np.array([1.0, -3.0, 2.0])
        assert q_value(x, Norm.LINF) == 3.0
        assert q_value(x, Norm.L1) == 6.0
        assert q_value(np.array([3.0, 4.0]), Norm.L2) == 5.0

    def test_feasibility_gauge(self):
        assert qstar_feasibility(np.array([0.5, -0.5]), Norm.L1) == 0.0
        assert qstar_feasibility(np.array([2.0, 0.0]), Norm.L1) == 1.0
        assert abs(qstar_feasibility(np.array([1.0, 1.0]), Norm.LINF) - 1.0) < 1e-12
