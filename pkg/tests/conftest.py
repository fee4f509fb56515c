"""Shared fixtures and independent oracles for the test suite.

The dense constraint matrix here is built by explicit nested loops over
pairs and triples, independent of the package's index arithmetic, so that
operator tests compare two separately derived constructions.
"""

import itertools

import numpy as np
import pytest

from metricnear.core import Norm, ProblemInstance, SparseTriVec


def dense_A(n: int) -> np.ndarray:
    """All 3*C(n,3) triangle rows as a dense matrix, built from scratch."""
    pairs = [(i, j) for j in range(2, n + 1) for i in range(1, j)]
    pos = {p: k for k, p in enumerate(pairs)}
    triples = [(i, j, k)
               for i in range(1, n + 1)
               for j in range(i + 1, n + 1)
               for k in range(j + 1, n + 1)]
    A = np.zeros((3 * len(triples), len(pairs)))
    r = 0
    for (i, j, k) in triples:
        edges = [(i, j), (i, k), (j, k)]
        for v in range(3):
            A[r, pos[edges[v]]] = 1.0
            for o in range(3):
                if o != v:
                    A[r, pos[edges[o]]] = -1.0
            r += 1
    return A


def dense_b(instance: ProblemInstance) -> np.ndarray:
    return -dense_A(instance.n) @ instance.dissimilarity.materialize()


def tri_instance(norm: Norm) -> ProblemInstance:
    """The canonical 3-node fixture x~ = (1, 1, 3), unit weights."""
    x = SparseTriVec(3, 0.0, {0: 1.0, 1: 1.0, 2: 3.0})
    w = SparseTriVec(3, 1.0, {})
    return ProblemInstance(3, x, w, norm)


def unit_metric_instance(n: int, norm: Norm = Norm.L1) -> ProblemInstance:
    """x~ = 1 everywhere: already a metric, zero is the unique solution."""
    return ProblemInstance(n, SparseTriVec(n, 1.0, {}), SparseTriVec(n, 1.0, {}), norm)


def euclidean_metric_instance(n: int, seed: int, norm: Norm = Norm.L2) -> ProblemInstance:
    """Distances of random planar points: a genuine metric instance."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (n, 2))
    exc = {}
    k = 0
    for j in range(2, n + 1):
        for i in range(1, j):
            exc[k] = float(np.linalg.norm(pts[i - 1] - pts[j - 1]))
            k += 1
    return ProblemInstance(n, SparseTriVec(n, 0.0, exc), SparseTriVec(n, 1.0, {}), norm)


def brute_simplex(v: np.ndarray) -> np.ndarray:
    """Projection onto the unit simplex by support enumeration (dim <= ~10)."""
    m = len(v)
    best, best_d = None, np.inf
    for size in range(1, m + 1):
        for supp in itertools.combinations(range(m), size):
            z = np.zeros(m)
            sub = v[list(supp)]
            cand = sub - (sub.sum() - 1.0) / size
            if (cand >= -1e-12).all():
                z[list(supp)] = np.maximum(cand, 0.0)
                d = np.sum((z - v) ** 2)
                if d < best_d:
                    best, best_d = z, d
    return best


def brute_l1_ball(v: np.ndarray) -> np.ndarray:
    """Projection onto the unit l1 ball by sign/support enumeration."""
    if np.abs(v).sum() <= 1.0:
        return v.copy()
    m = len(v)
    best, best_d = None, np.inf
    for signs in itertools.product((-1, 0, 1), repeat=m):
        s = np.array(signs, dtype=float)
        supp = s != 0
        size = int(supp.sum())
        if size == 0:
            continue
        # equality-constrained least squares on the face sum(s_i z_i) = 1
        theta = (s[supp] @ v[supp] - 1.0) / size
        z = np.zeros(m)
        z[supp] = v[supp] - theta * s[supp]
        if (np.sign(z[supp]) * s[supp] >= -1e-12).all() \
                and np.abs(z).sum() <= 1.0 + 1e-10:
            d = np.sum((z - v) ** 2)
            if d < best_d:
                best, best_d = z, d
    return best


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
