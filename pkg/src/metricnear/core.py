"""Domain types and index arithmetic for the metric nearness solver.

Conventions
-----------
Node labels are 1-based: pairs are (i, j) with 1 <= i < j <= n, triples are
(i, j, k) with i < j < k.  All flat array indices (pair slots, triple ranks,
constraint row ids) are 0-based.  Pair slots follow the column-major
upper-triangle order x_12, x_13, x_23, x_14, x_24, x_34, ..., x_{n-1,n};
triple ranks are lexicographic in (i, j, k).  Each triple owns three
constraint rows, ``row_id = 3 * triple_rank + variant`` with variant v
putting the +1 coefficient on the v-th edge of [(i,j), (i,k), (j,k)] and -1
on the other two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "Norm",
    "pair_count",
    "triple_count",
    "row_count",
    "pair_index",
    "pair_unrank",
    "triple_rank",
    "triple_unrank",
    "SparseTriVec",
    "ProblemInstance",
    "ConstraintRecord",
    "ConstraintSet",
    "SsnConfig",
    "SolverConfig",
    "SolveReport",
]


class Norm(str, Enum):
    """Which weighted vector norm measures the distance deviation."""

    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


def pair_count(n: int) -> int:
    """Number of node pairs n1 = n(n-1)/2."""
    return n * (n - 1) // 2


def triple_count(n: int) -> int:
    """Number of node triples C(n, 3)."""
    return n * (n - 1) * (n - 2) // 6


def row_count(n: int) -> int:
    """Number of triangle-inequality rows n2 = 3 * C(n, 3)."""
    return 3 * triple_count(n)


def pair_index(i: int, j: int, n: int) -> int:
    """Flat 0-based slot of the pair (i, j), 1 <= i < j <= n.

    The 1-based trivec slot is (j-1)(j-2)/2 + i; this returns it shifted
    down by one so that (1, 2) maps to 0.
    """
    if not (1 <= i < j <= n):
        raise ValueError(f"invalid pair ({i}, {j}) for n={n}")
    return (j - 1) * (j - 2) // 2 + i - 1


def pair_unrank(k: int, n: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`: flat slot -> (i, j)."""
    if not (0 <= k < pair_count(n)):
        raise ValueError(f"pair slot {k} out of range for n={n}")
    # largest j with (j-1)(j-2)/2 <= k
    j = (3 + math.isqrt(8 * k + 1)) // 2
    while (j - 1) * (j - 2) // 2 > k:
        j -= 1
    while j * (j - 1) // 2 <= k:
        j += 1
    i = k - (j - 1) * (j - 2) // 2 + 1
    return i, j


def triple_rank(i: int, j: int, k: int, n: int) -> int:
    """Lexicographic 0-based rank of the triple (i, j, k), i < j < k <= n."""
    if not (1 <= i < j < k <= n):
        raise ValueError(f"invalid triple ({i}, {j}, {k}) for n={n}")
    return (
        triple_count(n)
        - triple_count(n - i + 1)
        + pair_count(n - i)
        - pair_count(n - j + 1)
        + (k - j - 1)
    )


def triple_unrank(t: int, n: int) -> tuple[int, int, int]:
    """Inverse of :func:`triple_rank`, by binary search on cumulative counts."""
    if not (0 <= t < triple_count(n)):
        raise ValueError(f"triple rank {t} out of range for n={n}")
    # first(i) = number of triples whose first element is < i
    lo, hi = 1, n - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if triple_count(n) - triple_count(n - mid + 1) <= t:
            lo = mid
        else:
            hi = mid - 1
    i = lo
    rem = t - (triple_count(n) - triple_count(n - i + 1))
    lo, hi = i + 1, n - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if pair_count(n - i) - pair_count(n - mid + 1) <= rem:
            lo = mid
        else:
            hi = mid - 1
    j = lo
    k = j + 1 + (rem - (pair_count(n - i) - pair_count(n - j + 1)))
    return i, j, k


@dataclass(frozen=True)
class SparseTriVec:
    """Default-value + exception-map view of a length-n1 pair vector.

    Entry k reads ``exceptions[k]`` if present, otherwise ``default_value``.
    Used for the dissimilarities trivec(X~) and the weights trivec(W) so that
    sparse-graph instances never store a dense n1 vector by obligation.
    """

    n: int
    default_value: float
    exceptions: dict[int, float]

    def __post_init__(self):
        n1 = pair_count(self.n)
        for k in self.exceptions:
            if not (0 <= k < n1):
                raise ValueError(f"exception key {k} out of range (n1={n1})")

    def get(self, k: int) -> float:
        return self.exceptions.get(k, self.default_value)

    def materialize(self) -> np.ndarray:
        """Dense float64 vector of length n1."""
        out = np.full(pair_count(self.n), self.default_value, dtype=np.float64)
        if self.exceptions:
            idx = np.fromiter(self.exceptions.keys(), dtype=np.int64, count=len(self.exceptions))
            val = np.fromiter(self.exceptions.values(), dtype=np.float64, count=len(self.exceptions))
            out[idx] = val
        return out

    def min_value(self) -> float:
        vals = [self.default_value] if len(self.exceptions) < pair_count(self.n) else []
        if self.exceptions:
            vals.append(min(self.exceptions.values()))
        return min(vals)


@dataclass(frozen=True)
class ProblemInstance:
    """One metric nearness problem: n, dissimilarities x~, weights W, norm."""

    n: int
    dissimilarity: SparseTriVec
    weights: SparseTriVec
    norm: Norm

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need n >= 3 nodes")
        if self.dissimilarity.n != self.n or self.weights.n != self.n:
            raise ValueError("SparseTriVec node counts disagree with instance")
        if self.dissimilarity.min_value() < 0:
            raise ValueError("dissimilarities must be nonnegative")
        if self.weights.min_value() <= 0:
            raise ValueError("all weights must be strictly positive")

    @property
    def n1(self) -> int:
        return pair_count(self.n)

    @property
    def n2(self) -> int:
        return row_count(self.n)


@dataclass(frozen=True)
class ConstraintRecord:
    """One decoded triangle-inequality row: +1 on pair_long, -1 on pair_a/pair_b."""

    row_id: int
    pair_long: int
    pair_a: int
    pair_b: int
    b_value: float


class ConstraintSet:
    """Working set S of triangle rows, stored columnar.

    ``row_ids`` is strictly increasing; ``long_idx``/``a_idx``/``b_idx`` hold
    the flat pair slots carrying the +1 / -1 / -1 coefficients; ``b_vals`` the
    right-hand sides; ``multipliers`` the dual u_S (the one mutable field).
    """

    def __init__(self, row_ids, long_idx, a_idx, b_idx, b_vals, multipliers=None):
        self.row_ids = np.asarray(row_ids, dtype=np.int64)
        self.long_idx = np.asarray(long_idx, dtype=np.int64)
        self.a_idx = np.asarray(a_idx, dtype=np.int64)
        self.b_idx = np.asarray(b_idx, dtype=np.int64)
        self.b_vals = np.asarray(b_vals, dtype=np.float64)
        if multipliers is None:
            multipliers = np.zeros(len(self.row_ids))
        self.multipliers = np.asarray(multipliers, dtype=np.float64)
        if len(self.row_ids) > 1 and not np.all(np.diff(self.row_ids) > 0):
            raise ValueError("row_ids must be strictly increasing (sorted, no duplicates)")
        lengths = {len(self.long_idx), len(self.a_idx), len(self.b_idx),
                   len(self.b_vals), len(self.multipliers)}
        if lengths != {len(self.row_ids)}:
            raise ValueError("constraint set column lengths disagree")
        self._involved = None

    @classmethod
    def empty(cls) -> "ConstraintSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0))

    def __len__(self) -> int:
        return len(self.row_ids)

    @property
    def involved(self) -> np.ndarray:
        """Sorted unique pair slots touched by any row in the set."""
        if self._involved is None:
            if len(self) == 0:
                self._involved = np.zeros(0, dtype=np.int64)
            else:
                self._involved = np.unique(
                    np.concatenate([self.long_idx, self.a_idx, self.b_idx]))
        return self._involved

    def record(self, pos: int) -> ConstraintRecord:
        return ConstraintRecord(
            row_id=int(self.row_ids[pos]),
            pair_long=int(self.long_idx[pos]),
            pair_a=int(self.a_idx[pos]),
            pair_b=int(self.b_idx[pos]),
            b_value=float(self.b_vals[pos]),
        )

    def records(self):
        return [self.record(p) for p in range(len(self))]


@dataclass
class SsnConfig:
    """Inner semismooth Newton parameters (Algorithm-2 style ranges)."""

    mu: float = 1e-4            # Armijo slope fraction, in (0, 1/2)
    eta_bar: float = 0.1        # CG residual ceiling, in (0, 1)
    tau: float = 0.5            # superlinear exponent, in (0, 1]
    delta: float = 0.5          # backtracking ratio, in (0, 1)
    cg_max_iters: int = 300
    max_iters: int = 100
    line_search_max: int = 50
    direct_solve_max_dim: int = 200

    def validate(self):
        if not (0 < self.mu < 0.5):
            raise ValueError("ssn.mu must lie in (0, 1/2)")
        if not (0 < self.eta_bar < 1):
            raise ValueError("ssn.eta_bar must lie in (0, 1)")
        if not (0 < self.tau <= 1):
            raise ValueError("ssn.tau must lie in (0, 1]")
        if not (0 < self.delta < 1):
            raise ValueError("ssn.delta must lie in (0, 1)")


@dataclass
class SolverConfig:
    """Outer-solver configuration with the defaults pinned by the method."""

    tol: float = 1e-4
    feas_tol: float = 1e-2
    sigma0: float = 1.0
    sigma_growth: float = 2.0
    sigma_max: float = 1e6
    h_scale: float | None = None   # c in H = c*I; per-norm default if None
    ssn: SsnConfig = field(default_factory=SsnConfig)
    palm_max_iters: int = 1000
    eps_seq_scale: float = 1.0
    delta_seq_scale: float = 1.0
    dcgm_max_rounds: int = 100
    threads: int = 1
    seed: int = 0

    def validate(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.h_scale is not None and self.h_scale <= 0:
            raise ValueError("h_scale must be positive")
        self.ssn.validate()

    def h_scale_for(self, norm: Norm) -> float:
        # constant proximal scaling: 1e-6 keeps the l2 inner problems mild,
        # the polyhedral norms take 1e-3
        if self.h_scale is not None:
            return self.h_scale
        return 1e-6 if norm == Norm.L2 else 1e-3

    def with_tol(self, tol: float) -> "SolverConfig":
        return replace(self, tol=tol)


@dataclass
class SolveReport:
    """Outcome of a full constraint-generation solve."""

    pobj: float = float("nan")
    dobj: float = float("nan")
    eta_kkt: float = float("nan")
    eta_f: float = float("nan")
    dcgm_iters: int = 0
    palm_iters_total: int = 0
    ssn_iters_total: int = 0
    working_set_sizes: list[int] = field(default_factory=list)
    involved_var_counts: list[int] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    converged: bool = False
    # solver state for certification / solution export; not serialized
    final_state: object = field(default=None, repr=False)
    working_set: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "pobj": self.pobj,
            "dobj": self.dobj,
            "eta_kkt": self.eta_kkt,
            "eta_f": self.eta_f,
            "dcgm_iters": self.dcgm_iters,
            "palm_iters_total": self.palm_iters_total,
            "ssn_iters_total": self.ssn_iters_total,
            "working_set_sizes": list(self.working_set_sizes),
            "involved_var_counts": list(self.involved_var_counts),
            "timings": dict(self.timings),
            "converged": self.converged,
        }
