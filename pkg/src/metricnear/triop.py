"""Implicit triangle-constraint operator.

The constraint matrix A (one row per ordered triangle inequality) is never
stored: rows are decoded from their row id on demand, the working-set
products A_S y and A_S^T u are gather/scatter passes over three index
columns, and full feasibility checks stream over all 3*C(n,3) rows in
blocks grouped by the largest node of the triple.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    ConstraintSet,
    ProblemInstance,
    pair_count,
    row_count,
    triple_count,
    triple_unrank,
)

__all__ = [
    "row_coefficients",
    "compute_b",
    "decode_rows",
    "build_constraint_set",
    "apply_A",
    "apply_AT",
    "ViolationBatch",
    "feasibility_scan",
    "involved_variables",
]

# rows per scan block before handing work to the next chunk
_CHUNK_ROW_BUDGET = 400_000


def row_coefficients(row_id: int, n: int) -> tuple[int, int, int]:
    """Decode one row id into pair slots (long, a, b): +1 on long, -1 on a, b."""
    if not (0 <= row_id < row_count(n)):
        raise ValueError(f"row id {row_id} out of range for n={n}")
    t, variant = divmod(row_id, 3)
    i, j, k = triple_unrank(t, n)
    pij = (j - 1) * (j - 2) // 2 + i - 1
    pik = (k - 1) * (k - 2) // 2 + i - 1
    pjk = (k - 1) * (k - 2) // 2 + j - 1
    edges = (pij, pik, pjk)
    others = [e for idx, e in enumerate(edges) if idx != variant]
    return edges[variant], others[0], others[1]


def compute_b(row_id: int, instance: ProblemInstance) -> float:
    """Right-hand side b_r = x~_a + x~_b - x~_long of one row."""
    long_e, a_e, b_e = row_coefficients(row_id, instance.n)
    x = instance.dissimilarity
    return x.get(a_e) + x.get(b_e) - x.get(long_e)


def decode_rows(row_ids: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized row decode: arrays of (long, a, b) pair slots.

    Unranks the lexicographic triple of each row by searching cumulative
    binomial counts, then routes the three edge slots by variant.
    """
    row_ids = np.asarray(row_ids, dtype=np.int64)
    if row_ids.size == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    if row_ids.min() < 0 or row_ids.max() >= row_count(n):
        raise ValueError("row id out of range")
    t, variant = np.divmod(row_ids, 3)

    # first element i: F(i) = #triples with first element < i, i = 1..n-2
    ivals = np.arange(1, n - 1, dtype=np.int64)
    first_cum = triple_count(n) - _comb3(n - ivals + 1)
    i = np.searchsorted(first_cum, t, side="right").astype(np.int64)
    rem = t - (triple_count(n) - _comb3(n - i + 1))

    # second element j: G(j) = C(n-i,2) - C(n-j+1,2); want largest j with G(j) <= rem
    big_r = _comb2(n - i) - rem            # need C(n-j+1,2) >= big_r, smallest m = n-j+1
    m = np.ceil((1.0 + np.sqrt(1.0 + 8.0 * big_r.astype(np.float64))) / 2.0).astype(np.int64)
    m = np.where(_comb2(m - 1) >= big_r, m - 1, m)
    m = np.where(_comb2(m) < big_r, m + 1, m)
    j = n - m + 1
    rem2 = rem - (_comb2(n - i) - _comb2(n - j + 1))
    k = j + 1 + rem2

    pij = (j - 1) * (j - 2) // 2 + i - 1
    pik = (k - 1) * (k - 2) // 2 + i - 1
    pjk = (k - 1) * (k - 2) // 2 + j - 1
    long_idx = np.choose(variant, [pij, pik, pjk])
    a_idx = np.choose(variant, [pik, pij, pij])
    b_idx = np.choose(variant, [pjk, pjk, pik])
    return long_idx, a_idx, b_idx


def _comb2(m):
    m = np.maximum(m, 0)
    return m * (m - 1) // 2


def _comb3(m):
    m = np.maximum(m, 0)
    return m * (m - 1) * (m - 2) // 6


def build_constraint_set(row_ids, instance: ProblemInstance,
                         multipliers=None) -> ConstraintSet:
    """Materialize a working set (sorted row ids) with decoded slots and b."""
    row_ids = np.sort(np.asarray(row_ids, dtype=np.int64))
    long_idx, a_idx, b_idx = decode_rows(row_ids, instance.n)
    x = instance.dissimilarity.materialize()
    b_vals = x[a_idx] + x[b_idx] - x[long_idx]
    return ConstraintSet(row_ids, long_idx, a_idx, b_idx, b_vals, multipliers)


def apply_A(y: np.ndarray, S: ConstraintSet) -> np.ndarray:
    """A_S y: per row, y_long - y_a - y_b."""
    if len(S) == 0:
        return np.zeros(0)
    return y[S.long_idx] - y[S.a_idx] - y[S.b_idx]


def apply_AT(u: np.ndarray, S: ConstraintSet, n1: int) -> np.ndarray:
    """A_S^T u: scatter-add of +-u into the three incident pair slots."""
    if len(S) == 0:
        return np.zeros(n1)
    out = np.bincount(S.long_idx, weights=u, minlength=n1)
    out -= np.bincount(S.a_idx, weights=u, minlength=n1)
    out -= np.bincount(S.b_idx, weights=u, minlength=n1)
    return out


def involved_variables(S: ConstraintSet) -> np.ndarray:
    """Sorted pair slots appearing in any working-set row (the set I)."""
    return S.involved


@dataclass
class ViolationBatch:
    """Result of one full feasibility pass.

    ``rows``/``violations`` list the top-K violated rows outside the excluded
    set, sorted by descending violation (ties to the smaller row id);
    ``n_violated`` counts every strictly violated non-excluded row.
    ``max_violation`` is the signed max of A_r y - b_r over ALL rows (the
    eta_f numerator); the two accumulators feed the full-problem KKT
    residual without a second O(n^3) pass.
    """

    rows: np.ndarray               # int64 row ids
    violations: np.ndarray         # matching positive magnitudes
    n_violated: int
    max_violation: float
    viol_sq_outside: float         # sum of max(0, A_r y - b_r)^2 over non-excluded rows
    resid_sq_all: float            # sum of (A_r y - b_r)^2 over all rows


def _k_blocks(n: int):
    """Group k = 3..n into chunks of bounded total row count (fixed layout)."""
    chunks, cur, cur_rows = [], [], 0
    for k in range(3, n + 1):
        rows = 3 * pair_count(k - 1)
        cur.append(k)
        cur_rows += rows
        if cur_rows >= _CHUNK_ROW_BUDGET:
            chunks.append(cur)
            cur, cur_rows = [], 0
    if cur:
        chunks.append(cur)
    return chunks


def _scan_chunk(ks, m, n, exclude_ids, top_k, want_all, i0, j0):
    """Stream every row whose triple has its largest node in `ks`."""
    max_viol = -np.inf
    resid_sq = 0.0
    viol_sq_out = 0.0
    n_violated = 0
    cand_rows, cand_viols = [], []
    n3 = triple_count(n)
    for k in ks:
        npairs = pair_count(k - 1)
        iv = i0[:npairs]
        jv = j0[:npairs]
        base = (k - 1) * (k - 2) // 2
        mij = m[:npairs]
        mik = m[base + iv - 1]
        mjk = m[base + jv - 1]
        # lexicographic triple rank of (i, j, k) for this block
        t = (n3 - _comb3(n - iv + 1)) + (_comb2(n - iv) - _comb2(n - jv + 1)) + (k - jv - 1)
        for variant, viol in ((0, mij - mik - mjk), (1, mik - mij - mjk), (2, mjk - mij - mik)):
            rows = 3 * t + variant
            resid_sq += float(np.dot(viol, viol))
            bmax = float(viol.max()) if npairs else -np.inf
            if bmax > max_viol:
                max_viol = bmax
            pos = viol > 0.0
            if not pos.any():
                continue
            prow = rows[pos]
            pviol = viol[pos]
            if exclude_ids.size:
                loc = np.searchsorted(exclude_ids, prow)
                loc = np.minimum(loc, exclude_ids.size - 1)
                outside = exclude_ids[loc] != prow
            else:
                outside = np.ones(prow.size, dtype=bool)
            if outside.any():
                ov = pviol[outside]
                viol_sq_out += float(np.dot(ov, ov))
                n_violated += int(outside.sum())
                if want_all or top_k > 0:
                    orow = prow[outside]
                    if not want_all and ov.size > top_k:
                        part = np.argpartition(-ov, top_k - 1)[:top_k]
                        ov, orow = ov[part], orow[part]
                    cand_rows.append(orow)
                    cand_viols.append(ov)
    return cand_rows, cand_viols, n_violated, max_viol, viol_sq_out, resid_sq


def feasibility_scan(y: np.ndarray, instance: ProblemInstance,
                     exclude: ConstraintSet | None = None,
                     top_k: int | None = None,
                     threads: int = 1) -> ViolationBatch:
    """Check all rows of A y <= b, returning the worst offenders outside S.

    ``top_k`` bounds the returned row list (None keeps every violated row);
    chunk boundaries and the final reduction order are fixed, so the result
    is identical for any thread count.
    """
    n = instance.n
    if top_k is not None and top_k < 0:
        raise ValueError("top_k must be nonnegative")
    m = instance.dissimilarity.materialize() + y
    exclude_ids = exclude.row_ids if exclude is not None else np.zeros(0, dtype=np.int64)
    want_all = top_k is None
    kk = top_k if top_k is not None else 0

    # (i, j) of each pair slot, reused as prefixes by every block
    j0 = np.repeat(np.arange(2, n + 1, dtype=np.int64), np.arange(1, n, dtype=np.int64))
    i0 = np.concatenate([np.arange(1, j, dtype=np.int64) for j in range(2, n + 1)])

    chunks = _k_blocks(n)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda ks: _scan_chunk(ks, m, n, exclude_ids, kk, want_all, i0, j0),
                chunks))
    else:
        parts = [_scan_chunk(ks, m, n, exclude_ids, kk, want_all, i0, j0)
                 for ks in chunks]

    # deterministic reduction in chunk order
    cand_rows, cand_viols = [], []
    n_violated, max_viol, viol_sq_out, resid_sq = 0, -np.inf, 0.0, 0.0
    for cr, cv, nv, mv, vs, rs in parts:
        cand_rows.extend(cr)
        cand_viols.extend(cv)
        n_violated += nv
        max_viol = max(max_viol, mv)
        viol_sq_out += vs
        resid_sq += rs

    if cand_rows:
        rows = np.concatenate(cand_rows)
        viols = np.concatenate(cand_viols)
        order = np.lexsort((rows, -viols))  # violation desc, row id asc on ties
        if not want_all:
            order = order[:kk]
        rows, viols = rows[order], viols[order]
    else:
        rows = np.zeros(0, dtype=np.int64)
        viols = np.zeros(0)
    return ViolationBatch(
        rows=rows,
        violations=viols,
        n_violated=n_violated,
        max_violation=float(max_viol),
        viol_sq_outside=viol_sq_out,
        resid_sq_all=resid_sq,
    )
