"""Delayed constraint generation driver.

Starts from the rows violated by y = 0 (those with b < 0), alternates PALM
solves on the working set with full feasibility scans, grows/shrinks the set
by the biggest-violation / slackest-row rules, and certifies the final
iterate against the complete constraint system in one streaming pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import ConstraintSet, ProblemInstance, SolveReport, SolverConfig
from .palm import PalmState, palm_solve
from .prox import prox_q, q_value
from .triop import (
    ViolationBatch,
    apply_A,
    apply_AT,
    build_constraint_set,
    feasibility_scan,
)

__all__ = [
    "initial_constraints",
    "update_working_set",
    "apply_set_change",
    "CertifyResult",
    "certify",
    "dcgm_solve",
]


def initial_constraints(instance: ProblemInstance, threads: int = 1) -> ConstraintSet:
    """Working set seeded from y = 0: exactly the rows with b_r < 0."""
    batch = feasibility_scan(np.zeros(instance.n1), instance,
                             exclude=None, top_k=None, threads=threads)
    return build_constraint_set(batch.rows, instance)


def update_working_set(S: ConstraintSet, batch: ViolationBatch, y: np.ndarray,
                       instance: ProblemInstance) -> ConstraintSet:
    """Apply the drop-then-add rules to the working set.

    Adds the min(|S|, |S'|) biggest violations (min(|S'|, n) when S is
    empty); drops the slackest half of S first when |S'| > |S| and
    |S| > n(n-1)/4.  Retained rows keep their multipliers bit-exactly, new
    rows start at zero.
    """
    if batch.n_violated == 0:
        return S
    pre = len(S)
    n = instance.n
    add_count = min(pre, batch.n_violated) if pre > 0 else min(batch.n_violated, n)

    keep = np.ones(pre, dtype=bool)
    if batch.n_violated > pre and pre > n * (n - 1) // 4:
        slack = apply_A(y, S) - S.b_vals
        order = np.lexsort((S.row_ids, slack))  # slack ascending, row id on ties
        keep[order[: pre // 2]] = False
    kept_ids = S.row_ids[keep]
    kept_mult = S.multipliers[keep]

    new_ids = batch.rows[:add_count]
    all_ids = np.sort(np.concatenate([kept_ids, new_ids]))
    out = build_constraint_set(all_ids, instance)
    out.multipliers[np.searchsorted(all_ids, kept_ids)] = kept_mult
    return out


def apply_set_change(state: PalmState, S_old: ConstraintSet,
                     S_new: ConstraintSet) -> None:
    """Rebind a PALM state to a changed working set.

    Multipliers follow S_new (retained rows keep values, new rows are zero).
    Coordinates that lost every incident row are pinned back to zero in both
    y and v: y_I-bar = 0 by the reduced-problem convention, and a stale
    nonzero v there would leave a permanent floor in the full-problem
    stationarity residual (the componentwise l1-dual clip never forgets).
    """
    leaving = np.setdiff1d(S_old.involved, S_new.involved, assume_unique=True)
    if leaving.size:
        state.y[leaving] = 0.0
        state.v[leaving] = 0.0
    state.u = S_new.multipliers.copy()


@dataclass
class CertifyResult:
    eta_kkt: float
    eta_f: float
    pobj: float
    dobj: float
    term_stationarity: float
    term_cone: float
    term_norm: float


def _full_kkt(batch: ViolationBatch, y: np.ndarray, S: ConstraintSet,
              u: np.ndarray, v: np.ndarray, instance: ProblemInstance,
              weights: np.ndarray) -> CertifyResult:
    """Assemble the whole-problem certificate from scan accumulators.

    Rows outside S carry u_r = 0, so their projection residual reduces to
    the positive part already summed by the scan; only the S rows need the
    explicit min(0, w + u) correction.
    """
    n1 = instance.n1
    dv = weights * v
    term1 = float(np.linalg.norm(apply_AT(u, S, n1) + dv) / (1.0 + np.linalg.norm(dv)))
    ws = apply_A(y, S) - S.b_vals
    sres = ws - np.minimum(0.0, ws + u)
    term2 = float(np.sqrt(batch.viol_sq_outside + sres @ sres)
                  / (1.0 + np.sqrt(batch.resid_sq_all)))
    dy = weights * y
    term3 = float(np.linalg.norm(dy - prox_q(dy + v, instance.norm, 1.0))
                  / (1.0 + np.linalg.norm(dy)))
    return CertifyResult(
        eta_kkt=max(term1, term2, term3),
        eta_f=batch.max_violation,
        pobj=q_value(dy, instance.norm),
        dobj=float(-(S.b_vals @ u)),
        term_stationarity=term1,
        term_cone=term2,
        term_norm=term3,
    )


def certify(y: np.ndarray, instance: ProblemInstance,
            S: ConstraintSet | None = None, u: np.ndarray | None = None,
            v: np.ndarray | None = None, threads: int = 1) -> CertifyResult:
    """Whole-problem residuals for any candidate (y, u_S, v) in one pass.

    Usable on any solution vector (including the Dykstra baseline's); u is
    given over S only, zeros implied elsewhere.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (instance.n1,):
        raise ValueError(f"solution vector must have length n1={instance.n1}")
    if not np.all(np.isfinite(y)):
        raise ValueError("solution vector must be finite")
    if S is None:
        S = ConstraintSet.empty()
    u = np.zeros(len(S)) if u is None else np.asarray(u, dtype=np.float64)
    v = np.zeros(instance.n1) if v is None else np.asarray(v, dtype=np.float64)
    batch = feasibility_scan(y, instance, exclude=S, top_k=0, threads=threads)
    weights = instance.weights.materialize()
    return _full_kkt(batch, y, S, u, v, instance, weights)


def dcgm_solve(instance: ProblemInstance,
               config: SolverConfig | None = None) -> tuple[np.ndarray, SolveReport]:
    """Full constraint-generation solve; also returns the final PALM state.

    Termination needs an empty violation batch AND the whole-problem
    certificate eta_f < feas_tol, eta_kkt < tol.  The returned report's
    working-set lists have one entry per PALM round.
    """
    config = config or SolverConfig()
    config.validate()
    report = SolveReport()
    threads = config.threads
    weights = instance.weights.materialize()
    n1 = instance.n1
    t_start = time.perf_counter()
    t_scan = 0.0
    t_palm = 0.0

    t0 = time.perf_counter()
    batch = feasibility_scan(np.zeros(n1), instance, exclude=None,
                             top_k=None, threads=threads)
    t_scan += time.perf_counter() - t0
    S = build_constraint_set(batch.rows, instance)

    state = PalmState.cold(n1, len(S), config.sigma0)
    if len(S) == 0:
        # already metric: zero is the unique solution, nothing to generate
        cert = _full_kkt(batch, state.y, S, state.u, state.v, instance, weights)
        report.converged = bool(cert.eta_f < config.feas_tol
                                and cert.eta_kkt < config.tol)
        _finalize(report, cert, t_start, t_scan, t_palm)
        report.final_state = state
        report.working_set = S
        return state.y, report

    cert = None
    tighten = 0
    config_eff = config
    for _ in range(config.dcgm_max_rounds):
        t0 = time.perf_counter()
        state, _, pstats = palm_solve(instance, S, state, config_eff)
        t_palm += time.perf_counter() - t0
        report.dcgm_iters += 1
        report.palm_iters_total += pstats.iterations
        report.ssn_iters_total += pstats.ssn_iterations
        report.working_set_sizes.append(len(S))
        report.involved_var_counts.append(int(len(S.involved)))

        t0 = time.perf_counter()
        batch = feasibility_scan(state.y, instance, exclude=S,
                                 top_k=max(len(S), instance.n), threads=threads)
        t_scan += time.perf_counter() - t0
        cert = _full_kkt(batch, state.y, S, state.u, state.v, instance, weights)

        if batch.n_violated == 0:
            if cert.eta_f < config.feas_tol and cert.eta_kkt < config.tol:
                report.converged = True
                break
            if tighten >= 2 or pstats.stagnated:
                break
            # nothing left to add; polish on the same set at tighter tol
            tighten += 1
            config_eff = config.with_tol(config.tol * 0.1**tighten)
            continue
        if pstats.stagnated:
            break

        S_new = update_working_set(S, batch, state.y, instance)
        apply_set_change(state, S, S_new)
        S = S_new

    _finalize(report, cert, t_start, t_scan, t_palm)
    report.final_state = state
    report.working_set = S
    return state.y, report


def _finalize(report: SolveReport, cert: CertifyResult | None,
              t_start: float, t_scan: float, t_palm: float):
    if cert is not None:
        report.pobj = cert.pobj
        report.dobj = cert.dobj
        report.eta_kkt = cert.eta_kkt
        report.eta_f = cert.eta_f
    report.timings = {
        "scan": t_scan,
        "palm": t_palm,
        "total": time.perf_counter() - t_start,
    }
