"""Proximal augmented Lagrangian loop over a fixed working set.

Each outer iteration solves the proximal subproblem with the semismooth
Newton method, then applies the exact multiplier updates

    u <- Prox_{sigma h*}(sigma (A_S y - b_S) + u)      (orthant projection)
    v <- Prox_{sigma q*}(sigma D y + v)                (dual-ball projection)

and grows sigma.  Inner accuracy follows the summable-sequence criteria:
the (A') floor eps_k sqrt(lambda_min)/sigma_k combined with a practical
target tied to the previous KKT residual, and an (B')-style check against
the M_k-weighted step norm that triggers bounded re-solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConstraintSet, Norm, ProblemInstance, SolverConfig
from .prox import prox_hstar, prox_q, prox_qstar, q_value
from .ssn import make_subproblem, ssn_solve
from .triop import apply_A, apply_AT

__all__ = [
    "PalmState",
    "update_multipliers",
    "kkt_residual",
    "objective_values",
    "PalmRunStats",
    "palm_solve",
]


@dataclass
class PalmState:
    """Iterates of one PALM run: primal y (full length), duals u_S and v."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sigma: float
    k: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def cold(cls, n1: int, n_rows: int, sigma0: float) -> "PalmState":
        return cls(y=np.zeros(n1), u=np.zeros(n_rows), v=np.zeros(n1), sigma=sigma0)


def update_multipliers(y_new: np.ndarray, u: np.ndarray, v: np.ndarray,
                       S: ConstraintSet, weights: np.ndarray, sigma: float,
                       norm: Norm) -> tuple[np.ndarray, np.ndarray]:
    """The Step-2 prox updates; u_new >= 0 and v_new in the dual ball."""
    u_new = prox_hstar(sigma * (apply_A(y_new, S) - S.b_vals) + u)
    v_new = prox_qstar(sigma * weights * y_new + v, norm)
    return u_new, v_new


def kkt_residual(y: np.ndarray, u: np.ndarray, v: np.ndarray,
                 S: ConstraintSet, instance: ProblemInstance,
                 weights: np.ndarray | None = None) -> float:
    """Relative KKT residual of the working-set problem (three-term max).

    The stationarity term applies D explicitly, ||A_S^T u_S + D v|| with v
    the dual of q (not of q composed with D); the other two terms follow the
    projection-residual form.
    """
    if weights is None:
        weights = instance.weights.materialize()
    dv = weights * v
    term1 = np.linalg.norm(apply_AT(u, S, instance.n1) + dv) / (1.0 + np.linalg.norm(dv))
    ws = apply_A(y, S) - S.b_vals
    term2 = np.linalg.norm(ws - np.minimum(0.0, ws + u)) / (1.0 + np.linalg.norm(ws))
    dy = weights * y
    term3 = np.linalg.norm(dy - prox_q(dy + v, instance.norm, 1.0)) \
        / (1.0 + np.linalg.norm(dy))
    return float(max(term1, term2, term3))


def objective_values(y: np.ndarray, u: np.ndarray, S: ConstraintSet,
                     instance: ProblemInstance,
                     weights: np.ndarray | None = None) -> tuple[float, float, float]:
    """pobj = q(Dy), dobj = -<b_S, u_S>, and the relative gap R_g."""
    if weights is None:
        weights = instance.weights.materialize()
    pobj = q_value(weights * y, instance.norm)
    dobj = float(-(S.b_vals @ u))
    rg = abs(pobj - dobj) / (1.0 + abs(dobj))
    return pobj, dobj, rg


@dataclass
class PalmRunStats:
    iterations: int = 0
    ssn_iterations: int = 0
    stagnated: bool = False


def palm_solve(instance: ProblemInstance, S: ConstraintSet, warm: PalmState,
               config: SolverConfig) -> tuple[PalmState, bool, PalmRunStats]:
    """Iterate PALM on the working set S until the practical criteria hold.

    Terminates when eta_kkt < tol, R_g < tol and max(A_S y - b_S) < feas_tol,
    or after palm_max_iters outer iterations.  The warm state is advanced in
    place and returned; S.multipliers mirrors the final u.
    """
    if len(S) == 0:
        raise ValueError("palm_solve needs a nonempty working set")
    weights = instance.weights.materialize()
    norm = instance.norm
    c = config.h_scale_for(norm)
    sqrt_lmin = math.sqrt(min(c, 1.0))
    involved = S.involved
    state = warm
    stats = PalmRunStats()
    converged = False
    eta_prev = math.inf

    for k in range(config.palm_max_iters):
        sigma = state.sigma
        sub = make_subproblem(S, weights, norm, sigma, c, state.y, state.u, state.v)
        eps_k = config.eps_seq_scale / (k + 1) ** 2
        delta_k = min(0.9, config.delta_seq_scale / (k + 1) ** 2)
        # practical target, floored by the summable (A') bound
        stop_inner = max(eps_k * sqrt_lmin / sigma,
                         min(0.1 * eta_prev, config.tol))
        y_I, sstats = ssn_solve(sub, state.y[involved], stop_inner, config.ssn)
        stats.ssn_iterations += sstats.iterations
        y_new = state.y.copy()
        y_new[involved] = y_I
        u_new, v_new = update_multipliers(y_new, state.u, state.v, S,
                                          weights, sigma, norm)
        # (B') check on the M_k-weighted step, with bounded re-solves
        for _ in range(3):
            step_sq = (c * float(np.dot(y_new - state.y, y_new - state.y))
                       + float(np.dot(u_new - state.u, u_new - state.u))
                       + float(np.dot(v_new - state.v, v_new - state.v)))
            bound = delta_k * sqrt_lmin / sigma * math.sqrt(step_sq)
            if sstats.stagnated or not sstats.converged or step_sq <= 1e-28 \
                    or sstats.final_state.grad_norm <= bound:
                break
            y_I, sstats = ssn_solve(sub, y_I, max(bound, 1e-14), config.ssn)
            stats.ssn_iterations += sstats.iterations
            y_new = state.y.copy()
            y_new[involved] = y_I
            u_new, v_new = update_multipliers(y_new, state.u, state.v, S,
                                              weights, sigma, norm)

        state.y, state.u, state.v = y_new, u_new, v_new
        state.k += 1
        stats.iterations += 1

        eta = kkt_residual(state.y, state.u, state.v, S, instance, weights)
        pobj, dobj, rg = objective_values(state.y, state.u, S, instance, weights)
        ws = apply_A(state.y, S) - S.b_vals
        max_slack = float(ws.max()) if len(ws) else -math.inf
        state.history.append(
            {"k": state.k, "sigma": sigma, "eta_kkt": eta, "R_g": rg,
             "max_slack": max_slack, "pobj": pobj, "dobj": dobj})
        eta_prev = eta

        if eta < config.tol and rg < config.tol and max_slack < config.feas_tol:
            converged = True
            break
        if sstats.stagnated:
            stats.stagnated = True
            break
        state.sigma = min(config.sigma_max, config.sigma_growth * state.sigma)

    S.multipliers = state.u.copy()
    return state, converged, stats
