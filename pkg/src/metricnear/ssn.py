"""Semismooth Newton solver for one proximal augmented-Lagrangian subproblem.

The subproblem minimizes

    phi(y) = e_{h/sigma}(A_S y - b_S + u~/sigma) + e_{q/sigma}(D y + v~/sigma)
             - (||u~||^2 + ||v~||^2) / (2 sigma) + (c / (2 sigma)) ||y - y~||^2

over the involved coordinates I only (the complement is pinned at zero, so
its weighted entries enter the q-envelope as the constant tail v~_out).  The
gradient is A_S^T Prox_{sigma h*}(w1) + D^T Prox_{sigma q*}(w2) plus the
proximal term, with w1 = sigma (A_S y - b_S) + u~ and w2 = sigma D y + v~;
generalized Hessians sigma A^T U A + sigma D V D + (c/sigma) I are applied
matrix-free and the Newton systems go through a Jacobi-preconditioned CG
(or a dense Cholesky when I is small).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import splu

from .core import ConstraintSet, Norm, SsnConfig
from .prox import DiagLowRankJacobian, jac_hstar, jac_qstar, prox_hstar, prox_qstar

__all__ = [
    "InnerSubproblem",
    "make_subproblem",
    "EvalState",
    "evaluate",
    "phi_and_grad",
    "jacobians",
    "HessianOperator",
    "hess_apply",
    "newton_step",
    "line_search",
    "SsnStagnation",
    "SsnStats",
    "ssn_solve",
]


class SsnStagnation(Exception):
    """Armijo backtracking exhausted its budget; surfaced to the outer loop."""


@dataclass
class InnerSubproblem:
    """One frozen inner problem: working set, anchors, and scaling."""

    S: ConstraintSet
    involved: np.ndarray            # pair slots forming I (sorted)
    long_r: np.ndarray              # S columns re-indexed into positions of I
    a_r: np.ndarray
    b_r: np.ndarray
    b_S: np.ndarray
    weights_I: np.ndarray           # diagonal of D restricted to I
    sigma: float
    h_scale: float                  # c with H = c * I
    anchor_y: np.ndarray            # y~ over I
    anchor_u: np.ndarray            # u~ over S
    anchor_v_I: np.ndarray          # v~ over I
    anchor_v_out: np.ndarray        # v~ over the complement of I (constant tail)
    norm: Norm
    out_idx: np.ndarray             # complement pair slots, aligned with anchor_v_out
    anchor_sq: float = field(init=False)

    def __post_init__(self):
        self.anchor_sq = float(
            self.anchor_u @ self.anchor_u
            + self.anchor_v_I @ self.anchor_v_I
            + self.anchor_v_out @ self.anchor_v_out
        )

    @property
    def dim(self) -> int:
        return len(self.involved)


def make_subproblem(S: ConstraintSet, weights_full: np.ndarray, norm: Norm,
                    sigma: float, h_scale: float,
                    y_full: np.ndarray, u: np.ndarray, v_full: np.ndarray,
                    involved: np.ndarray | None = None) -> InnerSubproblem:
    """Reduce a working set to its involved coordinates and freeze anchors."""
    n1 = len(weights_full)
    if involved is None:
        involved = S.involved
    involved = np.asarray(involved, dtype=np.int64)
    out_mask = np.ones(n1, dtype=bool)
    out_mask[involved] = False
    out_idx = np.nonzero(out_mask)[0]
    return InnerSubproblem(
        S=S,
        involved=involved,
        long_r=np.searchsorted(involved, S.long_idx),
        a_r=np.searchsorted(involved, S.a_idx),
        b_r=np.searchsorted(involved, S.b_idx),
        b_S=S.b_vals,
        weights_I=weights_full[involved],
        sigma=float(sigma),
        h_scale=float(h_scale),
        anchor_y=y_full[involved].copy(),
        anchor_u=np.asarray(u, dtype=np.float64).copy(),
        anchor_v_I=v_full[involved].copy(),
        anchor_v_out=v_full[out_idx].copy(),
        norm=norm,
        out_idx=out_idx,
    )


@dataclass
class EvalState:
    """phi, gradient, and the prox points at one iterate (reused downstream)."""

    y: np.ndarray
    w1: np.ndarray        # sigma (A_S y - b_S) + u~
    z1: np.ndarray        # Prox_{sigma h*}(w1)
    w2: np.ndarray        # [sigma D_I y + v~_I ; v~_out]
    z2: np.ndarray        # Prox_{sigma q*}(w2)
    phi: float
    grad: np.ndarray
    grad_norm: float


def _apply_AS(y: np.ndarray, sub: InnerSubproblem) -> np.ndarray:
    if len(sub.b_S) == 0:
        return np.zeros(0)
    return y[sub.long_r] - y[sub.a_r] - y[sub.b_r]


def _apply_AST(u: np.ndarray, sub: InnerSubproblem) -> np.ndarray:
    if len(u) == 0:
        return np.zeros(sub.dim)
    out = np.bincount(sub.long_r, weights=u, minlength=sub.dim)
    out -= np.bincount(sub.a_r, weights=u, minlength=sub.dim)
    out -= np.bincount(sub.b_r, weights=u, minlength=sub.dim)
    return out


def evaluate(y: np.ndarray, sub: InnerSubproblem) -> EvalState:
    sigma = sub.sigma
    w1 = sigma * (_apply_AS(y, sub) - sub.b_S) + sub.anchor_u
    z1 = prox_hstar(w1)
    w2 = np.concatenate([sigma * sub.weights_I * y + sub.anchor_v_I, sub.anchor_v_out])
    z2 = prox_qstar(w2, sub.norm)
    dy = y - sub.anchor_y
    r2 = w2 - z2
    phi = (z1 @ z1 + w2 @ w2 - r2 @ r2 - sub.anchor_sq) / (2.0 * sigma) \
        + sub.h_scale * (dy @ dy) / (2.0 * sigma)
    grad = _apply_AST(z1, sub) + sub.weights_I * z2[: sub.dim] \
        + (sub.h_scale / sigma) * dy
    return EvalState(y=y, w1=w1, z1=z1, w2=w2, z2=z2, phi=float(phi),
                     grad=grad, grad_norm=float(np.linalg.norm(grad)))


def phi_and_grad(y: np.ndarray, sub: InnerSubproblem) -> tuple[float, np.ndarray]:
    """Value and gradient of phi at y (y over the involved coordinates)."""
    st = evaluate(y, sub)
    return st.phi, st.grad


def jacobians(state: EvalState, sub: InnerSubproblem) -> tuple[DiagLowRankJacobian, DiagLowRankJacobian]:
    """Clarke elements U at w1 and V at w2, V restricted to the I block.

    V keeps the global rank-one coefficient of the full-space projection
    Jacobian, so its I-principal block is exact even though the complement
    coordinates are pinned.
    """
    U = jac_hstar(state.w1)
    V_full = jac_qstar(state.w2, sub.norm)
    V = V_full.restrict(np.arange(sub.dim))
    return U, V


class HessianOperator:
    """Matrix-free action of sigma A^T U A + sigma D V D + (c/sigma) I."""

    def __init__(self, U: DiagLowRankJacobian, V: DiagLowRankJacobian,
                 sub: InnerSubproblem):
        self.sub = sub
        active = np.nonzero(U.diag > 0.0)[0]
        self.la = sub.long_r[active]
        self.aa = sub.a_r[active]
        self.ba = sub.b_r[active]
        self.V = V
        self.wg = None
        if V.lowrank_vec is not None:
            self.wg = sub.weights_I * V.lowrank_vec

    def apply(self, d: np.ndarray) -> np.ndarray:
        sub = self.sub
        sigma = sub.sigma
        out = (sub.h_scale / sigma) * d
        if self.la.size:
            t = d[self.la] - d[self.aa] - d[self.ba]
            h = np.bincount(self.la, weights=t, minlength=sub.dim)
            h -= np.bincount(self.aa, weights=t, minlength=sub.dim)
            h -= np.bincount(self.ba, weights=t, minlength=sub.dim)
            out += sigma * h
        wd = sub.weights_I * d
        out += sigma * sub.weights_I * (self.V.diag * wd)
        if self.wg is not None and self.V.lowrank_coef != 0.0:
            out -= sigma * self.V.lowrank_coef * self.wg * (self.wg @ d)
        return out

    def diagonal(self) -> np.ndarray:
        sub = self.sub
        sigma = sub.sigma
        diag = np.full(sub.dim, sub.h_scale / sigma)
        if self.la.size:
            counts = (np.bincount(self.la, minlength=sub.dim)
                      + np.bincount(self.aa, minlength=sub.dim)
                      + np.bincount(self.ba, minlength=sub.dim))
            diag += sigma * counts
        vdiag = self.V.diag.copy()
        if self.V.lowrank_vec is not None and self.V.lowrank_coef != 0.0:
            vdiag = vdiag - self.V.lowrank_coef * self.V.lowrank_vec**2
        diag += sigma * sub.weights_I**2 * vdiag
        return diag

    def dense(self) -> np.ndarray:
        sub = self.sub
        m = sub.dim
        sigma = sub.sigma
        H = np.zeros((m, m))
        if self.la.size:
            for p, q, s in self._block_terms():
                np.add.at(H, (p, q), s * sigma)
        H[np.diag_indices(m)] += sigma * sub.weights_I**2 * self.V.diag \
            + sub.h_scale / sigma
        if self.wg is not None and self.V.lowrank_coef != 0.0:
            H -= sigma * self.V.lowrank_coef * np.outer(self.wg, self.wg)
        return H

    def _block_terms(self):
        return (
            (self.la, self.la, 1.0), (self.aa, self.aa, 1.0), (self.ba, self.ba, 1.0),
            (self.la, self.aa, -1.0), (self.aa, self.la, -1.0),
            (self.la, self.ba, -1.0), (self.ba, self.la, -1.0),
            (self.aa, self.ba, 1.0), (self.ba, self.aa, 1.0),
        )

    def sparse_base(self) -> sparse.csc_matrix:
        """sigma A^T U A + sigma D diag(V) D + (c/sigma) I, without the rank-one."""
        sub = self.sub
        m = sub.dim
        sigma = sub.sigma
        rows, cols, vals = [], [], []
        if self.la.size:
            for p, q, s in self._block_terms():
                rows.append(p)
                cols.append(q)
                vals.append(np.full(p.size, s * sigma))
        diag_idx = np.arange(m, dtype=np.int64)
        rows.append(diag_idx)
        cols.append(diag_idx)
        vals.append(sigma * sub.weights_I**2 * self.V.diag + sub.h_scale / sigma)
        return sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, m)).tocsc()

    def solve_direct(self, rhs: np.ndarray) -> np.ndarray:
        """Factorize and solve H x = rhs (Sherman-Morrison for the rank-one).

        One step of iterative refinement keeps the residual near machine
        level even when sigma has stretched the spectrum badly.
        """
        lu = splu(self.sparse_base())
        if self.wg is not None and self.V.lowrank_coef != 0.0:
            beta = self.sub.sigma * self.V.lowrank_coef
            t = lu.solve(self.wg)
            scale = 1.0 - beta * (self.wg @ t)

            def solve1(b):
                x = lu.solve(b)
                return x + beta * t * (self.wg @ x) / scale
        else:
            solve1 = lu.solve
        x = solve1(rhs)
        x += solve1(rhs - self.apply(x))
        return x


def hess_apply(d: np.ndarray, U: DiagLowRankJacobian, V: DiagLowRankJacobian,
               sub: InnerSubproblem) -> np.ndarray:
    """One generalized-Hessian action (three matrix-free passes)."""
    return HessianOperator(U, V, sub).apply(d)


def newton_step(grad: np.ndarray, U: DiagLowRankJacobian, V: DiagLowRankJacobian,
                sub: InnerSubproblem, cfg: SsnConfig,
                prefer_direct: bool = False) -> tuple[np.ndarray, int, bool]:
    """Solve H dy = -grad to the residual target min(eta_bar, ||g||^(1+tau)).

    Small involved sets go through a dense Cholesky; otherwise a
    Jacobi-preconditioned CG runs first and a sparse factorization picks up
    the ill-conditioned cases CG cannot finish within its budget (sigma
    large makes the spectrum span c/sigma .. sigma*degree).  Returns
    (direction, cg_iterations, hit_target).
    """
    gnorm = float(np.linalg.norm(grad))
    if gnorm == 0.0:
        raise ValueError("newton_step requires a nonzero gradient")
    op = HessianOperator(U, V, sub)
    eta = min(cfg.eta_bar, gnorm ** (1.0 + cfg.tau))
    if sub.dim <= cfg.direct_solve_max_dim:
        delta = cho_solve(cho_factor(op.dense(), lower=True), -grad)
        return delta, 0, True

    it = 0
    if not prefer_direct:
        # PCG on H x = -grad, absolute residual stop
        x = np.zeros(sub.dim)
        r = -grad.copy()
        M = op.diagonal()
        z = r / M
        p = z.copy()
        rz = r @ z
        for it in range(1, cfg.cg_max_iters + 1):
            Hp = op.apply(p)
            alpha = rz / (p @ Hp)
            x += alpha * p
            r -= alpha * Hp
            if np.linalg.norm(r) <= eta:
                return x, it, True
            z = r / M
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new

    try:
        delta = op.solve_direct(-grad)
    except RuntimeError:
        return (x, it, False) if not prefer_direct else (-grad, it, False)
    # the 1e-7 * ||g|| floor is the attainable backward error; below it the
    # direction is still a (near-exact) Newton step worth taking
    ok = float(np.linalg.norm(op.apply(delta) + grad)) <= max(eta, 1e-7 * gnorm)
    return delta, it, ok


def line_search(y: np.ndarray, delta: np.ndarray, phi0: float, slope: float,
                sub: InnerSubproblem, cfg: SsnConfig) -> tuple[float, EvalState]:
    """Armijo backtracking: first m with phi(y + d^m delta) <= phi0 + mu d^m slope."""
    if slope >= 0.0:
        raise ValueError("line_search requires a descent direction")
    step = 1.0
    for _ in range(cfg.line_search_max + 1):
        trial = evaluate(y + step * delta, sub)
        if trial.phi <= phi0 + cfg.mu * step * slope:
            return step, trial
        step *= cfg.delta
    raise SsnStagnation(
        f"no Armijo step after {cfg.line_search_max} halvings (slope {slope:.3e})")


@dataclass
class SsnStats:
    grad_norms: list[float] = field(default_factory=list)
    cg_iters: list[int] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stagnated: bool = False
    final_state: EvalState | None = None


def ssn_solve(sub: InnerSubproblem, y0: np.ndarray, stop_grad_norm: float,
              cfg: SsnConfig | None = None) -> tuple[np.ndarray, SsnStats]:
    """Run the Newton loop until ||grad phi|| <= stop_grad_norm."""
    if stop_grad_norm <= 0:
        raise ValueError("stop_grad_norm must be positive")
    cfg = cfg or SsnConfig()
    stats = SsnStats()
    state = evaluate(np.asarray(y0, dtype=np.float64).copy(), sub)
    stats.grad_norms.append(state.grad_norm)
    prefer_direct = False
    while state.grad_norm > stop_grad_norm and stats.iterations < cfg.max_iters:
        U, V = jacobians(state, sub)
        delta, cg_its, ok = newton_step(state.grad, U, V, sub, cfg,
                                        prefer_direct=prefer_direct)
        if cg_its >= cfg.cg_max_iters:
            # CG hit its budget; stay on the factorization for this solve
            prefer_direct = True
        stats.cg_iters.append(cg_its)
        slope = float(state.grad @ delta)
        if not ok or slope >= 0.0:
            # CG budget exhausted (or numerics soured the direction):
            # fall back to steepest descent for this step
            delta = -state.grad
            slope = -state.grad_norm**2
        try:
            _, state = line_search(state.y, delta, state.phi, slope, sub, cfg)
        except SsnStagnation:
            stats.stagnated = True
            break
        stats.iterations += 1
        stats.grad_norms.append(state.grad_norm)
    stats.converged = state.grad_norm <= stop_grad_norm
    stats.final_state = state
    return state.y, stats
