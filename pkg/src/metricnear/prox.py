"""Proximal maps and generalized Jacobians for the dual projections.

h* is the indicator of the nonnegative orthant, so Prox_{sigma h*} is the
orthant projection for every sigma.  q* is the indicator of the dual-norm
unit ball C2: the sup-norm box for q = ||.||_1, the Euclidean ball for
q = ||.||_2, and the l1 ball for q = ||.||_inf (projected by sign-folding
onto the simplex).  Jacobian elements are diagonal plus at most one
symmetric rank-one correction; ties at kinks take the element that zeroes
the ambiguous direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Norm

__all__ = [
    "DiagLowRankJacobian",
    "prox_hstar",
    "jac_hstar",
    "prox_qstar",
    "project_simplex",
    "jac_qstar",
    "prox_q",
    "q_value",
    "dual_norm_value",
    "qstar_feasibility",
]


@dataclass
class DiagLowRankJacobian:
    """Action x -> diag * x - lowrank_coef * g * <g, x> (g may be absent)."""

    diag: np.ndarray
    lowrank_vec: np.ndarray | None = None
    lowrank_coef: float = 0.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self.diag * x
        if self.lowrank_vec is not None and self.lowrank_coef != 0.0:
            out = out - self.lowrank_coef * self.lowrank_vec * (self.lowrank_vec @ x)
        return out

    def diagonal(self) -> np.ndarray:
        d = self.diag.copy()
        if self.lowrank_vec is not None and self.lowrank_coef != 0.0:
            d = d - self.lowrank_coef * self.lowrank_vec**2
        return d

    def dense(self, dim: int | None = None) -> np.ndarray:
        dim = dim if dim is not None else len(self.diag)
        out = np.diag(self.diag * np.ones(dim))
        if self.lowrank_vec is not None and self.lowrank_coef != 0.0:
            out -= self.lowrank_coef * np.outer(self.lowrank_vec, self.lowrank_vec)
        return out

    def restrict(self, idx: np.ndarray) -> "DiagLowRankJacobian":
        """Principal submatrix on `idx` (rank-one coefficient is global)."""
        g = None if self.lowrank_vec is None else self.lowrank_vec[idx]
        return DiagLowRankJacobian(self.diag[idx], g, self.lowrank_coef)


def prox_hstar(w: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant (= Prox_{sigma h*} for any sigma)."""
    return np.maximum(w, 0.0)


def jac_hstar(w: np.ndarray) -> DiagLowRankJacobian:
    """0/1 diagonal element of the orthant-projection Clarke set (0 at ties)."""
    return DiagLowRankJacobian(diag=(w > 0.0).astype(np.float64))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {z >= 0, sum z = 1} by sort and threshold."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u * idx > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def prox_qstar(v: np.ndarray, norm: Norm) -> np.ndarray:
    """Euclidean projection onto the dual-norm unit ball C2."""
    v = np.asarray(v, dtype=np.float64)
    if norm == Norm.L1:
        return np.clip(v, -1.0, 1.0)
    if norm == Norm.L2:
        r = np.linalg.norm(v)
        return v if r <= 1.0 else v / r
    if norm == Norm.LINF:
        if np.abs(v).sum() <= 1.0:
            return v.copy()
        sign = np.sign(v)
        return sign * project_simplex(sign * v)
    raise ValueError(f"unsupported norm {norm}")


def jac_qstar(v: np.ndarray, norm: Norm) -> DiagLowRankJacobian:
    """A Clarke generalized Jacobian element of the ball projection at v."""
    v = np.asarray(v, dtype=np.float64)
    if norm == Norm.L1:
        return DiagLowRankJacobian(diag=(np.abs(v) < 1.0).astype(np.float64))
    if norm == Norm.L2:
        r = np.linalg.norm(v)
        if r <= 1.0:
            return DiagLowRankJacobian(diag=np.ones(v.size))
        return DiagLowRankJacobian(
            diag=np.full(v.size, 1.0 / r), lowrank_vec=v, lowrank_coef=1.0 / r**3)
    if norm == Norm.LINF:
        if np.abs(v).sum() <= 1.0:
            return DiagLowRankJacobian(diag=np.ones(v.size))
        sign = np.sign(v)
        s = (project_simplex(sign * v) > 0.0).astype(np.float64)
        nnz = s.sum()
        return DiagLowRankJacobian(diag=s, lowrank_vec=sign * s, lowrank_coef=1.0 / nnz)
    raise ValueError(f"unsupported norm {norm}")


def prox_q(x: np.ndarray, norm: Norm, sigma: float = 1.0) -> np.ndarray:
    """Prox_{q/sigma}(x), computed from direct norm-prox formulas.

    Independent of :func:`prox_qstar`: the Moreau identity
    Prox_{q/sigma}(x) = x - Pi_{C2}(sigma x)/sigma ties the two routes
    together and is what the tests check.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    lam = 1.0 / sigma
    if norm == Norm.L1:
        return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)
    if norm == Norm.L2:
        r = np.linalg.norm(x)
        if r <= lam:
            return np.zeros_like(x)
        return x * (1.0 - lam / r)
    if norm == Norm.LINF:
        a = np.abs(x)
        if a.sum() <= lam:
            return np.zeros_like(x)
        # clip |x| at the level theta with sum of clipped mass equal to lam
        u = np.sort(a)[::-1]
        css = np.cumsum(u)
        idx = np.arange(1, x.size + 1)
        rho = np.nonzero(u * idx > css - lam)[0][-1]
        theta = (css[rho] - lam) / (rho + 1.0)
        return np.sign(x) * np.minimum(a, theta)
    raise ValueError(f"unsupported norm {norm}")


def q_value(x: np.ndarray, norm: Norm) -> float:
    """The norm value q(x)."""
    x = np.asarray(x, dtype=np.float64)
    if norm == Norm.L1:
        return float(np.abs(x).sum())
    if norm == Norm.L2:
        return float(np.linalg.norm(x))
    if norm == Norm.LINF:
        return float(np.abs(x).max()) if x.size else 0.0
    raise ValueError(f"unsupported norm {norm}")


def dual_norm_value(v: np.ndarray, norm: Norm) -> float:
    """The dual norm of v (the gauge of the ball C2)."""
    v = np.asarray(v, dtype=np.float64)
    if norm == Norm.L1:
        return float(np.abs(v).max()) if v.size else 0.0
    if norm == Norm.L2:
        return float(np.linalg.norm(v))
    if norm == Norm.LINF:
        return float(np.abs(v).sum())
    raise ValueError(f"unsupported norm {norm}")


def qstar_feasibility(v: np.ndarray, norm: Norm) -> float:
    """Dual-ball violation max(0, ||v||_dual - 1), for diagnostics."""
    return max(0.0, dual_norm_value(v, norm) - 1.0)
