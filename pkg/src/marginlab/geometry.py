"""Max-margin certificates, separability splits and restricted optima.

These are the reference answers that training runs get compared against.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, DomainError, LossKind, WeightVector
from .simplex import LPStatus, linprog_simplex

log = logging.getLogger(__name__)

HULL_NORM_TOL = 1e-7
LP_SEPARABLE_TOL = 1e-8


class LPSolverError(RuntimeError):
    def __init__(self, index: int, status: LPStatus):
        super().__init__(f"separability LP for sample {index} ended with status {status.value}")
        self.index = index
        self.status = status


class SingularHessianError(ArithmeticError):
    def __init__(self, condition: float):
        super().__init__(f"restricted Hessian is numerically singular (condition ~ {condition:.3g})")
        self.condition = condition


@dataclass(frozen=True)
class MarginCertificate:
    """Max-margin direction with its dual weights.

    ``duality_gap`` is on the margin scale: the true max margin lies in
    [gamma_star - duality_gap, gamma_star].
    """

    theta_star: Optional[np.ndarray]
    gamma_star: float
    p_star: np.ndarray
    duality_gap: float
    separable: bool
    iterations: int
    converged: bool

    def as_record(self) -> dict:
        return {
            "separable": self.separable,
            "gamma_star": self.gamma_star,
            "theta_star": None if self.theta_star is None else list(self.theta_star),
            "p_star": list(self.p_star),
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class SeparabilitySplit:
    sep_indices: tuple
    nonsep_indices: tuple
    witness_theta: np.ndarray
    gamma_sep: Optional[float]
    lp_optima: np.ndarray
    near_threshold: tuple = ()

    def as_record(self) -> dict:
        return {
            "sep_indices": list(self.sep_indices),
            "nonsep_indices": list(self.nonsep_indices),
            "witness_theta": list(self.witness_theta),
            "gamma_sep": self.gamma_sep,
            "near_threshold": list(self.near_threshold),
        }


@dataclass(frozen=True)
class RestrictedOptimum:
    theta_tilde: np.ndarray
    strong_convexity_omega: float
    optim_residual: float
    basis: np.ndarray
    iterations: int = 0

    def as_record(self) -> dict:
        return {
            "theta_tilde": list(self.theta_tilde),
            "strong_convexity_omega": self.strong_convexity_omega,
            "optim_residual": self.optim_residual,
            "span_rank": self.basis.shape[1],
        }


def min_norm_point(Z: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000,
                   zero_tol: float = HULL_NORM_TOL):
    """Minimum-norm point of conv{rows of Z} by Frank-Wolfe with away steps.

    Returns (p, v, gap, iterations, converged) with v = Z.T @ p and gap the
    Frank-Wolfe gap divided by ||v||.  Stops once that gap is <= tol or
    ||v|| <= zero_tol (origin reached).
    """
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    sq = np.einsum("ij,ij->i", Z, Z)
    p = np.zeros(n)
    start = int(np.argmin(sq))
    p[start] = 1.0
    v = Z[start].copy()
    gap = math.inf
    for it in range(1, max_iter + 1):
        if it % 1000 == 0:
            v = Z.T @ p
        dots = Z @ v
        vv = float(v @ v)
        nv = math.sqrt(vv)
        s = int(np.argmin(dots))
        raw_gap = max(vv - float(dots[s]), 0.0)
        if nv <= zero_tol:
            return p, v, raw_gap / max(nv, 1e-300), it, True
        gap = raw_gap / nv
        if gap <= tol:
            return p, v, gap, it, True
        active = np.flatnonzero(p > 0)
        a = int(active[np.argmax(dots[active])])
        away_gap = float(dots[a]) - vv
        if raw_gap >= away_gap or p[a] >= 1.0:
            d = Z[s] - v
            step_max = 1.0
            fw = True
        else:
            d = v - Z[a]
            step_max = p[a] / (1.0 - p[a])
            fw = False
        dd = float(d @ d)
        if dd == 0.0:
            return p, v, gap, it, False
        step = min(step_max, max(0.0, -float(v @ d) / dd))
        if fw:
            p *= 1.0 - step
            p[s] += step
            if step >= 1.0:
                p[:] = 0.0
                p[s] = 1.0
        else:
            p *= 1.0 + step
            p[a] -= step
            if step >= step_max:
                p[a] = 0.0
        v = v + step * d
    return p, Z.T @ p, gap, max_iter, False


def max_margin_linear(data: Dataset, tol: float = 1e-8, max_iter: int = 100_000) -> MarginCertificate:
    """Hard-margin linear separator through the origin, via its convex-hull dual.

    gamma* = min_{p in simplex} || sum_i p_i y_i x_i || and theta* is that
    hull point normalized.  A hull norm at or below 1e-7 means the data is
    declared non-separable and theta_star is None.
    """
    Z = data.signed_features
    p, v, gap, iters, converged = min_norm_point(Z, tol=tol, max_iter=max_iter)
    nv = float(np.linalg.norm(v))
    if nv <= HULL_NORM_TOL:
        return MarginCertificate(None, nv, p, gap, False, iters, converged)
    if not converged:
        log.warning("min-norm point stopped after %d iterations with gap %.3g", iters, gap)
    return MarginCertificate(v / nv, nv, p, gap, True, iters, converged)


def _separability_lp(Z: np.ndarray, i: int):
    """max z_i.theta  s.t.  Z theta >= 0, |theta_k| <= 1   with theta = a - b, a, b >= 0."""
    n, d = Z.shape
    c = np.concatenate([Z[i], -Z[i]])
    A = np.vstack([
        np.hstack([-Z, Z]),
        np.hstack([np.eye(d), np.eye(d)]),
    ])
    b = np.concatenate([np.zeros(n), np.ones(d)])
    res = linprog_simplex(c, A, b, maximize=True)
    if not res.success:
        raise LPSolverError(i, res.status)
    theta = res.x[:d] - res.x[d:]
    return float(Z[i] @ theta), theta


def maximal_separable_subset(data: Dataset) -> SeparabilitySplit:
    """Greedy split into the maximal separable subset and its complement.

    Sample i is separable iff some theta has y_i theta.x_i > 0 while being
    nonnegative on every sample; the witness is the sum of those thetas.
    """
    Z = data.signed_features
    sep, nonsep, near = [], [], []
    optima = np.zeros(data.n)
    witness = np.zeros(data.d)
    for i in range(data.n):
        opt, theta_i = _separability_lp(Z, i)
        optima[i] = opt
        if 0.1 * LP_SEPARABLE_TOL < opt < 10 * LP_SEPARABLE_TOL:
            near.append(i)
            log.warning("sample %d: separability LP optimum %.3g is close to the threshold", i, opt)
        if opt > LP_SEPARABLE_TOL:
            sep.append(i)
            witness += theta_i
        else:
            nonsep.append(i)
    gamma_sep = None
    if sep:
        cert = max_margin_linear(data.subset(sep))
        gamma_sep = cert.gamma_star if cert.separable else None
    return SeparabilitySplit(tuple(sep), tuple(nonsep), witness, gamma_sep, optima, tuple(near))


def span_basis(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the row span of X.

    Modified Gram-Schmidt with one re-orthogonalization pass per vector.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    scale = max(1.0, float(np.max(np.linalg.norm(X, axis=1), initial=0.0)))
    basis = []
    for x in X:
        v = x.copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv > tol * scale:
            basis.append(v / nv)
    if not basis:
        return np.zeros((X.shape[1], 0))
    return np.column_stack(basis)


def project_span(theta, basis: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    B = np.asarray(basis, dtype=float)
    if B.ndim != 2 or B.shape[0] != theta.shape[0]:
        raise DomainError("basis rows must match theta length")
    if np.max(np.abs(B.T @ B - np.eye(B.shape[1])), initial=0.0) > 1e-9:
        raise DomainError("basis columns are not orthonormal")
    return B @ (B.T @ theta)


def nonsep_optimum(data: Dataset, w: WeightVector, loss: LossKind = LossKind.EXPONENTIAL, *,
                   n_total: Optional[int] = None, start=None, tol: float = 1e-10,
                   max_iter: int = 500) -> RestrictedOptimum:
    """Minimize the weighted risk of ``data`` over the span of its features.

    ``data`` should already be restricted to the non-separable samples.  The
    risk is normalized by ``n_total`` (default: the subset size) so that the
    reported curvature matches the full-data risk.  Damped Newton in span
    coordinates; omega is the smallest Hessian eigenvalue at the solution.
    """
    if data.n == 0:
        raise DomainError("non-separable part is empty")
    if len(w) != data.n:
        raise DomainError("weights must match the restricted data")
    B = span_basis(data.features)
    k = B.shape[1]
    if k == 0:
        # all-zero features: the risk is constant
        return RestrictedOptimum(np.zeros(data.d), 0.0, 0.0, B, 0)
    A = data.signed_features @ B  # n x k
    log_w = w.log_w - math.log(n_total or data.n)

    def risk(c):
        return float(np.exp(log_w + loss.log_loss(A @ c)).sum())

    def grad_hess(c):
        u = A @ c
        g = -A.T @ np.exp(log_w + loss.log_neg_derivative(u))
        h2 = np.exp(log_w + loss.log_second_derivative(u))
        return g, (A * h2[:, None]).T @ A

    c = np.zeros(k) if start is None else B.T @ np.asarray(start, dtype=float)
    f = risk(c)
    for it in range(1, max_iter + 1):
        g, H = grad_hess(c)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 1e-14 * max(eig[-1], 1e-300):
            raise SingularHessianError(eig[-1] / max(eig[0], 1e-300))
        step = -np.linalg.solve(H, g)
        decrement = float(-g @ step)
        t = 1.0
        while True:
            c_new = c + t * step
            f_new = risk(c_new)
            if f_new <= f - 0.25 * t * decrement or t < 1e-12:
                break
            t *= 0.5
        if f_new > f and t < 1e-12:
            # rounding floor reached; accept the current point
            break
        c, f = c_new, f_new
    g, H = grad_hess(c)
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 1e-14 * max(eig[-1], 1e-300):
        raise SingularHessianError(eig[-1] / max(eig[0], 1e-300))
    return RestrictedOptimum(B @ c, float(eig[0]), float(np.linalg.norm(g)), B, it)
